#pragma once

#include <optional>
#include <string>
#include <vector>

#include "protostream/learners.hpp"
#include "protostream/optim.hpp"
#include "protostream/sampler.hpp"
#include "protostream/tape.hpp"

namespace protostream {

struct TrainConfig {
  int steps = 6000;
  int batch_size = 8;
  double learning_rate = 2e-3;
  std::vector<int> decay_milestones = {3000, 4500};
  double decay_factor = 0.1;
  double lambda_bce = 1.0;
  double clip_norm = 5.0;
  // Semi-supervised write ramp: probability min(1, increment*floor(s/interval)).
  double ramp_increment = 0.2;
  int ramp_interval = 2000;
  int val_interval = 500;
  int val_sequences = 50;
  bool masked_loss = true;

  void validate() const;
};

double ramp_probability(int64_t step, double increment, int interval);

struct LossBreakdown {
  double bce = 0;
  double ce = 0;
  double total = 0;
  int counted_steps = 0;
  Tape::NodeId node = kNoNode;
};

// Sequence loss: (1/T) sum_t [ lambda*BCE(u_t, û_t) + CE on known steps ].
// In masked mode (the default) both terms are restricted to labeled steps;
// unmasked mode sums every step. û is clamped to [1e-7, 1-1e-7].
LossBreakdown sequence_loss(Tape& tape, const std::vector<StepResult>& steps,
                            const Sequence& seq, double lambda_bce,
                            bool masked);

struct RolloutOptions {
  bool training = false;
  double lambda_bce = 1.0;
  bool masked_loss = true;
  // Probability that an unlabeled step's write is applied during training;
  // evaluation rollouts always apply writes.
  double unlabeled_write_prob = 1.0;
  RngStream* ramp_rng = nullptr;
};

struct RolloutOutput {
  LossBreakdown loss;
  std::vector<StepResult> steps;
};

RolloutOutput rollout_sequence(Tape& tape, OnlineLearner& learner,
                               const Sequence& seq,
                               const RolloutOptions& options);

struct TrainOptions {
  std::string out_dir;
  std::string resume_checkpoint;  // empty = fresh run
  int workers = 1;
  uint64_t config_hash = 0;
};

struct TrainSummary {
  int64_t steps_done = 0;
  double best_val_ap = 0;
  int64_t best_step = -1;
  double final_loss = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string log_path;
};

// Trains by backprop through time over freshly sampled sequences: per step,
// sample a batch, roll each sequence with the memory reset, take the mean
// loss, clip the global gradient norm, apply Adam, and periodically score
// validation AP, retaining the best checkpoint. Resuming continues the step
// counter, optimizer state and log.
TrainSummary train(const LearnerConfig& learner_config,
                   const TrainConfig& train_config,
                   const SamplerConfig& train_sampler,
                   const SamplerConfig& val_sampler, uint64_t master_seed,
                   const TrainOptions& options);

const char* train_log_header();

}  // namespace protostream
