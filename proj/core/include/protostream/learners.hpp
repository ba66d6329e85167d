#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "protostream/context.hpp"
#include "protostream/memory.hpp"
#include "protostream/params.hpp"
#include "protostream/sampler.hpp"
#include "protostream/tape.hpp"

namespace protostream {

// Which pieces of the contextual pathway are active. Turning everything off
// reduces the prototype learner to plain online averaging with learned
// scalar thresholds.
struct AblationFlags {
  bool context_bias = true;      // additive context vector on the embedding
  bool predicted_control = true; // thresholds/temperatures from the head
  bool metric_scaling = true;    // per-dimension metric vector
};

struct LearnerConfig {
  std::string name = "cpm";
  int input_dim = 16;
  int embedding_dim = 32;
  std::vector<int> encoder_hidden = {32};
  bool identity_encoder = false;
  int lstm_hidden = 64;
  int max_slots = 58;
  int cluster_capacity = 256;
  AblationFlags ablation;
  bool gated_averaging = false;
  bool cosine = false;

  void validate() const;
};

// Plain values extracted from the forward pass, for metrics.
struct StepPrediction {
  double novelty = 1.0;          // û_r
  int predicted_class = -1;      // argmax over currently-known classes
  std::vector<int> classes;
  std::vector<double> class_scores;
};

struct StepResult {
  Tape::NodeId novelty = kNoNode;     // scalar in (0,1]
  Tape::NodeId log_scores = kNoNode;  // log distribution over `classes`
  std::vector<int> classes;
  Tape::NodeId embedding = kNoNode;
  StepPrediction pred;
  // Stored units after the update: occupied slots / exemplars / clusters.
  int store_size = 0;
  // Control diagnostics for training logs; NaN when not applicable.
  double beta_r = NAN, gamma_r = NAN, beta_w = NAN, gamma_w = NAN;
};

struct StepOptions {
  bool training = false;
  // Ramp gate for semi-supervised writes; evaluation always applies them.
  bool apply_unlabeled_write = true;
};

// The uniform online protocol: at every step the learner predicts from the
// current input BEFORE consuming its revealed label, then updates state.
class OnlineLearner {
 public:
  virtual ~OnlineLearner() = default;
  virtual const std::string& name() const = 0;
  virtual ParameterStore& params() = 0;
  virtual const ParameterStore& params() const = 0;
  // Stages parameters onto the tape and resets all per-sequence state.
  virtual void begin_sequence(Tape& tape) = 0;
  virtual StepResult step(Tape& tape, const TimeStep& ts,
                          const StepOptions& opts) = 0;
};

std::unique_ptr<OnlineLearner> make_learner(const LearnerConfig& config,
                                            uint64_t master_seed);

const std::vector<std::string>& learner_names();

}  // namespace protostream
