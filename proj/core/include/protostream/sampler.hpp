#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protostream/rng.hpp"
#include "protostream/tensor.hpp"

namespace protostream {

inline constexpr int kUnlabeled = -1;

// Episode stream generator. Each sequence walks through a small set of
// hidden environments (Markov switching), draws classes inside each
// environment from a two-parameter Chinese restaurant process with a hard
// per-class appearance cap, optionally masks labels for the semi-supervised
// setting, and synthesizes feature vectors whose correct reading depends on
// the environment.
struct SamplerConfig {
  int sequence_length = 150;
  int environments = 5;
  double switch_probability = 0.2;
  double crp_alpha = 0.2;
  double crp_theta = 1.0;
  int max_appearances = 6;
  double label_ratio = 0.3;
  bool supervised = false;

  int feature_dim = 16;
  int context_cue_dim = 8;
  bool spatial_cue = false;
  double feature_noise = 0.1;
  double cue_noise = 0.1;
  // Fraction of classes whose signal vector is copied from a class living in
  // a different environment. Those classes are indistinguishable from their
  // donor without context.
  double ambiguity = 0.5;

  bool shuffle = false;

  void validate() const;
  uint64_t hash() const;
  int input_dim() const {
    return feature_dim + (spatial_cue ? context_cue_dim : 0);
  }
};

struct TimeStep {
  std::vector<Real> x;
  int y = 0;                 // true class (sequence-local id)
  int y_tilde = kUnlabeled;  // revealed label, kUnlabeled if masked
  int env = 0;               // hidden environment id, evaluation-only
  bool novel = true;         // no earlier labeled occurrence of y
};

struct Sequence {
  std::vector<TimeStep> steps;
  int n_classes = 0;
  std::vector<int> class_env;  // environment that owns each class
  uint64_t seed = 0;           // per-sequence derived seed
  uint64_t config_hash = 0;

  // Generator-only fields (not serialized): the ground-truth geometry the
  // toy features were built from. Handy for oracle checks.
  std::vector<std::vector<Real>> class_vectors;
  std::vector<std::vector<Real>> env_anchors;

  int length() const { return static_cast<int>(steps.size()); }
};

// Markov switching schedule: with probability switch_probability the
// environment changes to a uniformly chosen different one.
std::vector<int> sample_environment_schedule(const SamplerConfig& config,
                                             RngStream& rng);

// One CRP draw given per-class instance counts within an environment.
// Returns -1 for NEW, otherwise an index into `counts`. Classes at the
// appearance cap are excluded by resampling; after a bounded number of
// retries the draw falls back to NEW.
int crp_sample_class(std::span<const int> counts, const SamplerConfig& config,
                     RngStream& rng);

// Per-class label ratio: (1 - ratio) * exp(-0.5 (m_k - 1)) + ratio.
double class_label_ratio(int occurrences, double label_ratio);

// Masks labels independently per occurrence with the class-specific ratio;
// classes left with zero labels get one uniformly chosen occurrence flipped
// back to labeled.
void mask_labels(Sequence& seq, double label_ratio, RngStream& rng);

// Recomputes novelty flags from scratch (novel = no earlier labeled
// occurrence of the same class).
void recompute_novelty(Sequence& seq);

// Fills per-step features from class vectors + noise, appending a noisy
// environment anchor when the spatial cue is enabled.
void generate_toy_features(Sequence& seq, const SamplerConfig& config,
                           RngStream& rng);

// Uniform permutation of the steps; novelty flags are recomputed.
void shuffle_sequence(Sequence& seq, RngStream& rng);

// Full pipeline, deterministic in (config, master_seed, split, index).
Sequence generate_sequence(const SamplerConfig& config, uint64_t master_seed,
                           std::string_view split, uint64_t index);

std::vector<Sequence> generate_sequences(const SamplerConfig& config,
                                         uint64_t master_seed,
                                         std::string_view split, size_t count,
                                         int workers = 1);

// Throws InvariantViolation naming the first violated invariant.
void validate_sequence(const Sequence& seq, int max_appearances = 0);

// JSON-lines persistence, one sequence per line. Reading validates every
// invariant and reports violations with 1-based line numbers.
void write_sequences_jsonl(const std::string& path,
                           const std::vector<Sequence>& seqs);
std::vector<Sequence> read_sequences_jsonl(const std::string& path);

struct SequenceStats {
  size_t n_sequences = 0;
  size_t n_runs = 0;
  // Mean over sequences of the per-sequence mean run length (expectation
  // (1-(1-p)^T)/p, i.e. 1/p up to an exponentially small truncation term),
  // with its standard error across sequences.
  double mean_run_length = 0;
  double run_length_se = 0;
  std::vector<size_t> run_length_histogram;  // index = run length
  std::vector<double> class_growth;          // mean distinct classes seen by t
  double labeled_fraction = 0;
};

SequenceStats compute_stats(const std::vector<Sequence>& seqs);

}  // namespace protostream
