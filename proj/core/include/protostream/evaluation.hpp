#pragma once

#include <optional>
#include <string>
#include <vector>

#include "protostream/learners.hpp"
#include "protostream/sampler.hpp"
#include "protostream/version.hpp"

namespace protostream {

// One evaluated step. known_score ranks the known/unknown decision; the
// shot and interval fields are derived purely from the sequence's past
// (labeled occurrences only).
struct PredictionRecord {
  int sequence_id = 0;
  int t = 0;
  double known_score = 0;  // 1 - û_r
  int predicted_class = -1;
  int true_class = 0;
  bool novel = true;
  bool labeled = false;
  int shots_seen = 0;          // labeled occurrences of true_class before t
  int steps_since_label = -1;  // -1 when the label was never seen
};

// Average precision over the pooled known/unknown ranking. A rank-N entry
// counts as a hit iff it is truly known AND correctly classified. Ties in
// the score are broken by (sequence_id, t). Throws when there are no known
// instances. The default integral is the right-Riemann sum over recall
// increments; `trapezoidal` switches to the trapezoid rule for sensitivity
// checks.
double average_precision(std::vector<PredictionRecord> records,
                         bool trapezoidal = false);

struct NShotAccuracy {
  int shots = 0;
  double mean = 0;
  double se = 0;
  size_t sequences = 0;
  bool single_sequence = false;
};

// Accuracy over records whose true class has been seen labeled exactly
// `shots` times, averaged per sequence, then mean/standard error across
// sequences. Absent (nullopt) when no records qualify.
std::optional<NShotAccuracy> n_shot_accuracy(
    const std::vector<PredictionRecord>& records, int shots);

struct ForgettingBin {
  int lo = 0;
  int hi = 0;
};

const std::vector<ForgettingBin>& forgetting_bins();

struct ForgettingCell {
  double accuracy = 0;
  size_t count = 0;  // 0 marks an absent cell
};

struct ForgettingTable {
  std::vector<int> shot_counts;  // {1, 3}
  // cells[shot_index][bin_index]
  std::vector<std::vector<ForgettingCell>> cells;
};

ForgettingTable forgetting_table(const std::vector<PredictionRecord>& records);

struct CurvePoint {
  int t = 0;
  double accuracy = 0;
  size_t count = 0;
};

// Accuracy at each timestep over non-novel records.
std::vector<CurvePoint> per_timestep_accuracy(
    const std::vector<PredictionRecord>& records);

struct MetricsReport {
  double ap = 0;
  std::vector<NShotAccuracy> n_shot;
  ForgettingTable forgetting;
  std::vector<CurvePoint> curve;
  size_t n_records = 0;
  size_t n_sequences = 0;
};

MetricsReport compute_report(const std::vector<PredictionRecord>& records,
                             int max_shots = 6, bool trapezoidal = false);

// Deterministic rollout of one sequence; memory reset at the start.
std::vector<PredictionRecord> rollout_records(OnlineLearner& learner,
                                              const Sequence& seq,
                                              int sequence_id);

struct EvalOptions {
  int workers = 1;
};

// Rolls every sequence over a frozen copy of `trained` and pools the
// records. Worker count never changes the result (ordered reduction).
std::vector<PredictionRecord> evaluate_learner(
    const LearnerConfig& config, uint64_t learner_seed,
    const ParameterStore& trained, const std::vector<Sequence>& sequences,
    const EvalOptions& options = {});

// ---------------------------------------------------------------------------
// Artifact IO. Every file embeds schema version, config hash and seed.

struct ArtifactMeta {
  uint32_t schema_version = kSchemaVersion;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

void write_records_jsonl(const std::string& path,
                         const std::vector<PredictionRecord>& records,
                         const ArtifactMeta& meta);
std::vector<PredictionRecord> read_records_jsonl(const std::string& path);

// Writes metrics.csv, forgetting.csv, curve.csv and curve.svg into out_dir.
void write_report_files(const std::string& out_dir, const MetricsReport& report,
                        const ArtifactMeta& meta);

std::string format_double(double x);

}  // namespace protostream
