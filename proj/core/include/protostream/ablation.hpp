#pragma once

#include <string>
#include <vector>

#include "protostream/config.hpp"
#include "protostream/evaluation.hpp"

namespace protostream {

// One cell of the 2x2 context grid for one learner: spatial cue on/off x
// temporal order kept/shuffled, trained and evaluated per seed.
struct AblationCell {
  std::string learner;
  bool spatial_cue = false;
  bool shuffled = false;
  std::vector<double> seed_aps;
  double mean_ap = 0;
  double se_ap = 0;
};

struct AblationResult {
  std::vector<AblationCell> cells;
  int seeds = 0;

  const AblationCell& cell(const std::string& learner, bool cue,
                           bool shuffled) const;
};

// One train+evaluate run, cached on disk: if run_dir already holds a
// completed run for the same config hash and master seed, it is reused.
// Eval records are exported next to the checkpoints.
struct SingleRun {
  double ap = 0;
  std::string run_dir;
  std::string checkpoint;
  std::string records_path;
  bool reused = false;
};

SingleRun train_and_evaluate(const ExperimentConfig& cfg, uint64_t master_seed,
                             const std::string& run_dir);

// Trains and evaluates the contextual learner and the prototype baseline on
// the four {cue} x {order} conditions, multi-seed. Per-seed run artifacts go
// under out_dir/<learner>_<cue>_<order>/seed<i>/ and completed runs found
// there are reused.
AblationResult run_context_ablation(const ExperimentConfig& base, int seeds,
                                    const std::string& out_dir);

void write_ablation_csv(const std::string& path, const AblationResult& result,
                        const ArtifactMeta& meta);

std::string format_ablation_table(const AblationResult& result);

}  // namespace protostream
