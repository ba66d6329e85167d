#pragma once

#include <string>
#include <vector>

#include "protostream/learners.hpp"
#include "protostream/sampler.hpp"
#include "protostream/training.hpp"
#include "protostream/version.hpp"

namespace protostream {

struct EvalConfig {
  int sequences = 500;
  int max_shots = 6;
  bool trapezoidal_ap = false;

  void validate() const;
};

// One experiment, fully resolved. Unknown keys anywhere in the document are
// rejected with a field path; every output artifact carries hash() so runs
// can be traced back to their exact configuration.
struct ExperimentConfig {
  uint64_t seed = 12345;
  std::string out_dir = "runs/exp";
  int workers = 1;
  SamplerConfig sampler;
  LearnerConfig learner;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
  uint64_t hash() const;
  std::string to_json_string(int indent = 2) const;

  static ExperimentConfig from_json_string(const std::string& text);
  // Reads the file, then applies overrides: first any
  // PROTOSTREAM_<section>__<key>=value environment variables, then the
  // explicit dot-path overrides ("train.steps=100") in order.
  static ExperimentConfig load(const std::string& path,
                               const std::vector<std::string>& overrides = {},
                               bool env_overrides = true);
};

}  // namespace protostream
