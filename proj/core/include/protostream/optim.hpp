#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "protostream/params.hpp"
#include "protostream/tensor.hpp"

namespace protostream {

// Scales all gradients by cap/norm when the global L2 norm exceeds cap.
// Returns the pre-clip global norm. Never increases the norm; idempotent.
double clip_global_norm(GradMap& grads, double cap);

double global_norm(const GradMap& grads);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment accumulators are created lazily per
// parameter and mirror its shape; the step counter is shared.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  // Applies one update with the given learning rate (schedules pass the
  // decayed rate). A non-finite gradient aborts the whole step and names
  // the offending parameter.
  void step(ParameterStore& params, const GradMap& grads, double lr);
  void step(ParameterStore& params, const GradMap& grads) {
    step(params, grads, config_.learning_rate);
  }

  int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

  // Checkpoint access.
  struct Moments {
    Tensor m;
    Tensor v;
  };
  const std::map<std::string, Moments>& state() const { return state_; }
  void restore(std::map<std::string, Moments> state, int64_t step_count) {
    state_ = std::move(state);
    step_count_ = step_count;
  }

 private:
  AdamConfig config_;
  std::map<std::string, Moments> state_;
  int64_t step_count_ = 0;
};

}  // namespace protostream
