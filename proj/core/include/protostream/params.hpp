#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "protostream/rng.hpp"
#include "protostream/tape.hpp"
#include "protostream/tensor.hpp"

namespace protostream {

// Gradients keyed by parameter name. std::map keeps iteration order
// deterministic, which keeps reductions and clipping bit-reproducible.
using GradMap = std::map<std::string, Tensor>;

// Named model parameters in registration order. A learner owns one store;
// every rollout stages the current values onto a fresh tape as trainable
// leaves.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor init, bool trainable = true);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  // Stages every parameter onto the tape; returns name -> leaf id.
  std::unordered_map<std::string, Tape::NodeId> stage(Tape& tape) const;

  // Accumulates the tape's gradients for staged trainable leaves into `out`
  // (missing keys are created as zeros first).
  void accumulate_grads(
      Tape& tape,
      const std::unordered_map<std::string, Tape::NodeId>& staged,
      GradMap& out) const;

  GradMap zero_grads() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// Fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_init(std::vector<int> shape, int fan_in, RngStream& rng);

}  // namespace protostream
