#include "protostream/params.hpp"

#include <cmath>

#include "protostream/errors.hpp"

namespace protostream {

void ParameterStore::add(const std::string& name, Tensor init,
                         bool trainable) {
  if (has(name)) throw ContractViolation("parameter already exists: " + name);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(init), trainable});
}

Tensor& ParameterStore::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter: " + name);
  return entries_[it->second].value;
}

const Tensor& ParameterStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter: " + name);
  return entries_[it->second].value;
}

std::unordered_map<std::string, Tape::NodeId> ParameterStore::stage(
    Tape& tape) const {
  std::unordered_map<std::string, Tape::NodeId> staged;
  staged.reserve(entries_.size());
  for (const Entry& e : entries_)
    staged[e.name] = tape.leaf(e.value, e.trainable, e.name);
  return staged;
}

void ParameterStore::accumulate_grads(
    Tape& tape, const std::unordered_map<std::string, Tape::NodeId>& staged,
    GradMap& out) const {
  for (const Entry& e : entries_) {
    if (!e.trainable) continue;
    const Tensor& g = tape.grad(staged.at(e.name));
    auto [it, fresh] = out.try_emplace(e.name, Tensor::zeros(e.value.shape));
    Tensor& acc = it->second;
    for (int i = 0; i < acc.numel(); ++i) acc.v[i] += g.v[i];
  }
}

GradMap ParameterStore::zero_grads() const {
  GradMap out;
  for (const Entry& e : entries_) {
    if (e.trainable) out.emplace(e.name, Tensor::zeros(e.value.shape));
  }
  return out;
}

Tensor uniform_init(std::vector<int> shape, int fan_in, RngStream& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(fan_in));
  for (Real& x : t.v)
    x = static_cast<Real>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

}  // namespace protostream
