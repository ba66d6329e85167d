#include "protostream/memory.hpp"

#include <cmath>

#include "protostream/errors.hpp"

namespace protostream {

void add_memory_params(ParameterStore& store, const std::string& prefix,
                       const MemoryOptions& options, int feature_dim,
                       RngStream& rng) {
  if (options.mode == DissimilarityMode::kCosine)
    store.add(prefix + "/cos_scale", Tensor::scalar(Real(10)));
  if (options.gated_averaging) {
    store.add(prefix + "/gau_w",
              uniform_init({1, 2 * feature_dim}, 2 * feature_dim, rng));
    store.add(prefix + "/gau_b", Tensor::scalar(Real(0)));
  }
}

Tape::NodeId dissimilarity(Tape& tape, Tape::NodeId h, Tape::NodeId p,
                           Tape::NodeId metric, DissimilarityMode mode,
                           Tape::NodeId cos_scale, bool* flagged) {
  if (mode == DissimilarityMode::kSquaredEuclidean) {
    if (metric == kNoNode) return tape.sq_diff_sum(h, p);
    const Tape::NodeId diff = tape.sub(h, p);
    return tape.dot(metric, tape.mul(diff, diff));
  }
  if (cos_scale == kNoNode)
    throw ContractViolation("cosine dissimilarity requires a scale node");
  const Tape::NodeId q = metric == kNoNode ? h : tape.mul(h, metric);
  const Tape::NodeId qn = tape.l2_norm(q);
  const Tape::NodeId pn = tape.l2_norm(p);
  if (tape.scalar_value(qn) < Real(1e-12) ||
      tape.scalar_value(pn) < Real(1e-12)) {
    // A numerically zero operand has no direction; report the maximal
    // dissimilarity s and flag it.
    if (flagged) *flagged = true;
    return cos_scale;
  }
  const Tape::NodeId cos =
      tape.div(tape.dot(q, p), tape.mul(qn, pn));
  return tape.neg(tape.mul(cos_scale, cos));
}

ProtoMemory::ProtoMemory(
    const MemoryOptions& options,
    const std::unordered_map<std::string, Tape::NodeId>& staged,
    const std::string& prefix)
    : options_(options) {
  if (options_.mode == DissimilarityMode::kCosine)
    cos_scale_ = staged.at(prefix + "/cos_scale");
  if (options_.gated_averaging) {
    gau_w_ = staged.at(prefix + "/gau_w");
    gau_b_ = staged.at(prefix + "/gau_b");
  }
}

void ProtoMemory::reset() {
  prototypes_.clear();
  counts_.clear();
  slot_class_.clear();
  class_slot_.clear();
}

int ProtoMemory::slot_of(int label) const {
  auto it = class_slot_.find(label);
  return it == class_slot_.end() ? -1 : it->second;
}

ProtoMemory::ReadResult ProtoMemory::read(Tape& tape, Tape::NodeId h,
                                          const ControlNodes& control) {
  ReadResult out;
  out.slot_classes = slot_class_;
  if (prototypes_.empty()) {
    // Nothing stored yet: everything is new with certainty.
    out.novelty = tape.constant(Tensor::scalar(Real(1)));
    return out;
  }
  std::vector<Tape::NodeId> dists;
  dists.reserve(prototypes_.size());
  for (Tape::NodeId p : prototypes_) {
    dists.push_back(dissimilarity(tape, h, p, control.metric, options_.mode,
                                  cos_scale_, &out.zero_norm_flagged));
  }
  const Tape::NodeId stacked = tape.concat(dists);
  out.min_distance = tape.min_slots(stacked);
  const SoftmaxNodes sm = stable_softmax_nodes(tape, tape.neg(stacked));
  out.scores = sm.scores;
  out.log_scores = sm.log_scores;
  out.novelty = tape.sigmoid(tape.div(
      tape.sub(out.min_distance, control.beta_read), control.gamma_read));
  return out;
}

Tape::NodeId ProtoMemory::write_novelty(Tape& tape, Tape::NodeId min_distance,
                                        const ControlNodes& control) const {
  return tape.sigmoid(tape.div(tape.sub(min_distance, control.beta_write),
                               control.gamma_write));
}

Tape::NodeId ProtoMemory::gate(Tape& tape, Tape::NodeId h,
                               Tape::NodeId p) const {
  const Tape::NodeId hp = tape.concat({h, p});
  return tape.sigmoid(tape.add(tape.matvec(gau_w_, hp), gau_b_));
}

void ProtoMemory::update_slot(Tape& tape, int slot, Tape::NodeId h,
                              Tape::NodeId delta) {
  const Tape::NodeId p = prototypes_[slot];
  const Tape::NodeId c = counts_[slot];
  if (options_.gated_averaging) {
    // p' = (1 - f*delta) p + f*delta h; counts only track occupancy mass.
    const Tape::NodeId f = gate(tape, h, p);
    const Tape::NodeId fd = tape.mul(f, delta);
    prototypes_[slot] =
        tape.add(tape.mul(p, tape.one_minus(fd)), tape.mul(h, fd));
  } else {
    // Weighted running mean: p' = (p c + h*delta) / (c + delta), which
    // telescopes to the batch class mean when every delta is 1.
    const Tape::NodeId numer = tape.add(tape.mul(p, c), tape.mul(h, delta));
    prototypes_[slot] = tape.div(numer, tape.add(c, delta));
  }
  counts_[slot] = tape.add(c, delta);
}

void ProtoMemory::write_labeled(Tape& tape, Tape::NodeId h, int label) {
  int slot = slot_of(label);
  if (slot < 0) {
    if (occupied() >= options_.capacity)
      throw InvariantViolation(
          "prototype memory: slot overflow (capacity " +
          std::to_string(options_.capacity) + ") allocating class " +
          std::to_string(label));
    slot = occupied();
    class_slot_[label] = slot;
    slot_class_.push_back(label);
    prototypes_.push_back(h);
    counts_.push_back(tape.constant(Tensor::scalar(Real(1))));
    return;
  }
  update_slot(tape, slot, h, tape.constant(Tensor::scalar(Real(1))));
}

void ProtoMemory::write_unlabeled(Tape& tape, Tape::NodeId h,
                                  const ReadResult& read,
                                  Tape::NodeId u_write) {
  if (prototypes_.empty()) return;
  const Tape::NodeId keep = tape.one_minus(u_write);
  for (int slot = 0; slot < occupied(); ++slot) {
    const Tape::NodeId delta =
        tape.mul(tape.index(read.scores, slot), keep);
    update_slot(tape, slot, h, delta);
  }
}

}  // namespace protostream
