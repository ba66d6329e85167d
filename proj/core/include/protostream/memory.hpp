#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "protostream/params.hpp"
#include "protostream/tape.hpp"

namespace protostream {

enum class DissimilarityMode { kSquaredEuclidean, kCosine };

// Per-step control signals, as tape nodes. `metric` may be kNoNode, meaning
// the all-ones scaling (the "no metric" ablation and the scalar-control
// learners). All four threshold/temperature nodes are scalars; gammas are
// softplus-constrained upstream and therefore positive.
struct ControlNodes {
  Tape::NodeId metric = kNoNode;
  Tape::NodeId beta_read = kNoNode;
  Tape::NodeId gamma_read = kNoNode;
  Tape::NodeId beta_write = kNoNode;
  Tape::NodeId gamma_write = kNoNode;
};

struct MemoryOptions {
  int capacity = 58;
  bool gated_averaging = false;
  DissimilarityMode mode = DissimilarityMode::kSquaredEuclidean;
};

// Trainable parameters owned by the memory (created only when used):
//   <prefix>/cos_scale : cosine logit scale, init 10.0
//   <prefix>/gau_w     : gate weights over [h, p], fan-in uniform
//   <prefix>/gau_b     : gate bias, init 0
void add_memory_params(ParameterStore& store, const std::string& prefix,
                       const MemoryOptions& options, int feature_dim,
                       RngStream& rng);

// Scaled dissimilarity between a query and a prototype.
//   Euclidean: sum_d m_d (h_d - p_d)^2
//   Cosine:    -s * cos(h .* m, p); a zero-norm operand yields the maximal
//              score s and sets *flagged.
Tape::NodeId dissimilarity(Tape& tape, Tape::NodeId h, Tape::NodeId p,
                           Tape::NodeId metric, DissimilarityMode mode,
                           Tape::NodeId cos_scale, bool* flagged = nullptr);

// Slot-based class memory for one sequence rollout. Slots are allocated on
// the first labeled sighting of a class; unlabeled steps only redistribute
// mass over already-occupied slots. All state lives on the tape so the full
// read/write chain stays differentiable.
class ProtoMemory {
 public:
  ProtoMemory(const MemoryOptions& options,
              const std::unordered_map<std::string, Tape::NodeId>& staged,
              const std::string& prefix);

  // Empties all slots; trainable parameters are untouched.
  void reset();

  struct ReadResult {
    Tape::NodeId scores = kNoNode;      // softmax over occupied slots
    Tape::NodeId log_scores = kNoNode;  // log of the same distribution
    Tape::NodeId novelty = kNoNode;     // û_r; constant 1 on empty memory
    Tape::NodeId min_distance = kNoNode;
    std::vector<int> slot_classes;
    bool zero_norm_flagged = false;
  };

  ReadResult read(Tape& tape, Tape::NodeId h, const ControlNodes& control);

  // û_w from the read-time minimum distance.
  Tape::NodeId write_novelty(Tape& tape, Tape::NodeId min_distance,
                             const ControlNodes& control) const;

  // Supervised write with weight 1 to the label's slot (allocating it on
  // first sighting; overflow raises InvariantViolation).
  void write_labeled(Tape& tape, Tape::NodeId h, int label);

  // Semi-supervised write: every occupied slot k gets weight
  // scores_k * (1 - u_write). Never allocates.
  void write_unlabeled(Tape& tape, Tape::NodeId h, const ReadResult& read,
                       Tape::NodeId u_write);

  bool empty() const { return prototypes_.empty(); }
  int occupied() const { return static_cast<int>(prototypes_.size()); }
  int capacity() const { return options_.capacity; }
  int slot_of(int label) const;  // -1 when absent
  const std::vector<Tape::NodeId>& prototypes() const { return prototypes_; }
  const std::vector<Tape::NodeId>& counts() const { return counts_; }
  const std::vector<int>& slot_classes() const { return slot_class_; }

 private:
  Tape::NodeId gate(Tape& tape, Tape::NodeId h, Tape::NodeId p) const;
  void update_slot(Tape& tape, int slot, Tape::NodeId h, Tape::NodeId delta);

  MemoryOptions options_;
  Tape::NodeId cos_scale_ = kNoNode;
  Tape::NodeId gau_w_ = kNoNode;
  Tape::NodeId gau_b_ = kNoNode;
  std::vector<Tape::NodeId> prototypes_;
  std::vector<Tape::NodeId> counts_;
  std::vector<int> slot_class_;
  std::unordered_map<int, int> class_slot_;
};

}  // namespace protostream
