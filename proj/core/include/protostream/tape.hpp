#pragma once

#include <string>
#include <vector>

#include "protostream/tensor.hpp"

namespace protostream {

// Reverse-mode autodiff over a linear tape of primitive ops.
//
// A Tape owns every intermediate value of one forward computation (typically
// one sequence rollout). Ops append nodes in topological order; backward()
// walks the tape once in reverse and accumulates a gradient for every node
// that (a) is reachable from the loss and (b) requires a gradient. Named
// trainable leaves are how model parameters enter a rollout; their gradients
// are collected with trainable_grads().
//
// The op set is deliberately small: elementwise arithmetic with scalar
// broadcast, matrix-vector product, 1-D concat/slice/index, the pointwise
// nonlinearities, softmax, a few reductions, and clamp. There is no
// broadcasting beyond scalar-tensor.
inline constexpr int kNoNode = -1;

class Tape {
 public:
  using NodeId = int;

  enum class Op {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kMatVec,
    kConcat,
    kSlice,
    kSigmoid,
    kTanh,
    kSoftplus,
    kExp,
    kLog,
    kSoftmax,
    kSum,
    kSqDiffSum,
    kDot,
    kL2Norm,
    kMinSlots,
    kScaleShift,
    kClamp,
  };

  // Leaves. Constants never receive gradients; named trainable leaves are
  // the entry points for model parameters.
  NodeId leaf(Tensor value, bool trainable = false, std::string name = {});
  NodeId constant(Tensor value) { return leaf(std::move(value)); }
  NodeId scalar(Real value) { return constant(Tensor::scalar(value)); }

  // Elementwise with scalar-tensor broadcast on either side.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);

  // W is {m,n}, x is {n}; result {m}.
  NodeId matvec(NodeId w, NodeId x);

  // 1-D concatenation; scalars are size-1 vectors, so this doubles as stack.
  NodeId concat(const std::vector<NodeId>& parts);
  NodeId slice(NodeId a, int start, int len);
  NodeId index(NodeId a, int i);  // scalar result

  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId softplus(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);

  // Max-subtracted softmax over a 1-D vector.
  NodeId softmax(NodeId a);

  NodeId sum(NodeId a);
  NodeId sq_diff_sum(NodeId a, NodeId b);  // sum((a-b)^2), scalar
  NodeId dot(NodeId a, NodeId b);
  NodeId l2_norm(NodeId a);
  // Min over a 1-D vector; the subgradient goes to the lowest argmin index.
  NodeId min_slots(NodeId a);
  NodeId scale_shift(NodeId a, Real scale, Real shift);
  NodeId neg(NodeId a) { return scale_shift(a, Real(-1), Real(0)); }
  NodeId one_minus(NodeId a) { return scale_shift(a, Real(-1), Real(1)); }
  NodeId clamp(NodeId a, Real lo, Real hi);

  // Populates gradients for every node reachable from `loss`, which must be
  // scalar. Trainable leaves not reachable from the loss report zeros.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  Real scalar_value(NodeId id) const;
  const Tensor& grad(NodeId id);

  std::vector<std::pair<std::string, NodeId>> trainable_leaves() const;

  size_t size() const { return nodes_.size(); }
  bool has_run_backward() const { return ran_backward_; }

 private:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    std::string name;
    Real p0 = 0, p1 = 0;  // scale/shift or clamp bounds
    int i0 = 0, i1 = 0;   // slice start/len, index, argmin
  };

  NodeId push(Node node);
  NodeId unary(Op op, NodeId a);
  NodeId binary_elementwise(Op op, NodeId a, NodeId b);
  NodeId reduce2(Op op, NodeId a, NodeId b);
  void check(NodeId id) const;
  bool wants_grad(NodeId id) const { return nodes_[id].requires_grad; }
  Tensor& grad_buf(NodeId id);
  void accumulate(NodeId id, const Tensor& g);
  void backward_node(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool ran_backward_ = false;
};

const char* op_name(Tape::Op op);

// Max-subtracted softmax composed from primitives, sharing the shifted
// logits between the distribution and its log so downstream cross-entropy
// terms never see log(0).
struct SoftmaxNodes {
  Tape::NodeId scores = kNoNode;
  Tape::NodeId log_scores = kNoNode;
};

SoftmaxNodes stable_softmax_nodes(Tape& tape, Tape::NodeId logits);

}  // namespace protostream
