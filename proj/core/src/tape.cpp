#include "protostream/tape.hpp"

#include <cmath>

#include "protostream/errors.hpp"

namespace protostream {

namespace {

Real stable_softplus(Real x) {
  if (x > Real(30)) return x;
  if (x < Real(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

Real stable_sigmoid(Real x) {
  if (x >= 0) {
    const Real z = std::exp(-x);
    return Real(1) / (Real(1) + z);
  }
  const Real z = std::exp(x);
  return z / (Real(1) + z);
}

}  // namespace

const char* op_name(Tape::Op op) {
  switch (op) {
    case Tape::Op::kLeaf: return "leaf";
    case Tape::Op::kAdd: return "add";
    case Tape::Op::kSub: return "sub";
    case Tape::Op::kMul: return "mul";
    case Tape::Op::kDiv: return "div";
    case Tape::Op::kMatVec: return "matvec";
    case Tape::Op::kConcat: return "concat";
    case Tape::Op::kSlice: return "slice";
    case Tape::Op::kSigmoid: return "sigmoid";
    case Tape::Op::kTanh: return "tanh";
    case Tape::Op::kSoftplus: return "softplus";
    case Tape::Op::kExp: return "exp";
    case Tape::Op::kLog: return "log";
    case Tape::Op::kSoftmax: return "softmax";
    case Tape::Op::kSum: return "sum";
    case Tape::Op::kSqDiffSum: return "sq_diff_sum";
    case Tape::Op::kDot: return "dot";
    case Tape::Op::kL2Norm: return "l2_norm";
    case Tape::Op::kMinSlots: return "min_slots";
    case Tape::Op::kScaleShift: return "scale_shift";
    case Tape::Op::kClamp: return "clamp";
  }
  return "?";
}

void Tape::check(NodeId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
    throw ContractViolation("tape: node id out of range");
}

Tape::NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor value, bool trainable, std::string name) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.requires_grad = trainable;
  n.name = std::move(name);
  return push(std::move(n));
}

Real Tape::scalar_value(NodeId id) const {
  check(id);
  if (!nodes_[id].value.is_scalar())
    throw ContractViolation("scalar_value: node is not scalar");
  return nodes_[id].value.v[0];
}

Tape::NodeId Tape::binary_elementwise(Op op, NodeId a, NodeId b) {
  check(a);
  check(b);
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  const bool a_scalar = ta.is_scalar();
  const bool b_scalar = tb.is_scalar();
  if (!ta.same_shape(tb) && !a_scalar && !b_scalar)
    throw ConfigError(std::string(op_name(op)) + ": shape mismatch " +
                      ta.shape_str() + " vs " + tb.shape_str());
  Node n;
  n.op = op;
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  const Tensor& big = a_scalar ? tb : ta;
  n.value = Tensor::zeros(big.shape);
  const int m = big.numel();
  for (int i = 0; i < m; ++i) {
    const Real x = a_scalar ? ta.v[0] : ta.v[i];
    const Real y = b_scalar ? tb.v[0] : tb.v[i];
    switch (op) {
      case Op::kAdd: n.value.v[i] = x + y; break;
      case Op::kSub: n.value.v[i] = x - y; break;
      case Op::kMul: n.value.v[i] = x * y; break;
      case Op::kDiv: n.value.v[i] = x / y; break;
      default: throw ContractViolation("not an elementwise op");
    }
  }
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) { return binary_elementwise(Op::kAdd, a, b); }
Tape::NodeId Tape::sub(NodeId a, NodeId b) { return binary_elementwise(Op::kSub, a, b); }
Tape::NodeId Tape::mul(NodeId a, NodeId b) { return binary_elementwise(Op::kMul, a, b); }
Tape::NodeId Tape::div(NodeId a, NodeId b) { return binary_elementwise(Op::kDiv, a, b); }

Tape::NodeId Tape::matvec(NodeId w, NodeId x) {
  check(w);
  check(x);
  const Tensor& tw = nodes_[w].value;
  const Tensor& tx = nodes_[x].value;
  if (tw.shape.size() != 2 || tx.shape.size() != 1 || tw.cols() != tx.rows())
    throw ConfigError(std::string("matvec: shape mismatch ") + tw.shape_str() +
                      " vs " + tx.shape_str());
  Node n;
  n.op = Op::kMatVec;
  n.inputs = {w, x};
  n.requires_grad = nodes_[w].requires_grad || nodes_[x].requires_grad;
  const int m = tw.rows(), k = tw.cols();
  n.value = Tensor::zeros({m});
  for (int r = 0; r < m; ++r) {
    Real acc = 0;
    for (int c = 0; c < k; ++c) acc += tw.at(r, c) * tx.v[c];
    n.value.v[r] = acc;
  }
  return push(std::move(n));
}

Tape::NodeId Tape::concat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ContractViolation("concat: no inputs");
  Node n;
  n.op = Op::kConcat;
  n.inputs = parts;
  int total = 0;
  for (NodeId id : parts) {
    check(id);
    const Tensor& t = nodes_[id].value;
    if (t.shape.size() != 1)
      throw ConfigError("concat: inputs must be 1-D, got " + t.shape_str());
    total += t.numel();
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  n.value = Tensor::zeros({total});
  int off = 0;
  for (NodeId id : parts) {
    const Tensor& t = nodes_[id].value;
    for (int i = 0; i < t.numel(); ++i) n.value.v[off + i] = t.v[i];
    off += t.numel();
  }
  return push(std::move(n));
}

Tape::NodeId Tape::slice(NodeId a, int start, int len) {
  check(a);
  const Tensor& t = nodes_[a].value;
  if (t.shape.size() != 1 || start < 0 || len <= 0 || start + len > t.numel())
    throw ConfigError("slice: bad range [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") of " + t.shape_str());
  Node n;
  n.op = Op::kSlice;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.i0 = start;
  n.i1 = len;
  n.value = Tensor::zeros({len});
  for (int i = 0; i < len; ++i) n.value.v[i] = t.v[start + i];
  return push(std::move(n));
}

Tape::NodeId Tape::index(NodeId a, int i) { return slice(a, i, 1); }

Tape::NodeId Tape::unary(Op op, NodeId a) {
  check(a);
  const Tensor& t = nodes_[a].value;
  Node n;
  n.op = op;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor::zeros(t.shape);
  for (int i = 0; i < t.numel(); ++i) {
    const Real x = t.v[i];
    switch (op) {
      case Op::kSigmoid: n.value.v[i] = stable_sigmoid(x); break;
      case Op::kTanh: n.value.v[i] = std::tanh(x); break;
      case Op::kSoftplus: n.value.v[i] = stable_softplus(x); break;
      case Op::kExp: n.value.v[i] = std::exp(x); break;
      case Op::kLog: n.value.v[i] = std::log(x); break;
      default: throw ContractViolation("not a unary op");
    }
  }
  return push(std::move(n));
}

Tape::NodeId Tape::sigmoid(NodeId a) { return unary(Op::kSigmoid, a); }
Tape::NodeId Tape::tanh(NodeId a) { return unary(Op::kTanh, a); }
Tape::NodeId Tape::softplus(NodeId a) { return unary(Op::kSoftplus, a); }
Tape::NodeId Tape::exp(NodeId a) { return unary(Op::kExp, a); }
Tape::NodeId Tape::log(NodeId a) { return unary(Op::kLog, a); }

Tape::NodeId Tape::softmax(NodeId a) {
  check(a);
  const Tensor& t = nodes_[a].value;
  if (t.shape.size() != 1)
    throw ConfigError("softmax: input must be 1-D, got " + t.shape_str());
  Node n;
  n.op = Op::kSoftmax;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = Tensor::zeros(t.shape);
  Real mx = t.v[0];
  for (Real x : t.v) mx = std::max(mx, x);
  Real z = 0;
  for (int i = 0; i < t.numel(); ++i) {
    n.value.v[i] = std::exp(t.v[i] - mx);
    z += n.value.v[i];
  }
  for (int i = 0; i < t.numel(); ++i) n.value.v[i] /= z;
  return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId a) {
  check(a);
  Node n;
  n.op = Op::kSum;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  Real acc = 0;
  for (Real x : nodes_[a].value.v) acc += x;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

Tape::NodeId Tape::reduce2(Op op, NodeId a, NodeId b) {
  check(a);
  check(b);
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (!ta.same_shape(tb))
    throw ConfigError(std::string(op_name(op)) + ": shape mismatch " +
                      ta.shape_str() + " vs " + tb.shape_str());
  Node n;
  n.op = op;
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Real acc = 0;
  for (int i = 0; i < ta.numel(); ++i) {
    if (op == Op::kSqDiffSum) {
      const Real d = ta.v[i] - tb.v[i];
      acc += d * d;
    } else {
      acc += ta.v[i] * tb.v[i];
    }
  }
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

Tape::NodeId Tape::sq_diff_sum(NodeId a, NodeId b) {
  return reduce2(Op::kSqDiffSum, a, b);
}

Tape::NodeId Tape::dot(NodeId a, NodeId b) { return reduce2(Op::kDot, a, b); }

Tape::NodeId Tape::l2_norm(NodeId a) {
  check(a);
  Node n;
  n.op = Op::kL2Norm;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  Real acc = 0;
  for (Real x : nodes_[a].value.v) acc += x * x;
  n.value = Tensor::scalar(std::sqrt(acc));
  return push(std::move(n));
}

Tape::NodeId Tape::min_slots(NodeId a) {
  check(a);
  const Tensor& t = nodes_[a].value;
  if (t.shape.size() != 1)
    throw ConfigError("min_slots: input must be 1-D, got " + t.shape_str());
  Node n;
  n.op = Op::kMinSlots;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  int argmin = 0;
  for (int i = 1; i < t.numel(); ++i) {
    if (t.v[i] < t.v[argmin]) argmin = i;  // ties keep the lowest index
  }
  n.i0 = argmin;
  n.value = Tensor::scalar(t.v[argmin]);
  return push(std::move(n));
}

Tape::NodeId Tape::scale_shift(NodeId a, Real scale, Real shift) {
  check(a);
  Node n;
  n.op = Op::kScaleShift;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.p0 = scale;
  n.p1 = shift;
  const Tensor& t = nodes_[a].value;
  n.value = Tensor::zeros(t.shape);
  for (int i = 0; i < t.numel(); ++i) n.value.v[i] = scale * t.v[i] + shift;
  return push(std::move(n));
}

Tape::NodeId Tape::clamp(NodeId a, Real lo, Real hi) {
  check(a);
  if (lo > hi) throw ContractViolation("clamp: lo > hi");
  Node n;
  n.op = Op::kClamp;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.p0 = lo;
  n.p1 = hi;
  const Tensor& t = nodes_[a].value;
  n.value = Tensor::zeros(t.shape);
  for (int i = 0; i < t.numel(); ++i)
    n.value.v[i] = std::min(hi, std::max(lo, t.v[i]));
  return push(std::move(n));
}

Tensor& Tape::grad_buf(NodeId id) {
  if (grads_[id].v.empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape);
  return grads_[id];
}

void Tape::accumulate(NodeId id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& buf = grad_buf(id);
  const bool target_scalar = buf.is_scalar();
  if (target_scalar && !g.is_scalar()) {
    // Broadcast source: fold the incoming gradient into the scalar.
    Real acc = 0;
    for (Real x : g.v) acc += x;
    buf.v[0] += acc;
  } else {
    for (int i = 0; i < buf.numel(); ++i) buf.v[i] += g.v[i];
  }
}

void Tape::backward_node(NodeId id) {
  const Node& n = nodes_[id];
  const Tensor& g = grads_[id];
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      accumulate(n.inputs[0], g);
      accumulate(n.inputs[1], g);
      break;
    }
    case Op::kSub: {
      accumulate(n.inputs[0], g);
      Tensor gb = g;
      for (Real& x : gb.v) x = -x;
      accumulate(n.inputs[1], gb);
      break;
    }
    case Op::kMul: {
      const Tensor& ta = nodes_[n.inputs[0]].value;
      const Tensor& tb = nodes_[n.inputs[1]].value;
      Tensor ga = Tensor::zeros(n.value.shape);
      Tensor gb = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i) {
        const Real x = ta.is_scalar() ? ta.v[0] : ta.v[i];
        const Real y = tb.is_scalar() ? tb.v[0] : tb.v[i];
        ga.v[i] = g.v[i] * y;
        gb.v[i] = g.v[i] * x;
      }
      accumulate(n.inputs[0], ga);
      accumulate(n.inputs[1], gb);
      break;
    }
    case Op::kDiv: {
      const Tensor& ta = nodes_[n.inputs[0]].value;
      const Tensor& tb = nodes_[n.inputs[1]].value;
      Tensor ga = Tensor::zeros(n.value.shape);
      Tensor gb = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i) {
        const Real x = ta.is_scalar() ? ta.v[0] : ta.v[i];
        const Real y = tb.is_scalar() ? tb.v[0] : tb.v[i];
        ga.v[i] = g.v[i] / y;
        gb.v[i] = -g.v[i] * x / (y * y);
      }
      accumulate(n.inputs[0], ga);
      accumulate(n.inputs[1], gb);
      break;
    }
    case Op::kMatVec: {
      const Tensor& tw = nodes_[n.inputs[0]].value;
      const Tensor& tx = nodes_[n.inputs[1]].value;
      const int m = tw.rows(), k = tw.cols();
      Tensor gw = Tensor::zeros(tw.shape);
      Tensor gx = Tensor::zeros(tx.shape);
      for (int r = 0; r < m; ++r) {
        const Real gr = g.v[r];
        for (int c = 0; c < k; ++c) {
          gw.at(r, c) = gr * tx.v[c];
          gx.v[c] += tw.at(r, c) * gr;
        }
      }
      accumulate(n.inputs[0], gw);
      accumulate(n.inputs[1], gx);
      break;
    }
    case Op::kConcat: {
      int off = 0;
      for (NodeId in : n.inputs) {
        const int len = nodes_[in].value.numel();
        Tensor gi = Tensor::zeros(nodes_[in].value.shape);
        for (int i = 0; i < len; ++i) gi.v[i] = g.v[off + i];
        accumulate(in, gi);
        off += len;
      }
      break;
    }
    case Op::kSlice: {
      Tensor gi = Tensor::zeros(nodes_[n.inputs[0]].value.shape);
      for (int i = 0; i < n.i1; ++i) gi.v[n.i0 + i] = g.v[i];
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kSigmoid: {
      Tensor gi = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i) {
        const Real y = n.value.v[i];
        gi.v[i] = g.v[i] * y * (Real(1) - y);
      }
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kTanh: {
      Tensor gi = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i) {
        const Real y = n.value.v[i];
        gi.v[i] = g.v[i] * (Real(1) - y * y);
      }
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kSoftplus: {
      const Tensor& tx = nodes_[n.inputs[0]].value;
      Tensor gi = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i)
        gi.v[i] = g.v[i] * stable_sigmoid(tx.v[i]);
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kExp: {
      Tensor gi = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i) gi.v[i] = g.v[i] * n.value.v[i];
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kLog: {
      const Tensor& tx = nodes_[n.inputs[0]].value;
      Tensor gi = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i) gi.v[i] = g.v[i] / tx.v[i];
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kSoftmax: {
      const Tensor& y = n.value;
      Real gy = 0;
      for (int i = 0; i < y.numel(); ++i) gy += g.v[i] * y.v[i];
      Tensor gi = Tensor::zeros(y.shape);
      for (int i = 0; i < y.numel(); ++i) gi.v[i] = y.v[i] * (g.v[i] - gy);
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kSum: {
      Tensor gi = Tensor::full(nodes_[n.inputs[0]].value.shape, g.v[0]);
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kSqDiffSum: {
      const Tensor& ta = nodes_[n.inputs[0]].value;
      const Tensor& tb = nodes_[n.inputs[1]].value;
      Tensor ga = Tensor::zeros(ta.shape);
      Tensor gb = Tensor::zeros(tb.shape);
      for (int i = 0; i < ta.numel(); ++i) {
        const Real d = Real(2) * (ta.v[i] - tb.v[i]) * g.v[0];
        ga.v[i] = d;
        gb.v[i] = -d;
      }
      accumulate(n.inputs[0], ga);
      accumulate(n.inputs[1], gb);
      break;
    }
    case Op::kDot: {
      const Tensor& ta = nodes_[n.inputs[0]].value;
      const Tensor& tb = nodes_[n.inputs[1]].value;
      Tensor ga = Tensor::zeros(ta.shape);
      Tensor gb = Tensor::zeros(tb.shape);
      for (int i = 0; i < ta.numel(); ++i) {
        ga.v[i] = g.v[0] * tb.v[i];
        gb.v[i] = g.v[0] * ta.v[i];
      }
      accumulate(n.inputs[0], ga);
      accumulate(n.inputs[1], gb);
      break;
    }
    case Op::kL2Norm: {
      const Tensor& ta = nodes_[n.inputs[0]].value;
      const Real norm = n.value.v[0];
      Tensor ga = Tensor::zeros(ta.shape);
      if (norm > Real(0)) {
        for (int i = 0; i < ta.numel(); ++i)
          ga.v[i] = g.v[0] * ta.v[i] / norm;
      }
      accumulate(n.inputs[0], ga);
      break;
    }
    case Op::kMinSlots: {
      Tensor gi = Tensor::zeros(nodes_[n.inputs[0]].value.shape);
      gi.v[n.i0] = g.v[0];
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kScaleShift: {
      Tensor gi = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i) gi.v[i] = g.v[i] * n.p0;
      accumulate(n.inputs[0], gi);
      break;
    }
    case Op::kClamp: {
      const Tensor& tx = nodes_[n.inputs[0]].value;
      Tensor gi = Tensor::zeros(n.value.shape);
      for (int i = 0; i < n.value.numel(); ++i) {
        if (tx.v[i] >= n.p0 && tx.v[i] <= n.p1) gi.v[i] = g.v[i];
      }
      accumulate(n.inputs[0], gi);
      break;
    }
  }
}

void Tape::backward(NodeId loss) {
  check(loss);
  if (!nodes_[loss].value.is_scalar())
    throw ContractViolation("backward: loss must be scalar, got shape " +
                            nodes_[loss].value.shape_str());
  grads_.assign(nodes_.size(), Tensor{});
  grad_buf(loss).v[0] = Real(1);
  for (NodeId id = loss; id >= 0; --id) {
    if (grads_[id].v.empty()) continue;         // not reachable from the loss
    if (!nodes_[id].requires_grad) continue;
    if (nodes_[id].op == Op::kLeaf) continue;
    backward_node(id);
  }
  ran_backward_ = true;
}

const Tensor& Tape::grad(NodeId id) {
  check(id);
  if (!ran_backward_) throw ContractViolation("grad: backward() has not run");
  if (grads_[id].v.empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape);
  return grads_[id];
}

std::vector<std::pair<std::string, Tape::NodeId>> Tape::trainable_leaves()
    const {
  std::vector<std::pair<std::string, NodeId>> out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kLeaf && nodes_[i].requires_grad &&
        !nodes_[i].name.empty())
      out.emplace_back(nodes_[i].name, static_cast<NodeId>(i));
  }
  return out;
}

SoftmaxNodes stable_softmax_nodes(Tape& tape, Tape::NodeId logits) {
  const Tape::NodeId max_logit = tape.neg(tape.min_slots(tape.neg(logits)));
  const Tape::NodeId shifted = tape.sub(logits, max_logit);
  const Tape::NodeId expd = tape.exp(shifted);
  const Tape::NodeId z = tape.sum(expd);
  SoftmaxNodes out;
  out.scores = tape.div(expd, z);
  out.log_scores = tape.sub(shifted, tape.log(z));
  return out;
}

}  // namespace protostream
