#include "protostream/context.hpp"

#include "protostream/errors.hpp"

namespace protostream {

namespace {

const char* kGates = "ifog";

Tape::NodeId gate_preact(Tape& tape, const StagedParams& staged,
                         const std::string& prefix, char gate, Tape::NodeId x,
                         Tape::NodeId h) {
  const std::string g(1, gate);
  const Tape::NodeId wx = staged.at(prefix + "/wx_" + g);
  const Tape::NodeId wh = staged.at(prefix + "/wh_" + g);
  const Tape::NodeId b = staged.at(prefix + "/b_" + g);
  return tape.add(tape.add(tape.matvec(wx, x), tape.matvec(wh, h)), b);
}

}  // namespace

void add_lstm_params(ParameterStore& store, const std::string& prefix,
                     const LstmSpec& spec, RngStream& rng) {
  if (spec.input_dim <= 0 || spec.hidden_dim <= 0)
    throw ConfigError("lstm dims must be positive");
  const int fan_in = spec.input_dim + spec.hidden_dim;
  for (const char* g = kGates; *g; ++g) {
    const std::string name(1, *g);
    store.add(prefix + "/wx_" + name,
              uniform_init({spec.hidden_dim, spec.input_dim}, fan_in, rng));
    store.add(prefix + "/wh_" + name,
              uniform_init({spec.hidden_dim, spec.hidden_dim}, fan_in, rng));
    // Forget-gate bias starts open so early gradients reach the cell state.
    const Real bias = *g == 'f' ? Real(1) : Real(0);
    store.add(prefix + "/b_" + name,
              Tensor::full({spec.hidden_dim}, bias));
  }
}

LstmState lstm_zero_state(Tape& tape, int hidden_dim) {
  LstmState s;
  s.h = tape.constant(Tensor::zeros({hidden_dim}));
  s.c = tape.constant(Tensor::zeros({hidden_dim}));
  return s;
}

LstmState lstm_step(Tape& tape, const StagedParams& staged,
                    const std::string& prefix, Tape::NodeId x,
                    const LstmState& state) {
  const Tape::NodeId i =
      tape.sigmoid(gate_preact(tape, staged, prefix, 'i', x, state.h));
  const Tape::NodeId f =
      tape.sigmoid(gate_preact(tape, staged, prefix, 'f', x, state.h));
  const Tape::NodeId o =
      tape.sigmoid(gate_preact(tape, staged, prefix, 'o', x, state.h));
  const Tape::NodeId g =
      tape.tanh(gate_preact(tape, staged, prefix, 'g', x, state.h));
  LstmState next;
  next.c = tape.add(tape.mul(f, state.c), tape.mul(i, g));
  next.h = tape.mul(o, tape.tanh(next.c));
  return next;
}

void add_control_head_params(ParameterStore& store, const std::string& prefix,
                             const ControlHeadSpec& spec, RngStream& rng) {
  store.add(prefix + "/w", uniform_init({spec.output_dim(), spec.lstm_hidden},
                                        spec.lstm_hidden, rng));
  Tensor bias = Tensor::zeros({spec.output_dim()});
  bias.v[2 * spec.feature_dim] = Real(10);      // beta_r
  bias.v[2 * spec.feature_dim + 2] = Real(10);  // beta_w
  store.add(prefix + "/b", std::move(bias));
}

ControlStep control_step(Tape& tape, const StagedParams& staged,
                         const std::string& prefix, const ControlHeadSpec& spec,
                         Tape::NodeId lstm_out) {
  const Tape::NodeId w = staged.at(prefix + "/w");
  const Tape::NodeId b = staged.at(prefix + "/b");
  const Tape::NodeId a = tape.add(tape.matvec(w, lstm_out), b);
  const int f = spec.feature_dim;
  ControlStep out;
  out.context_bias = tape.slice(a, 0, f);
  out.control.metric = tape.softplus(tape.slice(a, f, f));
  out.control.beta_read = tape.index(a, 2 * f);
  out.control.gamma_read =
      tape.softplus(tape.scale_shift(tape.index(a, 2 * f + 1), 1, 1));
  out.control.beta_write = tape.index(a, 2 * f + 2);
  out.control.gamma_write =
      tape.softplus(tape.scale_shift(tape.index(a, 2 * f + 3), 1, 1));
  return out;
}

void add_scalar_control_params(ParameterStore& store, const std::string& prefix,
                               bool write_pair) {
  store.add(prefix + "/beta_r", Tensor::scalar(Real(10)));
  store.add(prefix + "/gamma_r_raw", Tensor::scalar(Real(0)));
  if (write_pair) {
    store.add(prefix + "/beta_w", Tensor::scalar(Real(10)));
    store.add(prefix + "/gamma_w_raw", Tensor::scalar(Real(0)));
  }
}

ControlNodes scalar_controls(Tape& tape, const StagedParams& staged,
                             const std::string& prefix, bool write_pair) {
  ControlNodes c;
  c.beta_read = staged.at(prefix + "/beta_r");
  c.gamma_read = tape.softplus(
      tape.scale_shift(staged.at(prefix + "/gamma_r_raw"), 1, 1));
  if (write_pair) {
    c.beta_write = staged.at(prefix + "/beta_w");
    c.gamma_write = tape.softplus(
        tape.scale_shift(staged.at(prefix + "/gamma_w_raw"), 1, 1));
  }
  return c;
}

void add_encoder_params(ParameterStore& store, const std::string& prefix,
                        const EncoderSpec& spec, RngStream& rng) {
  if (spec.identity) {
    if (spec.input_dim != spec.output_dim)
      throw ConfigError("identity encoder requires input_dim == output_dim (" +
                        std::to_string(spec.input_dim) + " vs " +
                        std::to_string(spec.output_dim) + ")");
    return;
  }
  int in = spec.input_dim;
  int layer = 0;
  for (int width : spec.hidden) {
    const std::string p = prefix + "/l" + std::to_string(layer);
    store.add(p + "/w", uniform_init({width, in}, in, rng));
    store.add(p + "/b", Tensor::zeros({width}));
    in = width;
    ++layer;
  }
  const std::string p = prefix + "/l" + std::to_string(layer);
  store.add(p + "/w", uniform_init({spec.output_dim, in}, in, rng));
  store.add(p + "/b", Tensor::zeros({spec.output_dim}));
}

Tape::NodeId encode(Tape& tape, const StagedParams& staged,
                    const std::string& prefix, const EncoderSpec& spec,
                    Tape::NodeId x) {
  if (spec.identity) return x;
  Tape::NodeId h = x;
  int layer = 0;
  for (size_t i = 0; i < spec.hidden.size(); ++i, ++layer) {
    const std::string p = prefix + "/l" + std::to_string(layer);
    h = tape.tanh(tape.add(tape.matvec(staged.at(p + "/w"), h),
                           staged.at(p + "/b")));
  }
  const std::string p = prefix + "/l" + std::to_string(layer);
  return tape.add(tape.matvec(staged.at(p + "/w"), h), staged.at(p + "/b"));
}

}  // namespace protostream
