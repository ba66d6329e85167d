#include <cmath>
#include <vector>

#include <doctest.h>

#include "fd_check.hpp"
#include "protostream/context.hpp"
#include "protostream/errors.hpp"
#include "protostream/rng.hpp"

using namespace protostream;

namespace {

void zero_params(ParameterStore& store) {
  for (const auto& e : store.entries()) {
    auto& t = store.value(e.name);
    for (Real& x : t.v) x = 0;
  }
}

// Plain-double LSTM cell, written independently of the tape ops.
struct RefLstm {
  int in, hid;
  std::vector<double> wx[4], wh[4], b[4];  // i, f, o, g

  static double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  void step(const std::vector<double>& x, std::vector<double>& h,
            std::vector<double>& c) const {
    std::vector<double> gates[4];
    for (int g = 0; g < 4; ++g) {
      gates[g].assign(hid, 0);
      for (int r = 0; r < hid; ++r) {
        double acc = b[g][r];
        for (int j = 0; j < in; ++j) acc += wx[g][r * in + j] * x[j];
        for (int j = 0; j < hid; ++j) acc += wh[g][r * hid + j] * h[j];
        gates[g][r] = acc;
      }
    }
    std::vector<double> nc(hid), nh(hid);
    for (int r = 0; r < hid; ++r) {
      const double i = sig(gates[0][r]);
      const double f = sig(gates[1][r]);
      const double o = sig(gates[2][r]);
      const double g = std::tanh(gates[3][r]);
      nc[r] = f * c[r] + i * g;
      nh[r] = o * std::tanh(nc[r]);
    }
    h = nh;
    c = nc;
  }
};

}  // namespace

TEST_SUITE("context_rnn") {
  TEST_CASE("all-zero lstm maps zero state to zero output") {
    ParameterStore store;
    RngStream rng(1);
    add_lstm_params(store, "lstm", LstmSpec{3, 4}, rng);
    zero_params(store);
    Tape tape;
    auto staged = store.stage(tape);
    LstmState state = lstm_zero_state(tape, 4);
    state = lstm_step(tape, staged, "lstm", tape.constant(Tensor::zeros({3})),
                      state);
    for (Real x : tape.value(state.h).v) CHECK(x == 0.0);
  }

  TEST_CASE("zero weights halve the carried cell: c' = c/2, h = tanh(c/2)/2") {
    ParameterStore store;
    RngStream rng(1);
    add_lstm_params(store, "lstm", LstmSpec{3, 2}, rng);
    zero_params(store);
    Tape tape;
    auto staged = store.stage(tape);
    LstmState state;
    state.h = tape.constant(Tensor::zeros({2}));
    state.c = tape.constant(Tensor::from_vector({0.8, -0.4}));
    state = lstm_step(tape, staged, "lstm", tape.constant(Tensor::zeros({3})),
                      state);
    CHECK(tape.value(state.c).v[0] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(tape.value(state.c).v[1] == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(tape.value(state.h).v[0] ==
          doctest::Approx(0.5 * std::tanh(0.4)).epsilon(1e-12));
  }

  TEST_CASE("random cell matches an independent reference recurrence") {
    const int in = 4, hid = 4;
    ParameterStore store;
    RngStream rng(77);
    add_lstm_params(store, "lstm", LstmSpec{in, hid}, rng);

    RefLstm ref;
    ref.in = in;
    ref.hid = hid;
    const char* gates = "ifog";
    for (int g = 0; g < 4; ++g) {
      const std::string n(1, gates[g]);
      const Tensor& wx = store.value("lstm/wx_" + n);
      const Tensor& wh = store.value("lstm/wh_" + n);
      const Tensor& b = store.value("lstm/b_" + n);
      ref.wx[g].assign(wx.v.begin(), wx.v.end());
      ref.wh[g].assign(wh.v.begin(), wh.v.end());
      ref.b[g].assign(b.v.begin(), b.v.end());
    }

    Tape tape;
    auto staged = store.stage(tape);
    LstmState state = lstm_zero_state(tape, hid);
    std::vector<double> h(hid, 0), c(hid, 0);
    RngStream xs(5);
    for (int t = 0; t < 6; ++t) {
      std::vector<Real> x(in);
      for (Real& v : x) v = static_cast<Real>(xs.normal());
      state = lstm_step(tape, staged, "lstm",
                        tape.constant(Tensor::from_vector(x)), state);
      ref.step(std::vector<double>(x.begin(), x.end()), h, c);
      for (int r = 0; r < hid; ++r) {
        CHECK(static_cast<double>(tape.value(state.h).v[r]) ==
              doctest::Approx(h[r]).epsilon(1e-12));
        CHECK(static_cast<double>(tape.value(state.c).v[r]) ==
              doctest::Approx(c[r]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("forget bias is initialized open (1.0)") {
    ParameterStore store;
    RngStream rng(1);
    add_lstm_params(store, "lstm", LstmSpec{3, 4}, rng);
    for (Real x : store.value("lstm/b_f").v) CHECK(x == 1.0);
    for (Real x : store.value("lstm/b_i").v) CHECK(x == 0.0);
  }

  TEST_CASE("control head at stated inits: beta exactly 10, gamma "
            "softplus(1), nonnegative metric") {
    const ControlHeadSpec spec{6, 3};
    ParameterStore store;
    RngStream rng(5);
    add_control_head_params(store, "head", spec, rng);
    store.value("head/w") = Tensor::zeros({spec.output_dim(), 6});
    Tape tape;
    auto staged = store.stage(tape);
    const ControlStep cs = control_step(
        tape, staged, "head", spec,
        tape.constant(Tensor::from_vector({1.0, -2.0, 0.5, 0.0, 3.0, -1.0})));
    CHECK(tape.scalar_value(cs.control.beta_read) == 10.0);
    CHECK(tape.scalar_value(cs.control.beta_write) == 10.0);
    CHECK(tape.scalar_value(cs.control.gamma_read) ==
          doctest::Approx(1.3132616875).epsilon(1e-9));
    CHECK(tape.scalar_value(cs.control.gamma_write) ==
          doctest::Approx(1.3132616875).epsilon(1e-9));
    for (Real x : tape.value(cs.control.metric).v)
      CHECK(x == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    for (Real x : tape.value(cs.context_bias).v) CHECK(x == 0.0);
  }

  TEST_CASE("control outputs stay in range for random parameters") {
    RngStream rng(6);
    const ControlHeadSpec spec{8, 4};
    for (int trial = 0; trial < 20; ++trial) {
      ParameterStore store;
      RngStream init(rng.next_u64());
      add_control_head_params(store, "head", spec, init);
      Tape tape;
      auto staged = store.stage(tape);
      std::vector<Real> out(8);
      for (Real& x : out) x = static_cast<Real>(3 * rng.normal());
      const ControlStep cs =
          control_step(tape, staged, "head", spec,
                       tape.constant(Tensor::from_vector(out)));
      CHECK(tape.scalar_value(cs.control.gamma_read) > 0.0);
      CHECK(tape.scalar_value(cs.control.gamma_write) > 0.0);
      for (Real x : tape.value(cs.control.metric).v) CHECK(x >= 0.0);
    }
  }

  TEST_CASE("scalar controls equal the head parameterization at init") {
    ParameterStore store;
    add_scalar_control_params(store, "control");
    Tape tape;
    auto staged = store.stage(tape);
    const ControlNodes c = scalar_controls(tape, staged, "control");
    CHECK(tape.scalar_value(c.beta_read) == 10.0);
    CHECK(tape.scalar_value(c.gamma_read) ==
          doctest::Approx(1.3132616875).epsilon(1e-9));
  }

  TEST_CASE("identity encoder passes through; zero stack maps to zero") {
    Tape tape;
    ParameterStore store;
    const EncoderSpec id{3, {}, 3, true};
    RngStream rng(3);
    add_encoder_params(store, "enc", id, rng);
    CHECK(store.size() == 0);
    auto staged = store.stage(tape);
    const auto x = tape.constant(Tensor::from_vector({1.0, 2.0, 3.0}));
    CHECK(encode(tape, staged, "enc", id, x) == x);

    ParameterStore store2;
    const EncoderSpec spec{3, {5}, 4, false};
    add_encoder_params(store2, "enc", spec, rng);
    zero_params(store2);
    Tape tape2;
    auto staged2 = store2.stage(tape2);
    const auto y = encode(tape2, staged2, "enc", spec,
                          tape2.constant(Tensor::from_vector({1.0, 2.0, 3.0})));
    for (Real v : tape2.value(y).v) CHECK(v == 0.0);

    const EncoderSpec bad{3, {}, 4, true};
    ParameterStore store3;
    CHECK_THROWS_AS(add_encoder_params(store3, "enc", bad, rng), ConfigError);
  }

  TEST_CASE("encoder gradients match finite differences") {
    RngStream rng(8);
    const EncoderSpec spec{4, {5}, 3, false};
    ParameterStore store;
    add_encoder_params(store, "enc", spec, rng);
    fd::Inputs inputs;
    for (const auto& e : store.entries()) inputs.emplace(e.name, e.value);
    Tensor x = Tensor::zeros({4});
    for (Real& v : x.v) v = static_cast<Real>(rng.normal());
    inputs.emplace("x", x);
    const fd::Report rep =
        fd::check_gradients(inputs, [&](Tape& t, const StagedParams& p) {
          return t.l2_norm(encode(t, p, "enc", spec, p.at("x")));
        });
    INFO("worst ", rep.worst);
    CHECK(rep.max_rel < 1e-6);
  }

  TEST_CASE("unrolled lstm + head gradients match finite differences (BPTT)") {
    const int in = 3, hid = 4, T = 6;
    RngStream rng(15);
    ParameterStore store;
    add_lstm_params(store, "lstm", LstmSpec{in, hid}, rng);
    add_control_head_params(store, "head", ControlHeadSpec{hid, in}, rng);
    fd::Inputs inputs;
    for (const auto& e : store.entries()) inputs.emplace(e.name, e.value);
    std::vector<Tensor> xs;
    for (int t = 0; t < T; ++t) {
      Tensor x = Tensor::zeros({in});
      for (Real& v : x.v) v = static_cast<Real>(rng.normal());
      xs.push_back(x);
    }
    const ControlHeadSpec head{hid, in};
    const fd::Report rep =
        fd::check_gradients(inputs, [&](Tape& t, const StagedParams& p) {
          LstmState state = lstm_zero_state(t, hid);
          std::vector<Tape::NodeId> pieces;
          for (int step = 0; step < T; ++step) {
            state = lstm_step(t, p, "lstm", t.constant(xs[step]), state);
            const ControlStep cs = control_step(t, p, "head", head, state.h);
            pieces.push_back(t.l2_norm(cs.context_bias));
            pieces.push_back(t.mul(cs.control.gamma_read,
                                   t.sigmoid(cs.control.beta_write)));
            pieces.push_back(t.sum(cs.control.metric));
          }
          return t.sum(t.concat(pieces));
        });
    INFO("worst ", rep.worst);
    CHECK(rep.max_rel < 1e-6);
  }
}
