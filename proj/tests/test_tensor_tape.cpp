#include <cmath>

#include <doctest.h>

#include "fd_check.hpp"
#include "protostream/errors.hpp"
#include "protostream/rng.hpp"
#include "protostream/tape.hpp"

using namespace protostream;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, double lo = -1,
                     double hi = 1) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Real& x : t.v)
    x = static_cast<Real>(lo + (hi - lo) * rng.uniform());
  return t;
}

}  // namespace

TEST_SUITE("tensor_autodiff") {
  TEST_CASE("pointwise primitives match closed forms") {
    Tape tape;
    const auto x0 = tape.constant(Tensor::scalar(0));
    CHECK(tape.scalar_value(tape.sigmoid(x0)) == doctest::Approx(0.5));
    CHECK(tape.scalar_value(tape.softplus(x0)) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const auto pair = tape.constant(Tensor::from_vector({3.0, 3.0}));
    const Tensor& sm = tape.value(tape.softmax(pair));
    CHECK(sm.v[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sm.v[1] == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("shape mismatch raises a configuration error naming the op") {
    Tape tape;
    const auto a = tape.constant(Tensor::zeros({3}));
    const auto b = tape.constant(Tensor::zeros({4}));
    CHECK_THROWS_WITH_AS(tape.add(a, b), "add: shape mismatch [3] vs [4]",
                         ConfigError);
    const auto w = tape.constant(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(tape.matvec(w, b), ConfigError);
  }

  TEST_CASE("backward: d(x^2)/dx = 2x") {
    Tape tape;
    const auto x = tape.leaf(Tensor::scalar(3), true, "x");
    tape.backward(tape.mul(x, x));
    CHECK(tape.grad(x).v[0] == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("backward: sum(sigmoid(x)) at 0 gives 1/4 per element") {
    Tape tape;
    const auto x = tape.leaf(Tensor::zeros({4}), true, "x");
    tape.backward(tape.sum(tape.sigmoid(x)));
    for (int i = 0; i < 4; ++i)
      CHECK(tape.grad(x).v[i] == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("backward requires a scalar loss") {
    Tape tape;
    const auto x = tape.leaf(Tensor::zeros({3}), true, "x");
    CHECK_THROWS_AS(tape.backward(tape.sigmoid(x)), ContractViolation);
  }

  TEST_CASE("unreachable trainable leaves get zero gradients") {
    Tape tape;
    const auto x = tape.leaf(Tensor::scalar(2), true, "x");
    const auto y = tape.leaf(Tensor::scalar(5), true, "y");
    tape.backward(tape.mul(x, x));
    CHECK(tape.grad(y).v[0] == 0.0);
  }

  TEST_CASE("backward is deterministic") {
    RngStream rng(7);
    Tape tape;
    const auto x = tape.leaf(random_tensor({6}, rng), true, "x");
    const auto w = tape.leaf(random_tensor({6, 6}, rng), true, "w");
    const auto loss = tape.sum(tape.tanh(tape.matvec(w, x)));
    tape.backward(loss);
    const Tensor g1 = tape.grad(w);
    tape.backward(loss);
    const Tensor g2 = tape.grad(w);
    CHECK(g1.v == g2.v);
  }

  TEST_CASE("min over slots routes the subgradient to the lowest argmin") {
    Tape tape;
    const auto x = tape.leaf(Tensor::from_vector({2.0, 1.0, 1.0}), true, "x");
    tape.backward(tape.min_slots(x));
    CHECK(tape.grad(x).v[0] == 0.0);
    CHECK(tape.grad(x).v[1] == 1.0);
    CHECK(tape.grad(x).v[2] == 0.0);
  }

  TEST_CASE("every primitive matches central finite differences") {
    RngStream rng(42);
    auto check = [&](const char* what, fd::Inputs inputs,
                     const fd::Builder& build) {
      const fd::Report rep = fd::check_gradients(inputs, build);
      INFO(what, " worst=", rep.worst, " analytic=", rep.analytic_at_worst,
           " fd=", rep.fd_at_worst);
      CHECK(rep.max_rel < 1e-6);
    };

    check("add/sub scalar broadcast",
          {{"a", random_tensor({5}, rng)}, {"s", random_tensor({1}, rng)}},
          [](Tape& t, const StagedParams& p) {
            return t.sum(t.sub(t.add(p.at("a"), p.at("s")), p.at("a")));
          });
    check("mul elementwise + scalar",
          {{"a", random_tensor({5}, rng)},
           {"b", random_tensor({5}, rng)},
           {"s", random_tensor({1}, rng)}},
          [](Tape& t, const StagedParams& p) {
            return t.sum(t.mul(t.mul(p.at("a"), p.at("b")), p.at("s")));
          });
    check("div",
          {{"a", random_tensor({4}, rng)},
           {"b", random_tensor({4}, rng, 0.5, 2.0)},
           {"s", random_tensor({1}, rng, 0.5, 2.0)}},
          [](Tape& t, const StagedParams& p) {
            return t.sum(t.div(t.div(p.at("a"), p.at("b")), p.at("s")));
          });
    check("matvec",
          {{"w", random_tensor({3, 4}, rng)}, {"x", random_tensor({4}, rng)}},
          [](Tape& t, const StagedParams& p) {
            return t.sum(t.matvec(p.at("w"), p.at("x")));
          });
    check("concat+slice",
          {{"a", random_tensor({3}, rng)}, {"b", random_tensor({2}, rng)}},
          [](Tape& t, const StagedParams& p) {
            const auto c = t.concat({p.at("a"), p.at("b"), p.at("a")});
            return t.sum(t.mul(t.slice(c, 1, 5), t.slice(c, 2, 5)));
          });
    check("sigmoid/tanh/softplus/exp",
          {{"x", random_tensor({6}, rng)}},
          [](Tape& t, const StagedParams& p) {
            return t.sum(t.mul(t.sigmoid(p.at("x")),
                               t.mul(t.tanh(p.at("x")),
                                     t.mul(t.softplus(p.at("x")),
                                           t.exp(p.at("x"))))));
          });
    check("log", {{"x", random_tensor({6}, rng, 0.5, 3.0)}},
          [](Tape& t, const StagedParams& p) { return t.sum(t.log(p.at("x"))); });
    check("softmax", {{"x", random_tensor({5}, rng, -2, 2)}},
          [](Tape& t, const StagedParams& p) {
            const auto y = t.softmax(p.at("x"));
            return t.dot(y, t.mul(y, y));
          });
    check("sq_diff_sum/dot/l2_norm",
          {{"a", random_tensor({5}, rng)}, {"b", random_tensor({5}, rng)}},
          [](Tape& t, const StagedParams& p) {
            return t.add(t.sq_diff_sum(p.at("a"), p.at("b")),
                         t.mul(t.dot(p.at("a"), p.at("b")),
                               t.l2_norm(p.at("a"))));
          });
    check("min_slots/scale_shift/clamp",
          {{"x", Tensor::from_vector({0.4, -0.3, 0.9, 0.1})}},
          [](Tape& t, const StagedParams& p) {
            const auto c = t.clamp(p.at("x"), -0.5, 0.5);
            return t.add(t.min_slots(c), t.scale_shift(t.sum(c), 2.0, 1.0));
          });
  }

  TEST_CASE("random 3-layer compositions match finite differences") {
    for (uint64_t seed = 0; seed < 4; ++seed) {
      RngStream rng(seed);
      fd::Inputs inputs = {{"w1", random_tensor({6, 5}, rng)},
                           {"b1", random_tensor({6}, rng)},
                           {"w2", random_tensor({4, 6}, rng)},
                           {"b2", random_tensor({4}, rng)},
                           {"w3", random_tensor({3, 4}, rng)},
                           {"x", random_tensor({5}, rng)}};
      const fd::Report rep = fd::check_gradients(
          inputs, [](Tape& t, const StagedParams& p) {
            auto h1 = t.tanh(t.add(t.matvec(p.at("w1"), p.at("x")), p.at("b1")));
            auto h2 = t.sigmoid(
                t.add(t.matvec(p.at("w2"), h1), p.at("b2")));
            auto h3 = t.softmax(t.matvec(p.at("w3"), h2));
            return t.add(t.dot(h3, h3), t.l2_norm(h2));
          });
      INFO("seed ", seed, " worst ", rep.worst);
      CHECK(rep.max_rel < 1e-6);
    }
  }

  TEST_CASE("stable softmax composition is safe at extreme logits") {
    Tape tape;
    const auto logits =
        tape.constant(Tensor::from_vector({-800.0, -802.0, -1200.0}));
    const SoftmaxNodes sm = stable_softmax_nodes(tape, logits);
    const Tensor& s = tape.value(sm.scores);
    double total = 0;
    for (Real x : s.v) total += x;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    const Tensor& ls = tape.value(sm.log_scores);
    CHECK(ls.v[0] == doctest::Approx(std::log(s.v[0])).epsilon(1e-9));
    CHECK(std::isfinite(ls.v[2]));
  }
}
