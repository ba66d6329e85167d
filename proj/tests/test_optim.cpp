#include <cmath>
#include <cstdio>
#include <filesystem>

#include <doctest.h>

#include "protostream/checkpoint.hpp"
#include "protostream/errors.hpp"
#include "protostream/optim.hpp"
#include "protostream/rng.hpp"

using namespace protostream;

namespace {

GradMap grads_of(std::initializer_list<std::pair<const char*, std::vector<Real>>>
                     named) {
  GradMap g;
  for (const auto& [name, values] : named)
    g.emplace(name, Tensor::from_vector(values));
  return g;
}

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("clip scales an over-cap gradient onto the cap, keeping direction") {
    GradMap g = grads_of({{"a", {6.0, 8.0}}});  // norm 10
    const double before = clip_global_norm(g, 5.0);
    CHECK(before == doctest::Approx(10.0));
    CHECK(global_norm(g) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(g.at("a").v[0] / g.at("a").v[1] == doctest::Approx(6.0 / 8.0));
  }

  TEST_CASE("clip leaves a below-cap gradient unchanged and is idempotent") {
    GradMap g = grads_of({{"a", {3.0, 0.0}}});
    clip_global_norm(g, 5.0);
    CHECK(g.at("a").v[0] == 3.0);
    GradMap big = grads_of({{"a", {30.0, 40.0}}});
    clip_global_norm(big, 5.0);
    const Tensor once = big.at("a");
    clip_global_norm(big, 5.0);
    CHECK(big.at("a").v == once.v);
  }

  TEST_CASE("clip of zero gradients is zero; clipping never increases norm") {
    GradMap zero = grads_of({{"a", {0.0, 0.0}}});
    clip_global_norm(zero, 5.0);
    CHECK(global_norm(zero) == 0.0);
    RngStream rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      GradMap g;
      Tensor t = Tensor::zeros({4});
      for (Real& x : t.v) x = static_cast<Real>(rng.normal() * 10);
      g.emplace("p", t);
      const double before = global_norm(g);
      clip_global_norm(g, 5.0);
      CHECK(global_norm(g) <= std::max(before, 5.0) + 1e-12);
    }
  }

  TEST_CASE("first Adam step moves by ~lr against the gradient sign") {
    for (double magnitude : {1e-6, 1.0, 1e6}) {
      ParameterStore params;
      params.add("p", Tensor::scalar(0));
      Adam adam(AdamConfig{0.01, 0.9, 0.999, 1e-8});
      adam.step(params, grads_of({{"p", {static_cast<Real>(magnitude)}}}));
      const double moved = static_cast<double>(params.value("p").v[0]);
      CHECK(moved < 0.0);
      CHECK(std::fabs(moved) == doctest::Approx(0.01).epsilon(1e-2));
    }
  }

  TEST_CASE("zero gradient leaves parameters unchanged") {
    ParameterStore params;
    params.add("p", Tensor::from_vector({1.5, -2.5}));
    Adam adam(AdamConfig{});
    adam.step(params, grads_of({{"p", {0.0, 0.0}}}));
    CHECK(params.value("p").v[0] == 1.5);
    CHECK(params.value("p").v[1] == -2.5);
  }

  TEST_CASE("ten steps on a quadratic bowl strictly decrease the loss and "
            "match a reference recurrence") {
    ParameterStore params;
    params.add("x", Tensor::from_vector({3.0, -2.0}));
    Adam adam(AdamConfig{0.1, 0.9, 0.999, 1e-8});

    // Independent scalar recurrence, straight from the update equations.
    double xr[2] = {3.0, -2.0};
    double m[2] = {0, 0}, v[2] = {0, 0};
    double prev_loss = 0.5 * (xr[0] * xr[0] + xr[1] * xr[1]);
    for (int t = 1; t <= 10; ++t) {
      const Tensor& x = params.value("x");
      GradMap g;
      g.emplace("x", x);  // grad of 0.5||x||^2 is x
      adam.step(params, g, 0.1);
      for (int i = 0; i < 2; ++i) {
        const double gi = xr[i];
        m[i] = 0.9 * m[i] + 0.1 * gi;
        v[i] = 0.999 * v[i] + 0.001 * gi * gi;
        const double mh = m[i] / (1 - std::pow(0.9, t));
        const double vh = v[i] / (1 - std::pow(0.999, t));
        xr[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      }
      for (int i = 0; i < 2; ++i)
        CHECK(static_cast<double>(params.value("x").v[i]) ==
              doctest::Approx(xr[i]).epsilon(1e-12));
      const double loss = 0.5 * (xr[0] * xr[0] + xr[1] * xr[1]);
      CHECK(loss < prev_loss);
      prev_loss = loss;
    }
  }

  TEST_CASE("a non-finite gradient aborts the step naming the parameter") {
    ParameterStore params;
    params.add("weights", Tensor::scalar(1));
    Adam adam(AdamConfig{});
    GradMap g = grads_of({{"weights", {std::numeric_limits<Real>::quiet_NaN()}}});
    CHECK_THROWS_WITH_AS(adam.step(params, g),
                         "adam: non-finite gradient for parameter 'weights'",
                         InvariantViolation);
    CHECK(params.value("weights").v[0] == 1.0);
    CHECK(adam.step_count() == 0);
  }

  TEST_CASE("checkpoints round-trip parameters and optimizer state") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "ps_test.ckpt").string();
    ParameterStore params;
    RngStream rng(11);
    params.add("a", uniform_init({3, 2}, 2, rng));
    params.add("b", uniform_init({4}, 4, rng));
    Adam adam(AdamConfig{0.01, 0.9, 0.999, 1e-8});
    GradMap g;
    g.emplace("a", Tensor::full({3, 2}, Real(0.3)));
    g.emplace("b", Tensor::full({4}, Real(-0.7)));
    adam.step(params, g);

    CheckpointHeader header;
    header.learner = "cpm";
    header.config_hash = 0xdeadbeefu;
    header.train_step = 17;
    header.best_val_ap = 0.75;
    save_checkpoint(path, header, params, &adam);

    ParameterStore loaded;
    loaded.add("a", Tensor::zeros({3, 2}));
    loaded.add("b", Tensor::zeros({4}));
    Adam adam2(AdamConfig{0.01, 0.9, 0.999, 1e-8});
    const CheckpointHeader read = load_checkpoint(path, loaded, &adam2);
    CHECK(read.learner == "cpm");
    CHECK(read.train_step == 17);
    CHECK(read.best_val_ap == 0.75);
    CHECK(loaded.value("a").v == params.value("a").v);
    CHECK(adam2.step_count() == 1);
    CHECK(adam2.state().at("b").m.v == adam.state().at("b").m.v);

    ParameterStore wrong;
    wrong.add("a", Tensor::zeros({3, 2}));
    CHECK_THROWS_AS(load_checkpoint(path, wrong), ConfigError);
    ParameterStore bad_shape;
    bad_shape.add("a", Tensor::zeros({2, 3}));
    bad_shape.add("b", Tensor::zeros({4}));
    CHECK_THROWS_AS(load_checkpoint(path, bad_shape), ConfigError);
    std::filesystem::remove(path);
  }
}
