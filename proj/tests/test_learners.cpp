#include <cmath>
#include <set>

#include <doctest.h>

#include "fd_check.hpp"
#include "protostream/errors.hpp"
#include "protostream/learners.hpp"

using namespace protostream;

namespace {

TimeStep make_step(std::vector<Real> x, int y, int y_tilde) {
  TimeStep ts;
  ts.x = std::move(x);
  ts.y = y;
  ts.y_tilde = y_tilde;
  return ts;
}

// Hand-built sequences get novelty flags recomputed before use.
Sequence make_sequence(std::vector<TimeStep> steps, int n_classes) {
  Sequence seq;
  seq.steps = std::move(steps);
  seq.n_classes = n_classes;
  recompute_novelty(seq);
  return seq;
}

LearnerConfig identity_config(const std::string& name, int dim = 3) {
  LearnerConfig cfg;
  cfg.name = name;
  cfg.input_dim = dim;
  cfg.embedding_dim = dim;
  cfg.identity_encoder = true;
  cfg.encoder_hidden = {};
  cfg.max_slots = 32;
  cfg.cluster_capacity = 64;
  cfg.lstm_hidden = 4;
  return cfg;
}

std::vector<StepPrediction> run_prefix(OnlineLearner& learner,
                                       const Sequence& seq, size_t upto) {
  Tape tape;
  learner.begin_sequence(tape);
  std::vector<StepPrediction> preds;
  StepOptions opts;
  for (size_t t = 0; t < upto; ++t)
    preds.push_back(learner.step(tape, seq.steps[t], opts).pred);
  return preds;
}

}  // namespace

TEST_SUITE("learners") {
  TEST_CASE("first step of any sequence is certainly novel") {
    for (const std::string& name : learner_names()) {
      LearnerConfig cfg = identity_config(name);
      if (name == "lstm") {
        // Fresh logits are not calibrated; only memory learners pin û=1.
        continue;
      }
      auto learner = make_learner(cfg, 7);
      Tape tape;
      learner->begin_sequence(tape);
      const StepResult res =
          learner->step(tape, make_step({1.0, 0.0, 0.0}, 0, 0), StepOptions{});
      CHECK(res.pred.novelty == 1.0);
      CHECK(res.pred.predicted_class == -1);
    }
  }

  TEST_CASE("repeat of a labeled class on clean features is top-1") {
    auto learner = make_learner(identity_config("online_protonet"), 3);
    const Sequence seq = make_sequence({make_step({1.0, 0.0, 0.0}, 0, 0),
                                        make_step({0.0, 1.0, 0.0}, 1, 1),
                                        make_step({1.0, 0.0, 0.0}, 0, 0)},
                                       2);
    Tape tape;
    learner->begin_sequence(tape);
    StepOptions opts;
    learner->step(tape, seq.steps[0], opts);
    learner->step(tape, seq.steps[1], opts);
    const StepResult res = learner->step(tape, seq.steps[2], opts);
    CHECK(res.pred.predicted_class == 0);
    // Distance 0 to its own prototype: novelty sigmoid(-beta/gamma).
    const double gamma = std::log1p(std::exp(1.0));
    CHECK(res.pred.novelty ==
          doctest::Approx(1.0 / (1.0 + std::exp(10.0 / gamma))).epsilon(1e-9));
  }

  TEST_CASE("ablated contextual learner is step-identical to the prototype "
            "baseline by construction") {
    LearnerConfig cpm_cfg = identity_config("cpm");
    cpm_cfg.ablation = AblationFlags{false, false, false};
    LearnerConfig opn_cfg = identity_config("online_protonet");
    auto cpm = make_learner(cpm_cfg, 123);
    auto opn = make_learner(opn_cfg, 123);

    SamplerConfig sampler;
    sampler.sequence_length = 20;
    sampler.environments = 2;
    sampler.feature_dim = 3;
    sampler.context_cue_dim = 2;
    for (uint64_t i = 0; i < 5; ++i) {
      const Sequence seq = generate_sequence(sampler, 9, "test", i);
      Tape tape_a, tape_b;
      cpm->begin_sequence(tape_a);
      opn->begin_sequence(tape_b);
      StepOptions opts;
      for (const TimeStep& ts : seq.steps) {
        const StepResult a = cpm->step(tape_a, ts, opts);
        const StepResult b = opn->step(tape_b, ts, opts);
        CHECK(a.pred.novelty == b.pred.novelty);
        CHECK(a.pred.predicted_class == b.pred.predicted_class);
        CHECK(a.pred.class_scores == b.pred.class_scores);
      }
    }
  }

  TEST_CASE("matching net: stored-point repeat and store growth") {
    auto learner = make_learner(identity_config("online_matchingnet"), 42);
    Tape tape;
    learner->begin_sequence(tape);
    StepOptions opts;
    StepResult res =
        learner->step(tape, make_step({1.0, 0.0, 0.0}, 0, 0), opts);
    CHECK(res.pred.novelty == 1.0);
    CHECK(res.store_size == 1);

    // Unlabeled steps are skipped entirely.
    res = learner->step(tape, make_step({0.5, 0.5, 0.0}, 0, kUnlabeled), opts);
    CHECK(res.store_size == 1);

    // Exact repeat of a stored exemplar: distance 0, novelty sigmoid(-b/g).
    res = learner->step(tape, make_step({1.0, 0.0, 0.0}, 0, 0), opts);
    const double gamma = std::log1p(std::exp(1.0));
    CHECK(res.pred.novelty ==
          doctest::Approx(1.0 / (1.0 + std::exp(10.0 / gamma))).epsilon(1e-9));
    CHECK(res.pred.predicted_class == 0);
    CHECK(res.store_size == 2);

    res = learner->step(tape, make_step({0.0, 1.0, 0.0}, 1, 1), opts);
    CHECK(res.store_size == 3);
  }

  TEST_CASE("imp: cluster creation, threshold split, and label adoption") {
    auto learner = make_learner(identity_config("online_imp"), 5);
    Tape tape;
    learner->begin_sequence(tape);
    StepOptions opts;

    StepResult res =
        learner->step(tape, make_step({1.0, 0.0, 0.0}, 0, 0), opts);
    CHECK(res.store_size == 1);

    // Same class far beyond the write threshold (d = 16 > beta_w = 10):
    // a second cluster for class 0.
    res = learner->step(tape, make_step({5.0, 0.0, 0.0}, 0, 0), opts);
    CHECK(res.store_size == 2);

    // Nearby labeled example joins instead (d = 0.25).
    res = learner->step(tape, make_step({1.5, 0.0, 0.0}, 0, 0), opts);
    CHECK(res.store_size == 2);

    // An unlabeled far example opens an unlabeled cluster...
    res = learner->step(tape, make_step({0.0, 9.0, 0.0}, 1, kUnlabeled), opts);
    CHECK(res.store_size == 3);
    CHECK(res.classes == std::vector<int>{0});  // class 1 still unknown
    // ...and a labeled example near it adopts the cluster.
    res = learner->step(tape, make_step({0.0, 9.2, 0.0}, 1, 1), opts);
    CHECK(res.store_size == 3);
    Tape tape2;
    learner->begin_sequence(tape2);
    CHECK(learner->step(tape2, make_step({1.0, 0.0, 0.0}, 0, 0), opts)
              .store_size == 1);
  }

  TEST_CASE("imp: cluster budget overflow is a hard error") {
    LearnerConfig cfg = identity_config("online_imp");
    cfg.cluster_capacity = 2;
    auto learner = make_learner(cfg, 5);
    Tape tape;
    learner->begin_sequence(tape);
    StepOptions opts;
    learner->step(tape, make_step({9.0, 0.0, 0.0}, 0, 0), opts);
    learner->step(tape, make_step({0.0, 9.0, 0.0}, 1, 1), opts);
    CHECK_THROWS_AS(
        learner->step(tape, make_step({0.0, 0.0, 9.0}, 2, 2), opts),
        InvariantViolation);
  }

  TEST_CASE("lstm baseline: zero weights give a uniform distribution and "
            "û = 0.5") {
    LearnerConfig cfg = identity_config("lstm");
    auto learner = make_learner(cfg, 3);
    for (const auto& e : learner->params().entries()) {
      auto& t = learner->params().value(e.name);
      for (Real& x : t.v) x = 0;
    }
    Tape tape;
    learner->begin_sequence(tape);
    const StepResult res =
        learner->step(tape, make_step({1.0, 2.0, 3.0}, 0, 0), StepOptions{});
    CHECK(res.pred.novelty == 0.5);
    for (double s : res.pred.class_scores)
      CHECK(s == doctest::Approx(1.0 / cfg.max_slots).epsilon(1e-12));
    // No class known before the first label is consumed.
    CHECK(res.pred.predicted_class == -1);
  }

  TEST_CASE("lstm baseline consumes the label only after predicting") {
    LearnerConfig cfg = identity_config("lstm");
    auto learner = make_learner(cfg, 11);
    const Sequence labeled = make_sequence({make_step({1.0, 0.0, 0.0}, 0, 0),
                                            make_step({0.0, 1.0, 0.0}, 1, 1)},
                                           2);
    Sequence masked = labeled;
    masked.steps[1].y_tilde = kUnlabeled;
    recompute_novelty(masked);
    const auto a = run_prefix(*learner, labeled, 2);
    const auto b = run_prefix(*learner, masked, 2);
    // Step 2's own label cannot influence step 2's prediction.
    CHECK(a[1].novelty == b[1].novelty);
    CHECK(a[1].class_scores == b[1].class_scores);
  }

  TEST_CASE("lstm baseline rollout gradients match finite differences") {
    LearnerConfig cfg = identity_config("lstm");
    cfg.max_slots = 4;
    cfg.lstm_hidden = 3;
    auto learner = make_learner(cfg, 21);
    const Sequence seq = make_sequence(
        {make_step({1.0, 0.0, 0.0}, 0, 0), make_step({0.0, 1.0, 0.0}, 1, 1),
         make_step({1.0, 0.1, 0.0}, 0, kUnlabeled),
         make_step({0.9, 0.0, 0.1}, 0, 0), make_step({0.1, 1.0, 0.0}, 1, 1),
         make_step({0.0, 0.9, 0.1}, 1, 1)},
        2);
    auto build_loss = [&](OnlineLearner& lrn, Tape& t) {
      lrn.begin_sequence(t);
      std::vector<Tape::NodeId> terms;
      StepOptions opts;
      for (const TimeStep& ts : seq.steps) {
        const StepResult res = lrn.step(t, ts, opts);
        terms.push_back(res.novelty);
        if (res.log_scores != kNoNode)
          terms.push_back(t.index(res.log_scores, ts.y));
      }
      return t.sum(t.concat(terms));
    };

    fd::Inputs inputs;
    for (const auto& e : learner->params().entries())
      inputs.emplace(e.name, e.value);
    // Analytic gradients through the learner's own staged leaves.
    std::map<std::string, Tensor> analytic;
    {
      Tape tape;
      tape.backward(build_loss(*learner, tape));
      for (const auto& [name, id] : tape.trainable_leaves())
        analytic.emplace(name, tape.grad(id));
    }
    const fd::Report rep = fd::check_named_gradients(
        inputs,
        [&](const fd::Inputs& values) {
          auto probe = make_learner(cfg, 21);
          for (const auto& [name, t] : values)
            probe->params().value(name) = t;
          Tape tape;
          return static_cast<double>(
              tape.scalar_value(build_loss(*probe, tape)));
        },
        analytic);
    INFO("worst ", rep.worst);
    CHECK(rep.max_rel < 1e-5);
  }

  TEST_CASE("online protocol: truncating the future never changes a "
            "prediction") {
    SamplerConfig sampler;
    sampler.sequence_length = 12;
    sampler.environments = 2;
    sampler.feature_dim = 3;
    sampler.context_cue_dim = 2;
    for (const std::string& name : learner_names()) {
      LearnerConfig cfg = identity_config(name);
      auto learner = make_learner(cfg, 31);
      for (uint64_t i = 0; i < 3; ++i) {
        const Sequence seq = generate_sequence(sampler, 17, "test", i);
        const auto full = run_prefix(*learner, seq, seq.steps.size());
        for (size_t cut = 1; cut <= seq.steps.size(); ++cut) {
          const auto prefix = run_prefix(*learner, seq, cut);
          for (size_t t = 0; t < cut; ++t) {
            CHECK(prefix[t].novelty == full[t].novelty);
            CHECK(prefix[t].predicted_class == full[t].predicted_class);
            CHECK(prefix[t].class_scores == full[t].class_scores);
          }
        }
      }
    }
  }

  TEST_CASE("state size: prototype memory is bounded by classes, the "
            "exemplar store grows with labeled steps") {
    SamplerConfig sampler;
    sampler.sequence_length = 30;
    sampler.environments = 2;
    sampler.feature_dim = 3;
    sampler.context_cue_dim = 2;
    const Sequence seq = generate_sequence(sampler, 23, "test", 0);
    int labeled = 0;
    auto opn = make_learner(identity_config("online_protonet"), 3);
    auto omn = make_learner(identity_config("online_matchingnet"), 3);
    Tape ta, tb;
    opn->begin_sequence(ta);
    omn->begin_sequence(tb);
    StepOptions opts;
    std::set<int> labeled_classes;
    for (const TimeStep& ts : seq.steps) {
      if (ts.y_tilde != kUnlabeled) {
        ++labeled;
        labeled_classes.insert(ts.y);
      }
      const StepResult a = opn->step(ta, ts, opts);
      const StepResult b = omn->step(tb, ts, opts);
      CHECK(a.store_size == static_cast<int>(labeled_classes.size()));
      CHECK(b.store_size == labeled);
    }
  }

  TEST_CASE("unknown learner names are rejected") {
    LearnerConfig cfg = identity_config("cpm");
    cfg.name = "protonet";
    CHECK_THROWS_AS(make_learner(cfg, 1), ConfigError);
  }
}
