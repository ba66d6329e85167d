#include "protostream/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "protostream/checkpoint.hpp"
#include "protostream/errors.hpp"
#include "protostream/evaluation.hpp"

namespace protostream {

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (learning_rate < 0) throw ConfigError("train.learning_rate must be >= 0");
  for (size_t i = 1; i < decay_milestones.size(); ++i) {
    if (decay_milestones[i] <= decay_milestones[i - 1])
      throw ConfigError("train.decay_milestones must be strictly increasing");
  }
  if (decay_factor <= 0 || decay_factor > 1)
    throw ConfigError("train.decay_factor must be in (0, 1]");
  if (lambda_bce < 0) throw ConfigError("train.lambda_bce must be >= 0");
  if (clip_norm <= 0) throw ConfigError("train.clip_norm must be > 0");
  if (ramp_increment < 0) throw ConfigError("train.ramp_increment must be >= 0");
  if (ramp_interval < 1) throw ConfigError("train.ramp_interval must be >= 1");
  if (val_interval < 1) throw ConfigError("train.val_interval must be >= 1");
  if (val_sequences < 1) throw ConfigError("train.val_sequences must be >= 1");
}

double ramp_probability(int64_t step, double increment, int interval) {
  if (step < 0) throw ContractViolation("ramp_probability: step must be >= 0");
  const double p = increment * static_cast<double>(step / interval);
  return std::min(1.0, p);
}

LossBreakdown sequence_loss(Tape& tape, const std::vector<StepResult>& steps,
                            const Sequence& seq, double lambda_bce,
                            bool masked) {
  if (steps.size() != seq.steps.size())
    throw ContractViolation("sequence_loss: predictions misaligned with steps");
  constexpr Real kEps = Real(1e-7);
  std::vector<Tape::NodeId> bce_terms;
  std::vector<Tape::NodeId> ce_terms;
  LossBreakdown out;
  for (size_t t = 0; t < steps.size(); ++t) {
    const TimeStep& ts = seq.steps[t];
    const StepResult& res = steps[t];
    const bool counted = masked ? ts.y_tilde != kUnlabeled : true;
    if (!counted) continue;
    ++out.counted_steps;
    const Tape::NodeId u_hat =
        tape.clamp(res.novelty, kEps, Real(1) - kEps);
    bce_terms.push_back(ts.novel
                            ? tape.neg(tape.log(u_hat))
                            : tape.neg(tape.log(tape.one_minus(u_hat))));
    if (!ts.novel) {
      // The class has a known slot; cross-entropy on its log probability.
      const auto it =
          std::find(res.classes.begin(), res.classes.end(), ts.y);
      if (it == res.classes.end() || res.log_scores == kNoNode)
        throw InvariantViolation(
            "sequence_loss: known class " + std::to_string(ts.y) +
            " missing from prediction support at step " + std::to_string(t));
      const int pos = static_cast<int>(it - res.classes.begin());
      ce_terms.push_back(tape.neg(tape.index(res.log_scores, pos)));
    }
  }
  const Real inv_t = Real(1) / static_cast<Real>(seq.steps.size());
  const Tape::NodeId bce =
      bce_terms.empty()
          ? tape.scalar(0)
          : tape.scale_shift(tape.sum(tape.concat(bce_terms)), inv_t, 0);
  const Tape::NodeId ce =
      ce_terms.empty()
          ? tape.scalar(0)
          : tape.scale_shift(tape.sum(tape.concat(ce_terms)), inv_t, 0);
  out.node = tape.add(tape.scale_shift(bce, static_cast<Real>(lambda_bce), 0),
                      ce);
  out.bce = static_cast<double>(tape.scalar_value(bce));
  out.ce = static_cast<double>(tape.scalar_value(ce));
  out.total = static_cast<double>(tape.scalar_value(out.node));
  return out;
}

RolloutOutput rollout_sequence(Tape& tape, OnlineLearner& learner,
                               const Sequence& seq,
                               const RolloutOptions& options) {
  learner.begin_sequence(tape);
  RolloutOutput out;
  out.steps.reserve(seq.steps.size());
  for (int t = 0; t < seq.length(); ++t) {
    const TimeStep& ts = seq.steps[t];
    StepOptions opts;
    opts.training = options.training;
    if (options.training && ts.y_tilde == kUnlabeled &&
        options.ramp_rng != nullptr) {
      opts.apply_unlabeled_write =
          options.ramp_rng->bernoulli(options.unlabeled_write_prob);
    }
    try {
      out.steps.push_back(learner.step(tape, ts, opts));
    } catch (const InvariantViolation& e) {
      throw InvariantViolation("sequence seed " + std::to_string(seq.seed) +
                               ", step " + std::to_string(t) + ": " +
                               e.what());
    }
  }
  out.loss = sequence_loss(tape, out.steps, seq, options.lambda_bce,
                           options.masked_loss);
  return out;
}

const char* train_log_header() {
  return "step,loss,bce,ce,grad_norm,lr,ramp_p,beta_r,gamma_r,beta_w,gamma_w,"
         "val_ap";
}

namespace {

struct BatchRollout {
  GradMap grads;
  double loss = 0, bce = 0, ce = 0;
  double beta_r = 0, gamma_r = 0, beta_w = 0, gamma_w = 0;
  int diag_steps = 0;
};

BatchRollout run_one(OnlineLearner& learner, const Sequence& seq,
                     const RolloutOptions& options) {
  Tape tape;
  RolloutOutput rollout = rollout_sequence(tape, learner, seq, options);
  BatchRollout out;
  out.loss = rollout.loss.total;
  out.bce = rollout.loss.bce;
  out.ce = rollout.loss.ce;
  for (const StepResult& res : rollout.steps) {
    if (!std::isnan(res.beta_r)) {
      out.beta_r += res.beta_r;
      out.gamma_r += res.gamma_r;
      out.beta_w += std::isnan(res.beta_w) ? 0 : res.beta_w;
      out.gamma_w += std::isnan(res.gamma_w) ? 0 : res.gamma_w;
      ++out.diag_steps;
    }
  }
  tape.backward(rollout.loss.node);
  const auto staged = tape.trainable_leaves();
  for (const auto& [name, id] : staged) {
    const Tensor& g = tape.grad(id);
    auto [it, fresh] = out.grads.try_emplace(name, Tensor::zeros(g.shape));
    for (int i = 0; i < g.numel(); ++i) it->second.v[i] += g.v[i];
  }
  return out;
}

std::string csv_cell(double x) { return format_double(x); }

}  // namespace

TrainSummary train(const LearnerConfig& learner_config,
                   const TrainConfig& train_config,
                   const SamplerConfig& train_sampler,
                   const SamplerConfig& val_sampler, uint64_t master_seed,
                   const TrainOptions& options) {
  train_config.validate();
  std::filesystem::create_directories(options.out_dir);

  std::unique_ptr<OnlineLearner> learner =
      make_learner(learner_config, master_seed);
  Adam adam(AdamConfig{train_config.learning_rate, 0.9, 0.999, 1e-8});

  TrainSummary summary;
  summary.best_checkpoint = options.out_dir + "/best.ckpt";
  summary.last_checkpoint = options.out_dir + "/last.ckpt";
  summary.log_path = options.out_dir + "/train_log.csv";

  int64_t start_step = 0;
  double best_ap = -1;
  int64_t best_step = -1;
  if (!options.resume_checkpoint.empty()) {
    const CheckpointHeader header =
        load_checkpoint(options.resume_checkpoint, learner->params(), &adam);
    if (header.learner != learner->name())
      throw ConfigError("checkpoint/learner mismatch: checkpoint is for '" +
                        header.learner + "', config asks for '" +
                        learner->name() + "'");
    start_step = header.train_step;
    best_ap = header.best_val_ap;
  }

  std::ofstream log(summary.log_path,
                    start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw ConfigError("cannot write training log: " + summary.log_path);
  if (start_step == 0) log << train_log_header() << "\n";

  // Validation pool is fixed for the whole run.
  std::vector<Sequence> val_seqs = generate_sequences(
      val_sampler, master_seed, "val",
      static_cast<size_t>(train_config.val_sequences), options.workers);

  const int workers = std::max(1, options.workers);
  std::vector<std::unique_ptr<OnlineLearner>> worker_learners;
  for (int w = 1; w < workers; ++w)
    worker_learners.push_back(make_learner(learner_config, master_seed));

  const int batch = train_config.batch_size;
  for (int64_t s = start_step; s < train_config.steps; ++s) {
    double lr = train_config.learning_rate;
    for (int milestone : train_config.decay_milestones) {
      if (s >= milestone) lr *= train_config.decay_factor;
    }
    const double ramp_p = ramp_probability(s, train_config.ramp_increment,
                                           train_config.ramp_interval);

    std::vector<Sequence> seqs(batch);
    for (int i = 0; i < batch; ++i) {
      seqs[i] = generate_sequence(train_sampler, master_seed, "train",
                                  static_cast<uint64_t>(s) * batch + i);
    }

    std::vector<BatchRollout> parts(batch);
    auto roll_index = [&](OnlineLearner& lrn, int i) {
      RngStream ramp_rng = substream(master_seed, "ramp",
                                     static_cast<uint64_t>(s) * batch + i);
      RolloutOptions ropts;
      ropts.training = true;
      ropts.lambda_bce = train_config.lambda_bce;
      ropts.masked_loss = train_config.masked_loss;
      ropts.unlabeled_write_prob = ramp_p;
      ropts.ramp_rng = &ramp_rng;
      parts[i] = run_one(lrn, seqs[i], ropts);
    };
    if (workers == 1 || batch == 1) {
      for (int i = 0; i < batch; ++i) roll_index(*learner, i);
    } else {
      for (auto& wl : worker_learners) {
        for (const auto& e : learner->params().entries())
          wl->params().value(e.name) = e.value;
      }
      std::vector<std::thread> pool;
      for (int w = 0; w < std::min(workers, batch); ++w) {
        pool.emplace_back([&, w] {
          OnlineLearner& lrn =
              w == 0 ? *learner : *worker_learners[w - 1];
          for (int i = w; i < batch; i += std::min(workers, batch))
            roll_index(lrn, i);
        });
      }
      for (auto& th : pool) th.join();
    }

    // Ordered mean reduction keeps results independent of worker count.
    GradMap grads = learner->params().zero_grads();
    double loss = 0, bce = 0, ce = 0;
    double diag[4] = {0, 0, 0, 0};
    int diag_steps = 0;
    for (const BatchRollout& part : parts) {
      loss += part.loss;
      bce += part.bce;
      ce += part.ce;
      diag[0] += part.beta_r;
      diag[1] += part.gamma_r;
      diag[2] += part.beta_w;
      diag[3] += part.gamma_w;
      diag_steps += part.diag_steps;
      for (auto& [name, g] : grads) {
        const auto it = part.grads.find(name);
        if (it == part.grads.end()) continue;
        for (int i = 0; i < g.numel(); ++i) g.v[i] += it->second.v[i];
      }
    }
    const double inv_b = 1.0 / batch;
    loss *= inv_b;
    bce *= inv_b;
    ce *= inv_b;
    for (auto& [name, g] : grads) {
      for (Real& x : g.v) x = static_cast<Real>(x * inv_b);
    }
    if (!std::isfinite(loss))
      throw InvariantViolation("train step " + std::to_string(s + 1) +
                               ": non-finite loss");
    const double grad_norm = clip_global_norm(grads, train_config.clip_norm);
    adam.step(learner->params(), grads, lr);

    std::string val_cell;
    const bool do_val = ((s + 1) % train_config.val_interval == 0) ||
                        (s + 1 == train_config.steps);
    if (do_val) {
      const std::vector<PredictionRecord> records =
          evaluate_learner(learner_config, master_seed, learner->params(),
                           val_seqs, EvalOptions{options.workers});
      const double ap = average_precision(records);
      val_cell = csv_cell(ap);
      if (ap > best_ap) {
        best_ap = ap;
        best_step = s + 1;
        CheckpointHeader header;
        header.learner = learner->name();
        header.config_hash = options.config_hash;
        header.train_step = s + 1;
        header.best_val_ap = best_ap;
        save_checkpoint(summary.best_checkpoint, header, learner->params());
      }
    }

    log << (s + 1) << "," << csv_cell(loss) << "," << csv_cell(bce) << ","
        << csv_cell(ce) << "," << csv_cell(grad_norm) << "," << csv_cell(lr)
        << "," << csv_cell(ramp_p);
    for (int d = 0; d < 4; ++d) {
      log << ",";
      if (diag_steps > 0) log << csv_cell(diag[d] / diag_steps);
    }
    log << "," << val_cell << "\n";
    summary.final_loss = loss;
  }
  log.flush();

  CheckpointHeader header;
  header.learner = learner->name();
  header.config_hash = options.config_hash;
  header.train_step = train_config.steps;
  header.best_val_ap = best_ap;
  save_checkpoint(summary.last_checkpoint, header, learner->params(), &adam);
  if (best_step < 0) {
    // No validation pass ran; fall back to the final parameters.
    save_checkpoint(summary.best_checkpoint, header, learner->params());
  }
  summary.steps_done = train_config.steps;
  summary.best_val_ap = best_ap;
  summary.best_step = best_step;
  return summary;
}

}  // namespace protostream
