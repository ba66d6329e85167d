#include "protostream/learners.hpp"

#include <algorithm>
#include <optional>
#include <unordered_map>

#include "protostream/errors.hpp"

namespace protostream {

namespace {

StepPrediction extract_prediction(Tape& tape, Tape::NodeId novelty,
                                  Tape::NodeId scores,
                                  const std::vector<int>& classes) {
  StepPrediction p;
  p.novelty = static_cast<double>(tape.scalar_value(novelty));
  p.classes = classes;
  if (scores != kNoNode && !classes.empty()) {
    const Tensor& s = tape.value(scores);
    p.class_scores.assign(s.v.begin(), s.v.end());
    int best = 0;
    for (int i = 1; i < s.numel(); ++i) {
      if (s.v[i] > s.v[best]) best = i;
    }
    p.predicted_class = classes[best];
  }
  return p;
}

void fill_control_diagnostics(Tape& tape, const ControlNodes& control,
                              StepResult& out) {
  if (control.beta_read != kNoNode)
    out.beta_r = static_cast<double>(tape.scalar_value(control.beta_read));
  if (control.gamma_read != kNoNode)
    out.gamma_r = static_cast<double>(tape.scalar_value(control.gamma_read));
  if (control.beta_write != kNoNode)
    out.beta_w = static_cast<double>(tape.scalar_value(control.beta_write));
  if (control.gamma_write != kNoNode)
    out.gamma_w = static_cast<double>(tape.scalar_value(control.gamma_write));
}

// ---------------------------------------------------------------------------
// Contextual prototype learner. Online ProtoNet is the same machine with the
// whole contextual pathway ablated, so the two share this implementation.

class CpmLearner : public OnlineLearner {
 public:
  CpmLearner(std::string name, const LearnerConfig& cfg, uint64_t master_seed)
      : name_(std::move(name)), cfg_(cfg) {
    needs_rnn_ = cfg_.ablation.context_bias || cfg_.ablation.predicted_control ||
                 cfg_.ablation.metric_scaling;
    enc_spec_ = EncoderSpec{cfg_.input_dim, cfg_.encoder_hidden,
                            cfg_.embedding_dim, cfg_.identity_encoder};
    mem_opts_.capacity = cfg_.max_slots;
    mem_opts_.gated_averaging = cfg_.gated_averaging;
    mem_opts_.mode = cfg_.cosine ? DissimilarityMode::kCosine
                                 : DissimilarityMode::kSquaredEuclidean;
    {
      RngStream rng = substream(master_seed, "init/encoder");
      add_encoder_params(params_, "encoder", enc_spec_, rng);
    }
    if (needs_rnn_) {
      lstm_spec_ = LstmSpec{cfg_.embedding_dim, cfg_.lstm_hidden};
      head_spec_ = ControlHeadSpec{cfg_.lstm_hidden, cfg_.embedding_dim};
      RngStream lstm_rng = substream(master_seed, "init/lstm");
      add_lstm_params(params_, "lstm", lstm_spec_, lstm_rng);
      RngStream head_rng = substream(master_seed, "init/head");
      add_control_head_params(params_, "head", head_spec_, head_rng);
    }
    if (!cfg_.ablation.predicted_control)
      add_scalar_control_params(params_, "control");
    RngStream mem_rng = substream(master_seed, "init/memory");
    add_memory_params(params_, "memory", mem_opts_, cfg_.embedding_dim,
                      mem_rng);
  }

  const std::string& name() const override { return name_; }
  ParameterStore& params() override { return params_; }
  const ParameterStore& params() const override { return params_; }

  void begin_sequence(Tape& tape) override {
    staged_ = params_.stage(tape);
    memory_.emplace(mem_opts_, staged_, "memory");
    if (needs_rnn_) state_ = lstm_zero_state(tape, cfg_.lstm_hidden);
  }

  StepResult step(Tape& tape, const TimeStep& ts,
                  const StepOptions& opts) override {
    const Tape::NodeId x = tape.constant(Tensor::from_vector(ts.x));
    const Tape::NodeId h_cnn = encode(tape, staged_, "encoder", enc_spec_, x);

    Tape::NodeId h = h_cnn;
    ControlNodes control;
    if (needs_rnn_) {
      state_ = lstm_step(tape, staged_, "lstm", h_cnn, state_);
      const ControlStep cs =
          control_step(tape, staged_, "head", head_spec_, state_.h);
      if (cfg_.ablation.context_bias) h = tape.add(h_cnn, cs.context_bias);
      control = cfg_.ablation.predicted_control
                    ? cs.control
                    : scalar_controls(tape, staged_, "control");
      control.metric =
          cfg_.ablation.metric_scaling ? cs.control.metric : kNoNode;
    } else {
      control = scalar_controls(tape, staged_, "control");
    }

    const ProtoMemory::ReadResult rr = memory_->read(tape, h, control);
    StepResult out;
    out.novelty = rr.novelty;
    out.log_scores = rr.log_scores;
    out.classes = rr.slot_classes;
    out.embedding = h;
    out.pred = extract_prediction(tape, rr.novelty, rr.scores, rr.slot_classes);
    fill_control_diagnostics(tape, control, out);

    if (ts.y_tilde != kUnlabeled) {
      memory_->write_labeled(tape, h, ts.y_tilde);
    } else if (!memory_->empty() && opts.apply_unlabeled_write) {
      const Tape::NodeId u_w =
          memory_->write_novelty(tape, rr.min_distance, control);
      memory_->write_unlabeled(tape, h, rr, u_w);
    }
    out.store_size = memory_->occupied();
    return out;
  }

  ProtoMemory& memory() { return *memory_; }

 private:
  std::string name_;
  LearnerConfig cfg_;
  bool needs_rnn_ = false;
  EncoderSpec enc_spec_;
  LstmSpec lstm_spec_;
  ControlHeadSpec head_spec_;
  MemoryOptions mem_opts_;
  ParameterStore params_;
  StagedParams staged_;
  std::optional<ProtoMemory> memory_;
  LstmState state_;
};

// ---------------------------------------------------------------------------
// Online matching network: stores every labeled embedding verbatim and
// scores classes by their nearest exemplar. Unlabeled steps are skipped.

class MatchingNetLearner : public OnlineLearner {
 public:
  MatchingNetLearner(const LearnerConfig& cfg, uint64_t master_seed)
      : name_("online_matchingnet"), cfg_(cfg) {
    enc_spec_ = EncoderSpec{cfg_.input_dim, cfg_.encoder_hidden,
                            cfg_.embedding_dim, cfg_.identity_encoder};
    RngStream rng = substream(master_seed, "init/encoder");
    add_encoder_params(params_, "encoder", enc_spec_, rng);
    add_scalar_control_params(params_, "control", /*write_pair=*/false);
  }

  const std::string& name() const override { return name_; }
  ParameterStore& params() override { return params_; }
  const ParameterStore& params() const override { return params_; }

  void begin_sequence(Tape& tape) override {
    staged_ = params_.stage(tape);
    class_order_.clear();
    exemplars_.clear();
    exemplar_count_ = 0;
  }

  StepResult step(Tape& tape, const TimeStep& ts,
                  const StepOptions& opts) override {
    (void)opts;
    const Tape::NodeId x = tape.constant(Tensor::from_vector(ts.x));
    const Tape::NodeId h = encode(tape, staged_, "encoder", enc_spec_, x);
    const ControlNodes control =
        scalar_controls(tape, staged_, "control", /*write_pair=*/false);

    StepResult out;
    out.embedding = h;
    out.classes = class_order_;
    if (class_order_.empty()) {
      out.novelty = tape.constant(Tensor::scalar(Real(1)));
    } else {
      std::vector<Tape::NodeId> class_dists;
      class_dists.reserve(class_order_.size());
      for (int cls : class_order_) {
        std::vector<Tape::NodeId> dists;
        for (Tape::NodeId ex : exemplars_[cls])
          dists.push_back(tape.sq_diff_sum(h, ex));
        class_dists.push_back(tape.min_slots(tape.concat(dists)));
      }
      const Tape::NodeId stacked = tape.concat(class_dists);
      const Tape::NodeId min_dist = tape.min_slots(stacked);
      out.novelty = tape.sigmoid(tape.div(
          tape.sub(min_dist, control.beta_read), control.gamma_read));
      const SoftmaxNodes sm = stable_softmax_nodes(tape, tape.neg(stacked));
      out.log_scores = sm.log_scores;
      out.pred = extract_prediction(tape, out.novelty, sm.scores, class_order_);
      fill_control_diagnostics(tape, control, out);
      if (ts.y_tilde != kUnlabeled) store(tape, h, ts.y_tilde);
      out.store_size = static_cast<int>(exemplar_count_);
      return out;
    }
    out.pred = extract_prediction(tape, out.novelty, kNoNode, class_order_);
    fill_control_diagnostics(tape, control, out);
    if (ts.y_tilde != kUnlabeled) store(tape, h, ts.y_tilde);
    out.store_size = static_cast<int>(exemplar_count_);
    return out;
  }

  size_t exemplar_count() const { return exemplar_count_; }

 private:
  void store(Tape& tape, Tape::NodeId h, int label) {
    (void)tape;
    auto [it, fresh] = exemplars_.try_emplace(label);
    if (fresh) class_order_.push_back(label);
    it->second.push_back(h);
    ++exemplar_count_;
  }

  std::string name_;
  LearnerConfig cfg_;
  EncoderSpec enc_spec_;
  ParameterStore params_;
  StagedParams staged_;
  std::vector<int> class_order_;
  std::unordered_map<int, std::vector<Tape::NodeId>> exemplars_;
  size_t exemplar_count_ = 0;
};

// ---------------------------------------------------------------------------
// Online infinite-mixture prototypes: a class may own several clusters, and
// clusters created from unlabeled examples adopt the label of the first
// labeled example that joins them. Creation is thresholded on the distance
// to the nearest candidate cluster (same rule as the prototype learner's
// write novelty).

class ImpLearner : public OnlineLearner {
 public:
  ImpLearner(const LearnerConfig& cfg, uint64_t master_seed)
      : name_("online_imp"), cfg_(cfg) {
    enc_spec_ = EncoderSpec{cfg_.input_dim, cfg_.encoder_hidden,
                            cfg_.embedding_dim, cfg_.identity_encoder};
    RngStream rng = substream(master_seed, "init/encoder");
    add_encoder_params(params_, "encoder", enc_spec_, rng);
    add_scalar_control_params(params_, "control");
  }

  const std::string& name() const override { return name_; }
  ParameterStore& params() override { return params_; }
  const ParameterStore& params() const override { return params_; }

  void begin_sequence(Tape& tape) override {
    staged_ = params_.stage(tape);
    clusters_.clear();
  }

  StepResult step(Tape& tape, const TimeStep& ts,
                  const StepOptions& opts) override {
    const Tape::NodeId x = tape.constant(Tensor::from_vector(ts.x));
    const Tape::NodeId h = encode(tape, staged_, "encoder", enc_spec_, x);
    const ControlNodes control = scalar_controls(tape, staged_, "control");

    StepResult out;
    out.embedding = h;
    std::vector<Tape::NodeId> dists(clusters_.size());
    for (size_t i = 0; i < clusters_.size(); ++i)
      dists[i] = tape.sq_diff_sum(h, clusters_[i].centroid);

    // Known classes, in first-labeled order, scored by nearest owned cluster.
    std::vector<int> known;
    for (const Cluster& c : clusters_) {
      if (c.label >= 0 && std::find(known.begin(), known.end(), c.label) ==
                              known.end())
        known.push_back(c.label);
    }
    out.classes = known;
    if (clusters_.empty()) {
      out.novelty = tape.constant(Tensor::scalar(Real(1)));
      out.pred = extract_prediction(tape, out.novelty, kNoNode, known);
    } else {
      const Tape::NodeId min_all = tape.min_slots(tape.concat(dists));
      out.novelty = tape.sigmoid(tape.div(
          tape.sub(min_all, control.beta_read), control.gamma_read));
      if (!known.empty()) {
        std::vector<Tape::NodeId> class_dists;
        class_dists.reserve(known.size());
        for (int cls : known) {
          std::vector<Tape::NodeId> owned;
          for (size_t i = 0; i < clusters_.size(); ++i) {
            if (clusters_[i].label == cls) owned.push_back(dists[i]);
          }
          class_dists.push_back(tape.min_slots(tape.concat(owned)));
        }
        const SoftmaxNodes sm =
            stable_softmax_nodes(tape, tape.neg(tape.concat(class_dists)));
        out.log_scores = sm.log_scores;
        out.pred = extract_prediction(tape, out.novelty, sm.scores, known);
      } else {
        out.pred = extract_prediction(tape, out.novelty, kNoNode, known);
      }
    }
    fill_control_diagnostics(tape, control, out);

    update(tape, h, ts, dists, control, opts);
    out.store_size = static_cast<int>(clusters_.size());
    return out;
  }

  size_t cluster_count() const { return clusters_.size(); }
  int cluster_label(size_t i) const { return clusters_[i].label; }

 private:
  struct Cluster {
    Tape::NodeId centroid;
    int count = 1;
    int label = kUnlabeled;
  };

  void update(Tape& tape, Tape::NodeId h, const TimeStep& ts,
              const std::vector<Tape::NodeId>& dists,
              const ControlNodes& control, const StepOptions& opts) {
    const double threshold =
        static_cast<double>(tape.scalar_value(control.beta_write));
    if (ts.y_tilde != kUnlabeled) {
      // Candidates: clusters already carrying this label, or unlabeled ones.
      int best = -1;
      double best_dist = 0;
      for (size_t i = 0; i < clusters_.size(); ++i) {
        if (clusters_[i].label != ts.y_tilde &&
            clusters_[i].label != kUnlabeled)
          continue;
        const double d = static_cast<double>(tape.scalar_value(dists[i]));
        if (best < 0 || d < best_dist) {
          best = static_cast<int>(i);
          best_dist = d;
        }
      }
      if (best < 0 || best_dist > threshold) {
        create(tape, h, ts.y_tilde);
      } else {
        join(tape, static_cast<size_t>(best), h);
        if (clusters_[best].label == kUnlabeled)
          clusters_[best].label = ts.y_tilde;
      }
      return;
    }
    if (!opts.apply_unlabeled_write) return;
    int best = -1;
    double best_dist = 0;
    for (size_t i = 0; i < clusters_.size(); ++i) {
      const double d = static_cast<double>(tape.scalar_value(dists[i]));
      if (best < 0 || d < best_dist) {
        best = static_cast<int>(i);
        best_dist = d;
      }
    }
    if (best < 0 || best_dist > threshold) {
      create(tape, h, kUnlabeled);
    } else {
      join(tape, static_cast<size_t>(best), h);
    }
  }

  void create(Tape& tape, Tape::NodeId h, int label) {
    (void)tape;
    if (static_cast<int>(clusters_.size()) >= cfg_.cluster_capacity)
      throw InvariantViolation("cluster budget overflow (capacity " +
                               std::to_string(cfg_.cluster_capacity) + ")");
    clusters_.push_back(Cluster{h, 1, label});
  }

  void join(Tape& tape, size_t i, Tape::NodeId h) {
    Cluster& c = clusters_[i];
    const Tape::NodeId old_count =
        tape.constant(Tensor::scalar(static_cast<Real>(c.count)));
    const Tape::NodeId new_count =
        tape.constant(Tensor::scalar(static_cast<Real>(c.count + 1)));
    c.centroid = tape.div(tape.add(tape.mul(c.centroid, old_count), h),
                          new_count);
    c.count += 1;
  }

  std::string name_;
  LearnerConfig cfg_;
  EncoderSpec enc_spec_;
  ParameterStore params_;
  StagedParams staged_;
  std::vector<Cluster> clusters_;
};

// ---------------------------------------------------------------------------
// Stacked two-layer LSTM baseline. The input is the embedding concatenated
// with a one-hot of the PREVIOUS step's revealed label (all-zero when that
// step was unlabeled), so the prediction for the current input never sees
// its own label. The head emits max_slots class logits plus one logit
// reserved for "unknown".

class LstmBaselineLearner : public OnlineLearner {
 public:
  LstmBaselineLearner(const LearnerConfig& cfg, uint64_t master_seed)
      : name_("lstm"), cfg_(cfg) {
    enc_spec_ = EncoderSpec{cfg_.input_dim, cfg_.encoder_hidden,
                            cfg_.embedding_dim, cfg_.identity_encoder};
    lstm1_spec_ = LstmSpec{cfg_.embedding_dim + cfg_.max_slots,
                           cfg_.lstm_hidden};
    lstm2_spec_ = LstmSpec{cfg_.lstm_hidden, cfg_.lstm_hidden};
    {
      RngStream rng = substream(master_seed, "init/encoder");
      add_encoder_params(params_, "encoder", enc_spec_, rng);
    }
    {
      RngStream rng = substream(master_seed, "init/lstm1");
      add_lstm_params(params_, "lstm1", lstm1_spec_, rng);
    }
    {
      RngStream rng = substream(master_seed, "init/lstm2");
      add_lstm_params(params_, "lstm2", lstm2_spec_, rng);
    }
    RngStream rng = substream(master_seed, "init/head");
    params_.add("head/w", uniform_init({cfg_.max_slots + 1, cfg_.lstm_hidden},
                                       cfg_.lstm_hidden, rng));
    params_.add("head/b", Tensor::zeros({cfg_.max_slots + 1}));
    all_classes_.resize(cfg_.max_slots);
    for (int i = 0; i < cfg_.max_slots; ++i) all_classes_[i] = i;
  }

  const std::string& name() const override { return name_; }
  ParameterStore& params() override { return params_; }
  const ParameterStore& params() const override { return params_; }

  void begin_sequence(Tape& tape) override {
    staged_ = params_.stage(tape);
    state1_ = lstm_zero_state(tape, cfg_.lstm_hidden);
    state2_ = lstm_zero_state(tape, cfg_.lstm_hidden);
    prev_label_ = kUnlabeled;
    known_.assign(cfg_.max_slots, 0);
  }

  StepResult step(Tape& tape, const TimeStep& ts,
                  const StepOptions& opts) override {
    (void)opts;
    const Tape::NodeId x = tape.constant(Tensor::from_vector(ts.x));
    const Tape::NodeId h_cnn = encode(tape, staged_, "encoder", enc_spec_, x);
    Tensor onehot = Tensor::zeros({cfg_.max_slots});
    if (prev_label_ >= 0) {
      if (prev_label_ >= cfg_.max_slots)
        throw InvariantViolation("lstm baseline: label " +
                                 std::to_string(prev_label_) +
                                 " exceeds max_slots " +
                                 std::to_string(cfg_.max_slots));
      onehot.v[prev_label_] = Real(1);
    }
    const Tape::NodeId input =
        tape.concat({h_cnn, tape.constant(std::move(onehot))});
    state1_ = lstm_step(tape, staged_, "lstm1", input, state1_);
    state2_ = lstm_step(tape, staged_, "lstm2", state1_.h, state2_);
    const Tape::NodeId logits = tape.add(
        tape.matvec(staged_.at("head/w"), state2_.h), staged_.at("head/b"));
    const Tape::NodeId class_logits = tape.slice(logits, 0, cfg_.max_slots);
    const Tape::NodeId unknown_logit = tape.index(logits, cfg_.max_slots);

    StepResult out;
    out.embedding = h_cnn;
    out.novelty = tape.sigmoid(unknown_logit);
    const SoftmaxNodes sm = stable_softmax_nodes(tape, class_logits);
    out.log_scores = sm.log_scores;
    out.classes = all_classes_;
    out.pred.novelty = static_cast<double>(tape.scalar_value(out.novelty));
    out.pred.classes = all_classes_;
    const Tensor& s = tape.value(sm.scores);
    out.pred.class_scores.assign(s.v.begin(), s.v.end());
    int best = -1;
    for (int i = 0; i < cfg_.max_slots; ++i) {
      if (!known_[i]) continue;
      if (best < 0 || s.v[i] > s.v[best]) best = i;
    }
    out.pred.predicted_class = best;

    // The label is consumed only after the prediction is finalized.
    if (ts.y_tilde != kUnlabeled) {
      known_[ts.y_tilde] = 1;
      prev_label_ = ts.y_tilde;
    } else {
      prev_label_ = kUnlabeled;
    }
    return out;
  }

 private:
  std::string name_;
  LearnerConfig cfg_;
  EncoderSpec enc_spec_;
  LstmSpec lstm1_spec_;
  LstmSpec lstm2_spec_;
  ParameterStore params_;
  StagedParams staged_;
  LstmState state1_;
  LstmState state2_;
  int prev_label_ = kUnlabeled;
  std::vector<char> known_;
  std::vector<int> all_classes_;
};

}  // namespace

void LearnerConfig::validate() const {
  const auto& names = learner_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw ConfigError("unknown learner: " + name);
  if (input_dim < 1) throw ConfigError("learner.input_dim must be >= 1");
  if (embedding_dim < 1)
    throw ConfigError("learner.embedding_dim must be >= 1");
  if (lstm_hidden < 1) throw ConfigError("learner.lstm_hidden must be >= 1");
  if (max_slots < 1) throw ConfigError("learner.max_slots must be >= 1");
  if (cluster_capacity < 1)
    throw ConfigError("learner.cluster_capacity must be >= 1");
  if (identity_encoder && input_dim != embedding_dim)
    throw ConfigError(
        "identity encoder requires input_dim == embedding_dim (" +
        std::to_string(input_dim) + " vs " + std::to_string(embedding_dim) +
        ")");
}

const std::vector<std::string>& learner_names() {
  static const std::vector<std::string> names = {
      "cpm", "online_protonet", "online_matchingnet", "online_imp", "lstm"};
  return names;
}

std::unique_ptr<OnlineLearner> make_learner(const LearnerConfig& config,
                                            uint64_t master_seed) {
  config.validate();
  if (config.name == "cpm")
    return std::make_unique<CpmLearner>("cpm", config, master_seed);
  if (config.name == "online_protonet") {
    // The same machine with the contextual pathway removed entirely.
    LearnerConfig cfg = config;
    cfg.ablation = AblationFlags{false, false, false};
    cfg.gated_averaging = false;
    cfg.cosine = false;
    return std::make_unique<CpmLearner>("online_protonet", cfg, master_seed);
  }
  if (config.name == "online_matchingnet")
    return std::make_unique<MatchingNetLearner>(config, master_seed);
  if (config.name == "online_imp")
    return std::make_unique<ImpLearner>(config, master_seed);
  if (config.name == "lstm")
    return std::make_unique<LstmBaselineLearner>(config, master_seed);
  throw ConfigError("unknown learner: " + config.name);
}

}  // namespace protostream
