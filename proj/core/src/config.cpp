#include "protostream/config.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "protostream/errors.hpp"

extern char** environ;

namespace protostream {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object())
    throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("config: unknown key '" +
                        (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out,
                const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" +
                      (where.empty() ? key : where + "." + key) +
                      "': " + e.what());
  }
}

json sampler_to_json(const SamplerConfig& s) {
  return json{{"sequence_length", s.sequence_length},
              {"environments", s.environments},
              {"switch_probability", s.switch_probability},
              {"crp_alpha", s.crp_alpha},
              {"crp_theta", s.crp_theta},
              {"max_appearances", s.max_appearances},
              {"label_ratio", s.label_ratio},
              {"supervised", s.supervised},
              {"feature_dim", s.feature_dim},
              {"context_cue_dim", s.context_cue_dim},
              {"spatial_cue", s.spatial_cue},
              {"feature_noise", s.feature_noise},
              {"cue_noise", s.cue_noise},
              {"ambiguity", s.ambiguity},
              {"shuffle", s.shuffle}};
}

SamplerConfig sampler_from_json(const json& j) {
  check_keys(j,
             {"sequence_length", "environments", "switch_probability",
              "crp_alpha", "crp_theta", "max_appearances", "label_ratio",
              "supervised", "feature_dim", "context_cue_dim", "spatial_cue",
              "feature_noise", "cue_noise", "ambiguity", "shuffle"},
             "sampler");
  SamplerConfig s;
  read_field(j, "sequence_length", s.sequence_length, "sampler");
  read_field(j, "environments", s.environments, "sampler");
  read_field(j, "switch_probability", s.switch_probability, "sampler");
  read_field(j, "crp_alpha", s.crp_alpha, "sampler");
  read_field(j, "crp_theta", s.crp_theta, "sampler");
  read_field(j, "max_appearances", s.max_appearances, "sampler");
  read_field(j, "label_ratio", s.label_ratio, "sampler");
  read_field(j, "supervised", s.supervised, "sampler");
  read_field(j, "feature_dim", s.feature_dim, "sampler");
  read_field(j, "context_cue_dim", s.context_cue_dim, "sampler");
  read_field(j, "spatial_cue", s.spatial_cue, "sampler");
  read_field(j, "feature_noise", s.feature_noise, "sampler");
  read_field(j, "cue_noise", s.cue_noise, "sampler");
  read_field(j, "ambiguity", s.ambiguity, "sampler");
  read_field(j, "shuffle", s.shuffle, "sampler");
  return s;
}

json learner_to_json(const LearnerConfig& l) {
  return json{{"name", l.name},
              {"embedding_dim", l.embedding_dim},
              {"encoder_hidden", l.encoder_hidden},
              {"identity_encoder", l.identity_encoder},
              {"lstm_hidden", l.lstm_hidden},
              {"max_slots", l.max_slots},
              {"cluster_capacity", l.cluster_capacity},
              {"context_bias", l.ablation.context_bias},
              {"predicted_control", l.ablation.predicted_control},
              {"metric_scaling", l.ablation.metric_scaling},
              {"gated_averaging", l.gated_averaging},
              {"cosine", l.cosine}};
}

LearnerConfig learner_from_json(const json& j) {
  check_keys(j,
             {"name", "embedding_dim", "encoder_hidden", "identity_encoder",
              "lstm_hidden", "max_slots", "cluster_capacity", "context_bias",
              "predicted_control", "metric_scaling", "gated_averaging",
              "cosine"},
             "learner");
  LearnerConfig l;
  read_field(j, "name", l.name, "learner");
  read_field(j, "embedding_dim", l.embedding_dim, "learner");
  read_field(j, "encoder_hidden", l.encoder_hidden, "learner");
  read_field(j, "identity_encoder", l.identity_encoder, "learner");
  read_field(j, "lstm_hidden", l.lstm_hidden, "learner");
  read_field(j, "max_slots", l.max_slots, "learner");
  read_field(j, "cluster_capacity", l.cluster_capacity, "learner");
  read_field(j, "context_bias", l.ablation.context_bias, "learner");
  read_field(j, "predicted_control", l.ablation.predicted_control, "learner");
  read_field(j, "metric_scaling", l.ablation.metric_scaling, "learner");
  read_field(j, "gated_averaging", l.gated_averaging, "learner");
  read_field(j, "cosine", l.cosine, "learner");
  return l;
}

json train_to_json(const TrainConfig& t) {
  return json{{"steps", t.steps},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"decay_milestones", t.decay_milestones},
              {"decay_factor", t.decay_factor},
              {"lambda_bce", t.lambda_bce},
              {"clip_norm", t.clip_norm},
              {"ramp_increment", t.ramp_increment},
              {"ramp_interval", t.ramp_interval},
              {"val_interval", t.val_interval},
              {"val_sequences", t.val_sequences},
              {"masked_loss", t.masked_loss}};
}

TrainConfig train_from_json(const json& j) {
  check_keys(j,
             {"steps", "batch_size", "learning_rate", "decay_milestones",
              "decay_factor", "lambda_bce", "clip_norm", "ramp_increment",
              "ramp_interval", "val_interval", "val_sequences", "masked_loss"},
             "train");
  TrainConfig t;
  read_field(j, "steps", t.steps, "train");
  read_field(j, "batch_size", t.batch_size, "train");
  read_field(j, "learning_rate", t.learning_rate, "train");
  read_field(j, "decay_milestones", t.decay_milestones, "train");
  read_field(j, "decay_factor", t.decay_factor, "train");
  read_field(j, "lambda_bce", t.lambda_bce, "train");
  read_field(j, "clip_norm", t.clip_norm, "train");
  read_field(j, "ramp_increment", t.ramp_increment, "train");
  read_field(j, "ramp_interval", t.ramp_interval, "train");
  read_field(j, "val_interval", t.val_interval, "train");
  read_field(j, "val_sequences", t.val_sequences, "train");
  read_field(j, "masked_loss", t.masked_loss, "train");
  return t;
}

json eval_to_json(const EvalConfig& e) {
  return json{{"sequences", e.sequences},
              {"max_shots", e.max_shots},
              {"trapezoidal_ap", e.trapezoidal_ap}};
}

EvalConfig eval_from_json(const json& j) {
  check_keys(j, {"sequences", "max_shots", "trapezoidal_ap"}, "eval");
  EvalConfig e;
  read_field(j, "sequences", e.sequences, "eval");
  read_field(j, "max_shots", e.max_shots, "eval");
  read_field(j, "trapezoidal_ap", e.trapezoidal_ap, "eval");
  return e;
}

json to_json(const ExperimentConfig& c) {
  return json{{"schema_version", kSchemaVersion},
              {"seed", c.seed},
              {"out_dir", c.out_dir},
              {"workers", c.workers},
              {"sampler", sampler_to_json(c.sampler)},
              {"learner", learner_to_json(c.learner)},
              {"train", train_to_json(c.train)},
              {"eval", eval_to_json(c.eval)}};
}

ExperimentConfig from_json(const json& j) {
  check_keys(j,
             {"schema_version", "seed", "out_dir", "workers", "sampler",
              "learner", "train", "eval"},
             "");
  if (j.contains("schema_version")) {
    const uint32_t version = j.at("schema_version").get<uint32_t>();
    if (version != kSchemaVersion)
      throw ConfigError("config schema version " + std::to_string(version) +
                        " != expected " + std::to_string(kSchemaVersion));
  }
  ExperimentConfig c;
  read_field(j, "seed", c.seed, "");
  read_field(j, "out_dir", c.out_dir, "");
  read_field(j, "workers", c.workers, "");
  if (j.contains("sampler")) c.sampler = sampler_from_json(j.at("sampler"));
  if (j.contains("learner")) c.learner = learner_from_json(j.at("learner"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("eval")) c.eval = eval_from_json(j.at("eval"));
  // The learner consumes raw sampler features; the dimension is derived,
  // never configured.
  c.learner.input_dim = c.sampler.input_dim();
  return c;
}

void apply_path(json& doc, const std::string& path, const std::string& value,
                const std::string& origin) {
  json* node = &doc;
  size_t begin = 0;
  std::vector<std::string> segments;
  while (begin <= path.size()) {
    const size_t dot = path.find('.', begin);
    segments.push_back(path.substr(
        begin, dot == std::string::npos ? std::string::npos : dot - begin));
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  if (segments.empty() || segments.front().empty())
    throw ConfigError(origin + ": empty override path");
  // Missing intermediate objects are created; truly unknown keys are still
  // rejected by the schema check when the document is parsed.
  for (size_t i = 0; i + 1 < segments.size(); ++i) {
    if (!node->is_object())
      throw ConfigError(origin + ": '" + path + "' does not address an object");
    node = &(*node)[segments[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object())
    throw ConfigError(origin + ": '" + path + "' does not address an object");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare strings are allowed unquoted
  }
  (*node)[segments.back()] = parsed;
}

}  // namespace

void EvalConfig::validate() const {
  if (sequences < 1) throw ConfigError("eval.sequences must be >= 1");
  if (max_shots < 1) throw ConfigError("eval.max_shots must be >= 1");
}

void ExperimentConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (out_dir.empty()) throw ConfigError("out_dir must be set");
  sampler.validate();
  learner.validate();
  train.validate();
  eval.validate();
}

uint64_t ExperimentConfig::hash() const {
  return detail::fnv1a(to_json(*this).dump());
}

std::string ExperimentConfig::to_json_string(int indent) const {
  return to_json(*this).dump(indent) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return from_json(j);
}

ExperimentConfig ExperimentConfig::load(
    const std::string& path, const std::vector<std::string>& overrides,
    bool env_overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": parse error: " + e.what());
  }
  if (env_overrides) {
    constexpr const char* kPrefix = "PROTOSTREAM_";
    for (char** env = environ; *env != nullptr; ++env) {
      const char* entry = *env;
      if (std::strncmp(entry, kPrefix, std::strlen(kPrefix)) != 0) continue;
      const char* eq = std::strchr(entry, '=');
      if (!eq) continue;
      std::string name(entry + std::strlen(kPrefix),
                       eq - entry - std::strlen(kPrefix));
      // Environment names cannot contain dots; '__' separates segments.
      size_t pos;
      while ((pos = name.find("__")) != std::string::npos)
        name.replace(pos, 2, ".");
      apply_path(j, name, eq + 1, std::string("env ") + entry);
    }
  }
  for (const std::string& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + ov + "' is not of the form path=value");
    apply_path(j, ov.substr(0, eq), ov.substr(eq + 1), "--set " + ov);
  }
  return from_json(j);
}

}  // namespace protostream
