#include "protostream/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "protostream/errors.hpp"
#include "protostream/version.hpp"

namespace protostream {

namespace {

constexpr int kCrpRetries = 16;

std::vector<Real> unit_normal_vector(int dim, RngStream& rng) {
  std::vector<Real> v(dim);
  Real norm_sq = 0;
  for (Real& x : v) {
    x = static_cast<Real>(rng.normal());
    norm_sq += x * x;
  }
  const Real norm = std::sqrt(norm_sq);
  if (norm < Real(1e-12)) {
    v[0] = Real(1);
  } else {
    for (Real& x : v) x /= norm;
  }
  return v;
}

}  // namespace

void SamplerConfig::validate() const {
  if (sequence_length < 1)
    throw ConfigError("sampler.sequence_length must be >= 1");
  if (environments < 1) throw ConfigError("sampler.environments must be >= 1");
  if (switch_probability < 0 || switch_probability >= 1)
    throw ConfigError("sampler.switch_probability must be in [0, 1)");
  if (crp_alpha < 0) throw ConfigError("sampler.crp_alpha must be >= 0");
  if (crp_theta <= 0) throw ConfigError("sampler.crp_theta must be > 0");
  if (crp_alpha >= 1) throw ConfigError("sampler.crp_alpha must be < 1");
  if (max_appearances < 1)
    throw ConfigError("sampler.max_appearances must be >= 1");
  if (label_ratio <= 0 || label_ratio > 1)
    throw ConfigError("sampler.label_ratio must be in (0, 1]");
  if (feature_dim < 1) throw ConfigError("sampler.feature_dim must be >= 1");
  if (context_cue_dim < 1 && spatial_cue)
    throw ConfigError("sampler.context_cue_dim must be >= 1");
  if (feature_noise < 0 || cue_noise < 0)
    throw ConfigError("sampler noise scales must be >= 0");
  if (ambiguity < 0 || ambiguity > 1)
    throw ConfigError("sampler.ambiguity must be in [0, 1]");
}

uint64_t SamplerConfig::hash() const {
  std::string s;
  s += "T=" + std::to_string(sequence_length);
  s += ";E=" + std::to_string(environments);
  s += ";p=" + std::to_string(switch_probability);
  s += ";a=" + std::to_string(crp_alpha);
  s += ";th=" + std::to_string(crp_theta);
  s += ";cap=" + std::to_string(max_appearances);
  s += ";lr=" + std::to_string(label_ratio);
  s += ";sup=" + std::to_string(supervised ? 1 : 0);
  s += ";fd=" + std::to_string(feature_dim);
  s += ";cd=" + std::to_string(context_cue_dim);
  s += ";cue=" + std::to_string(spatial_cue ? 1 : 0);
  s += ";fn=" + std::to_string(feature_noise);
  s += ";cn=" + std::to_string(cue_noise);
  s += ";amb=" + std::to_string(ambiguity);
  s += ";shuf=" + std::to_string(shuffle ? 1 : 0);
  return detail::fnv1a(s);
}

std::vector<int> sample_environment_schedule(const SamplerConfig& config,
                                             RngStream& rng) {
  std::vector<int> schedule(config.sequence_length);
  const int envs = config.environments;
  int current = envs > 1 ? static_cast<int>(rng.uniform_int(envs)) : 0;
  for (int t = 0; t < config.sequence_length; ++t) {
    if (t > 0 && envs > 1 && rng.bernoulli(config.switch_probability)) {
      // Switch to a uniformly chosen different environment.
      int next = static_cast<int>(rng.uniform_int(envs - 1));
      if (next >= current) ++next;
      current = next;
    }
    schedule[t] = current;
  }
  return schedule;
}

int crp_sample_class(std::span<const int> counts, const SamplerConfig& config,
                     RngStream& rng) {
  const int k = static_cast<int>(counts.size());
  int m = 0;
  for (int c : counts) m += c;
  const double alpha = config.crp_alpha;
  const double theta = config.crp_theta;
  for (int attempt = 0; attempt < kCrpRetries; ++attempt) {
    const double p_new = (k * alpha + theta) / (m + theta);
    if (rng.uniform() < p_new) return -1;
    // Existing classes, seated with weight (count_i - alpha).
    const double total = m - k * alpha;
    double r = rng.uniform() * total;
    int chosen = k - 1;
    for (int i = 0; i < k; ++i) {
      r -= counts[i] - alpha;
      if (r <= 0) {
        chosen = i;
        break;
      }
    }
    if (counts[chosen] >= config.max_appearances) continue;  // resample
    return chosen;
  }
  return -1;  // all retries hit capped classes; fall back to a new class
}

double class_label_ratio(int occurrences, double label_ratio) {
  return (1.0 - label_ratio) * std::exp(-0.5 * (occurrences - 1)) +
         label_ratio;
}

void mask_labels(Sequence& seq, double label_ratio, RngStream& rng) {
  std::vector<std::vector<int>> occurrences(seq.n_classes);
  for (int t = 0; t < seq.length(); ++t)
    occurrences[seq.steps[t].y].push_back(t);
  for (int k = 0; k < seq.n_classes; ++k) {
    const auto& occ = occurrences[k];
    if (occ.empty()) continue;
    const double ratio =
        class_label_ratio(static_cast<int>(occ.size()), label_ratio);
    bool any = false;
    for (int t : occ) {
      if (rng.bernoulli(ratio)) {
        seq.steps[t].y_tilde = seq.steps[t].y;
        any = true;
      } else {
        seq.steps[t].y_tilde = kUnlabeled;
      }
    }
    if (!any) {
      // Keep at least one labeled instance per class.
      const int t = occ[rng.uniform_int(occ.size())];
      seq.steps[t].y_tilde = seq.steps[t].y;
    }
  }
}

void recompute_novelty(Sequence& seq) {
  std::vector<char> seen_labeled(seq.n_classes, 0);
  for (TimeStep& step : seq.steps) {
    step.novel = !seen_labeled[step.y];
    if (step.y_tilde != kUnlabeled) seen_labeled[step.y] = 1;
  }
}

void generate_toy_features(Sequence& seq, const SamplerConfig& config,
                           RngStream& rng) {
  seq.env_anchors.clear();
  seq.env_anchors.reserve(config.environments);
  for (int e = 0; e < config.environments; ++e)
    seq.env_anchors.push_back(unit_normal_vector(config.context_cue_dim, rng));

  // Class signal vectors, in class-creation order. With probability
  // `ambiguity` a class copies the vector of a donor class from a different
  // environment, which makes the pair separable only through context.
  // Donors already mirrored into this class's own environment are excluded
  // so classes stay distinct within an environment.
  seq.class_vectors.assign(seq.n_classes, {});
  for (int k = 0; k < seq.n_classes; ++k) {
    std::vector<int> donors;
    for (int j = 0; j < k; ++j) {
      if (seq.class_env[j] == seq.class_env[k]) continue;
      bool mirrored = false;
      for (int i = 0; i < k && !mirrored; ++i) {
        mirrored = seq.class_env[i] == seq.class_env[k] &&
                   seq.class_vectors[i] == seq.class_vectors[j];
      }
      if (!mirrored) donors.push_back(j);
    }
    const bool share = !donors.empty() && rng.bernoulli(config.ambiguity);
    if (share) {
      const int donor = donors[rng.uniform_int(donors.size())];
      seq.class_vectors[k] = seq.class_vectors[donor];
    } else {
      seq.class_vectors[k] = unit_normal_vector(config.feature_dim, rng);
    }
  }

  for (TimeStep& step : seq.steps) {
    step.x.resize(config.input_dim());
    const auto& base = seq.class_vectors[step.y];
    for (int d = 0; d < config.feature_dim; ++d) {
      step.x[d] = base[d] +
                  static_cast<Real>(config.feature_noise * rng.normal());
    }
    if (config.spatial_cue) {
      const auto& anchor = seq.env_anchors[step.env];
      for (int d = 0; d < config.context_cue_dim; ++d) {
        step.x[config.feature_dim + d] =
            anchor[d] + static_cast<Real>(config.cue_noise * rng.normal());
      }
    }
  }
}

void shuffle_sequence(Sequence& seq, RngStream& rng) {
  for (size_t i = seq.steps.size(); i > 1; --i) {
    const size_t j = rng.uniform_int(i);
    std::swap(seq.steps[i - 1], seq.steps[j]);
  }
  recompute_novelty(seq);
}

Sequence generate_sequence(const SamplerConfig& config, uint64_t master_seed,
                           std::string_view split, uint64_t index) {
  config.validate();
  Sequence seq;
  seq.seed = derive_seed(master_seed, std::string("sampler/") + std::string(split), index);
  seq.config_hash = config.hash();
  RngStream rng(seq.seed);

  const std::vector<int> schedule = sample_environment_schedule(config, rng);

  // Per-environment CRP over a disjoint roster of global class ids.
  std::vector<std::vector<int>> env_classes(config.environments);
  std::vector<std::vector<int>> env_counts(config.environments);
  seq.steps.resize(config.sequence_length);
  for (int t = 0; t < config.sequence_length; ++t) {
    const int e = schedule[t];
    const int pick = crp_sample_class(env_counts[e], config, rng);
    int global;
    if (pick < 0) {
      global = seq.n_classes++;
      seq.class_env.push_back(e);
      env_classes[e].push_back(global);
      env_counts[e].push_back(1);
    } else {
      global = env_classes[e][pick];
      env_counts[e][pick] += 1;
    }
    seq.steps[t].y = global;
    seq.steps[t].env = e;
    seq.steps[t].y_tilde = seq.steps[t].y;  // supervised by default
  }

  if (!config.supervised) mask_labels(seq, config.label_ratio, rng);
  recompute_novelty(seq);
  generate_toy_features(seq, config, rng);

  if (config.shuffle) {
    RngStream shuffle_rng(derive_seed(
        master_seed, std::string("shuffle/") + std::string(split), index));
    shuffle_sequence(seq, shuffle_rng);
  }
  return seq;
}

std::vector<Sequence> generate_sequences(const SamplerConfig& config,
                                         uint64_t master_seed,
                                         std::string_view split, size_t count,
                                         int workers) {
  std::vector<Sequence> out(count);
  if (workers <= 1 || count < 2) {
    for (size_t i = 0; i < count; ++i)
      out[i] = generate_sequence(config, master_seed, split, i);
    return out;
  }
  std::vector<std::thread> pool;
  std::string split_str(split);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (size_t i = static_cast<size_t>(w); i < count;
           i += static_cast<size_t>(workers))
        out[i] = generate_sequence(config, master_seed, split_str, i);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

void validate_sequence(const Sequence& seq, int max_appearances) {
  std::vector<int> counts(seq.n_classes, 0);
  std::vector<char> labeled(seq.n_classes, 0);
  std::vector<char> seen_labeled(seq.n_classes, 0);
  const size_t dim = seq.steps.empty() ? 0 : seq.steps[0].x.size();
  for (int t = 0; t < seq.length(); ++t) {
    const TimeStep& step = seq.steps[t];
    if (step.y < 0 || step.y >= seq.n_classes)
      throw InvariantViolation("step " + std::to_string(t) + ": class " +
                               std::to_string(step.y) + " beyond roster of " +
                               std::to_string(seq.n_classes));
    if (step.y_tilde != kUnlabeled && step.y_tilde != step.y)
      throw InvariantViolation("step " + std::to_string(t) +
                               ": revealed label " +
                               std::to_string(step.y_tilde) +
                               " does not match class " +
                               std::to_string(step.y));
    if (step.x.size() != dim)
      throw InvariantViolation("step " + std::to_string(t) +
                               ": inconsistent feature dimension");
    if (step.novel != !seen_labeled[step.y])
      throw InvariantViolation("step " + std::to_string(t) +
                               ": novelty flag inconsistent with history");
    counts[step.y] += 1;
    if (step.y_tilde != kUnlabeled) {
      labeled[step.y] = 1;
      seen_labeled[step.y] = 1;
    }
  }
  for (int k = 0; k < seq.n_classes; ++k) {
    if (counts[k] == 0)
      throw InvariantViolation("class " + std::to_string(k) +
                               " has no occurrences");
    if (!labeled[k])
      throw InvariantViolation("class " + std::to_string(k) +
                               " has no labeled occurrence");
    if (max_appearances > 0 && counts[k] > max_appearances)
      throw InvariantViolation("class " + std::to_string(k) + " appears " +
                               std::to_string(counts[k]) +
                               " times, cap is " +
                               std::to_string(max_appearances));
  }
}

namespace {

std::string hex64(uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(x));
  return std::string(buf);
}

uint64_t parse_hex64(const std::string& s) {
  return std::strtoull(s.c_str(), nullptr, 16);
}

}  // namespace

void write_sequences_jsonl(const std::string& path,
                           const std::vector<Sequence>& seqs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write sequence file: " + path);
  for (const Sequence& seq : seqs) {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["config_hash"] = hex64(seq.config_hash);
    j["seed"] = hex64(seq.seed);
    j["n_classes"] = seq.n_classes;
    j["class_env"] = seq.class_env;
    nlohmann::json steps = nlohmann::json::array();
    for (const TimeStep& step : seq.steps) {
      steps.push_back({{"x", step.x},
                       {"y", step.y},
                       {"y_tilde", step.y_tilde},
                       {"env", step.env},
                       {"u", step.novel}});
    }
    j["steps"] = std::move(steps);
    os << j.dump() << "\n";
  }
  if (!os) throw ConfigError("short write to sequence file: " + path);
}

std::vector<Sequence> read_sequences_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open sequence file: " + path);
  std::vector<Sequence> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": malformed record: " + e.what());
    }
    try {
      const int version = j.at("schema_version").get<int>();
      if (version != kSchemaVersion)
        throw ConfigError(where + ": schema version " +
                          std::to_string(version) + " != expected " +
                          std::to_string(kSchemaVersion));
      Sequence seq;
      seq.config_hash = parse_hex64(j.at("config_hash").get<std::string>());
      seq.seed = parse_hex64(j.at("seed").get<std::string>());
      seq.n_classes = j.at("n_classes").get<int>();
      if (j.contains("class_env"))
        seq.class_env = j.at("class_env").get<std::vector<int>>();
      for (const auto& js : j.at("steps")) {
        TimeStep step;
        step.x = js.at("x").get<std::vector<Real>>();
        step.y = js.at("y").get<int>();
        step.y_tilde = js.at("y_tilde").get<int>();
        step.env = js.at("env").get<int>();
        step.novel = js.at("u").get<bool>();
        seq.steps.push_back(std::move(step));
      }
      validate_sequence(seq);
      out.push_back(std::move(seq));
    } catch (const ConfigError&) {
      throw;
    } catch (const InvariantViolation& e) {
      throw ConfigError(where + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": malformed record: " + e.what());
    }
  }
  return out;
}

SequenceStats compute_stats(const std::vector<Sequence>& seqs) {
  SequenceStats stats;
  stats.n_sequences = seqs.size();
  std::vector<size_t> run_lengths;
  // Per-sequence mean run length, then averaged across sequences. Unlike the
  // pooled total-steps/total-runs ratio, this estimator is essentially
  // unbiased for the geometric mean 1/p under window truncation
  // (expectation (1 - (1-p)^T)/p), so it can be compared against 1/p.
  std::vector<double> per_seq_mean;
  size_t total_steps = 0;
  size_t labeled_steps = 0;
  size_t max_len = 0;
  for (const Sequence& seq : seqs)
    max_len = std::max(max_len, seq.steps.size());
  std::vector<double> growth_sum(max_len, 0);
  for (const Sequence& seq : seqs) {
    size_t run = 0;
    size_t seq_runs = 0;
    int prev_env = -1;
    std::vector<char> seen(seq.n_classes, 0);
    int distinct = 0;
    for (int t = 0; t < seq.length(); ++t) {
      const TimeStep& step = seq.steps[t];
      if (step.env == prev_env) {
        ++run;
      } else {
        if (run > 0) {
          run_lengths.push_back(run);
          ++seq_runs;
        }
        run = 1;
        prev_env = step.env;
      }
      if (!seen[step.y]) {
        seen[step.y] = 1;
        ++distinct;
      }
      growth_sum[t] += distinct;
      ++total_steps;
      if (step.y_tilde != kUnlabeled) ++labeled_steps;
    }
    if (run > 0) {
      run_lengths.push_back(run);
      ++seq_runs;
    }
    if (seq_runs > 0)
      per_seq_mean.push_back(static_cast<double>(seq.steps.size()) /
                             static_cast<double>(seq_runs));
  }
  stats.n_runs = run_lengths.size();
  if (!per_seq_mean.empty()) {
    double sum = 0;
    for (double m : per_seq_mean) sum += m;
    stats.mean_run_length = sum / static_cast<double>(per_seq_mean.size());
    if (per_seq_mean.size() > 1) {
      double var = 0;
      for (double m : per_seq_mean) {
        const double d = m - stats.mean_run_length;
        var += d * d;
      }
      var /= static_cast<double>(per_seq_mean.size() - 1);
      stats.run_length_se =
          std::sqrt(var / static_cast<double>(per_seq_mean.size()));
    }
  }
  if (!run_lengths.empty()) {
    size_t max_run = 0;
    for (size_t r : run_lengths) max_run = std::max(max_run, r);
    stats.run_length_histogram.assign(max_run + 1, 0);
    for (size_t r : run_lengths) stats.run_length_histogram[r] += 1;
  }
  stats.class_growth.resize(max_len);
  for (size_t t = 0; t < max_len; ++t)
    stats.class_growth[t] =
        seqs.empty() ? 0 : growth_sum[t] / static_cast<double>(seqs.size());
  stats.labeled_fraction =
      total_steps == 0
          ? 0
          : static_cast<double>(labeled_steps) / static_cast<double>(total_steps);
  return stats;
}

}  // namespace protostream
