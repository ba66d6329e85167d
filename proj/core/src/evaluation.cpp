#include "protostream/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "protostream/errors.hpp"

namespace protostream {

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

double average_precision(std::vector<PredictionRecord> records,
                         bool trapezoidal) {
  size_t known = 0;
  for (const PredictionRecord& r : records) {
    if (!r.novel) ++known;
  }
  if (known == 0)
    throw InvariantViolation(
        "average_precision undefined: no known instances in the record pool");
  std::sort(records.begin(), records.end(),
            [](const PredictionRecord& a, const PredictionRecord& b) {
              if (a.known_score != b.known_score)
                return a.known_score > b.known_score;
              if (a.sequence_id != b.sequence_id)
                return a.sequence_id < b.sequence_id;
              return a.t < b.t;
            });
  const double k = static_cast<double>(known);
  double hits = 0;
  double ap = 0;
  double prev_recall = 0;
  double prev_precision = 1;
  for (size_t n = 1; n <= records.size(); ++n) {
    const PredictionRecord& r = records[n - 1];
    if (!r.novel && r.predicted_class == r.true_class) hits += 1;
    const double precision = hits / static_cast<double>(n);
    const double recall = hits / k;
    if (trapezoidal) {
      ap += (recall - prev_recall) * 0.5 * (precision + prev_precision);
    } else {
      ap += precision * (recall - prev_recall);
    }
    prev_recall = recall;
    prev_precision = precision;
  }
  return ap;
}

std::optional<NShotAccuracy> n_shot_accuracy(
    const std::vector<PredictionRecord>& records, int shots) {
  std::map<int, std::pair<size_t, size_t>> per_seq;  // id -> (correct, total)
  for (const PredictionRecord& r : records) {
    if (r.shots_seen != shots) continue;
    auto& [correct, total] = per_seq[r.sequence_id];
    if (r.predicted_class == r.true_class) ++correct;
    ++total;
  }
  if (per_seq.empty()) return std::nullopt;
  std::vector<double> accs;
  accs.reserve(per_seq.size());
  for (const auto& [id, ct] : per_seq)
    accs.push_back(static_cast<double>(ct.first) /
                   static_cast<double>(ct.second));
  NShotAccuracy out;
  out.shots = shots;
  out.sequences = accs.size();
  double sum = 0;
  for (double a : accs) sum += a;
  out.mean = sum / static_cast<double>(accs.size());
  if (accs.size() > 1) {
    double var = 0;
    for (double a : accs) var += (a - out.mean) * (a - out.mean);
    var /= static_cast<double>(accs.size() - 1);
    out.se = std::sqrt(var / static_cast<double>(accs.size()));
  } else {
    out.se = 0;
    out.single_sequence = true;
  }
  return out;
}

const std::vector<ForgettingBin>& forgetting_bins() {
  static const std::vector<ForgettingBin> bins = {
      {1, 2}, {3, 5}, {6, 10}, {11, 20}, {21, 50}, {51, 100}};
  return bins;
}

ForgettingTable forgetting_table(
    const std::vector<PredictionRecord>& records) {
  ForgettingTable table;
  table.shot_counts = {1, 3};
  const auto& bins = forgetting_bins();
  table.cells.assign(table.shot_counts.size(),
                     std::vector<ForgettingCell>(bins.size()));
  std::vector<std::vector<size_t>> correct(
      table.shot_counts.size(), std::vector<size_t>(bins.size(), 0));
  for (const PredictionRecord& r : records) {
    if (r.steps_since_label < 1) continue;
    int shot_idx = -1;
    for (size_t s = 0; s < table.shot_counts.size(); ++s) {
      if (r.shots_seen == table.shot_counts[s]) shot_idx = static_cast<int>(s);
    }
    if (shot_idx < 0) continue;
    for (size_t b = 0; b < bins.size(); ++b) {
      if (r.steps_since_label >= bins[b].lo &&
          r.steps_since_label <= bins[b].hi) {
        table.cells[shot_idx][b].count += 1;
        if (r.predicted_class == r.true_class) correct[shot_idx][b] += 1;
        break;
      }
    }
  }
  for (size_t s = 0; s < table.cells.size(); ++s) {
    for (size_t b = 0; b < table.cells[s].size(); ++b) {
      if (table.cells[s][b].count > 0)
        table.cells[s][b].accuracy =
            static_cast<double>(correct[s][b]) /
            static_cast<double>(table.cells[s][b].count);
    }
  }
  return table;
}

std::vector<CurvePoint> per_timestep_accuracy(
    const std::vector<PredictionRecord>& records) {
  std::map<int, std::pair<size_t, size_t>> per_t;
  for (const PredictionRecord& r : records) {
    if (r.novel) continue;
    auto& [correct, total] = per_t[r.t];
    if (r.predicted_class == r.true_class) ++correct;
    ++total;
  }
  std::vector<CurvePoint> out;
  out.reserve(per_t.size());
  for (const auto& [t, ct] : per_t) {
    out.push_back(CurvePoint{
        t, static_cast<double>(ct.first) / static_cast<double>(ct.second),
        ct.second});
  }
  return out;
}

MetricsReport compute_report(const std::vector<PredictionRecord>& records,
                             int max_shots, bool trapezoidal) {
  MetricsReport report;
  report.ap = average_precision(records, trapezoidal);
  for (int n = 1; n <= max_shots; ++n) {
    if (auto acc = n_shot_accuracy(records, n)) report.n_shot.push_back(*acc);
  }
  report.forgetting = forgetting_table(records);
  report.curve = per_timestep_accuracy(records);
  report.n_records = records.size();
  std::vector<int> ids;
  for (const PredictionRecord& r : records) ids.push_back(r.sequence_id);
  std::sort(ids.begin(), ids.end());
  report.n_sequences = std::unique(ids.begin(), ids.end()) - ids.begin();
  return report;
}

std::vector<PredictionRecord> rollout_records(OnlineLearner& learner,
                                              const Sequence& seq,
                                              int sequence_id) {
  Tape tape;
  learner.begin_sequence(tape);
  std::vector<PredictionRecord> records;
  records.reserve(seq.steps.size());
  std::map<int, int> labeled_count;
  std::map<int, int> last_labeled;
  StepOptions opts;  // evaluation: writes always applied
  for (int t = 0; t < seq.length(); ++t) {
    const TimeStep& ts = seq.steps[t];
    StepResult res;
    try {
      res = learner.step(tape, ts, opts);
    } catch (const InvariantViolation& e) {
      throw InvariantViolation("sequence " + std::to_string(sequence_id) +
                               " (seed " + std::to_string(seq.seed) +
                               "), step " + std::to_string(t) + ": " +
                               e.what());
    }
    PredictionRecord rec;
    rec.sequence_id = sequence_id;
    rec.t = t;
    rec.known_score = 1.0 - res.pred.novelty;
    rec.predicted_class = res.pred.predicted_class;
    rec.true_class = ts.y;
    rec.novel = ts.novel;
    rec.labeled = ts.y_tilde != kUnlabeled;
    auto shots = labeled_count.find(ts.y);
    rec.shots_seen = shots == labeled_count.end() ? 0 : shots->second;
    auto last = last_labeled.find(ts.y);
    rec.steps_since_label = last == last_labeled.end() ? -1 : t - last->second;
    records.push_back(rec);
    if (ts.y_tilde != kUnlabeled) {
      labeled_count[ts.y] += 1;
      last_labeled[ts.y] = t;
    }
  }
  return records;
}

std::vector<PredictionRecord> evaluate_learner(
    const LearnerConfig& config, uint64_t learner_seed,
    const ParameterStore& trained, const std::vector<Sequence>& sequences,
    const EvalOptions& options) {
  const int workers =
      std::max(1, std::min<int>(options.workers,
                                static_cast<int>(sequences.size())));
  std::vector<std::vector<PredictionRecord>> per_seq(sequences.size());
  auto run_range = [&](int worker) {
    std::unique_ptr<OnlineLearner> learner = make_learner(config, learner_seed);
    for (const auto& e : trained.entries())
      learner->params().value(e.name) = e.value;
    for (size_t i = static_cast<size_t>(worker); i < sequences.size();
         i += static_cast<size_t>(workers)) {
      per_seq[i] =
          rollout_records(*learner, sequences[i], static_cast<int>(i));
    }
  };
  if (workers == 1) {
    run_range(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run_range, w);
    for (auto& th : pool) th.join();
  }
  std::vector<PredictionRecord> records;
  for (const auto& part : per_seq)
    records.insert(records.end(), part.begin(), part.end());
  return records;
}

void write_records_jsonl(const std::string& path,
                         const std::vector<PredictionRecord>& records,
                         const ArtifactMeta& meta) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write records file: " + path);
  nlohmann::json head;
  head["schema_version"] = meta.schema_version;
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(meta.config_hash));
  head["config_hash"] = hex;
  head["seed"] = meta.seed;
  os << head.dump() << "\n";
  for (const PredictionRecord& r : records) {
    nlohmann::json j = {{"seq", r.sequence_id},
                        {"t", r.t},
                        {"kscore", r.known_score},
                        {"pred", r.predicted_class},
                        {"y", r.true_class},
                        {"u", r.novel},
                        {"labeled", r.labeled},
                        {"shots", r.shots_seen},
                        {"since", r.steps_since_label}};
    os << j.dump() << "\n";
  }
  if (!os) throw ConfigError("short write to records file: " + path);
}

std::vector<PredictionRecord> read_records_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open records file: " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  size_t lineno = 0;
  bool saw_header = false;
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
      if (!saw_header && j.contains("schema_version")) {
        const uint32_t version = j.at("schema_version").get<uint32_t>();
        if (version != kSchemaVersion)
          throw ConfigError(where + ": records schema version " +
                            std::to_string(version) + " != expected " +
                            std::to_string(kSchemaVersion));
        saw_header = true;
        continue;
      }
      PredictionRecord r;
      r.sequence_id = j.at("seq").get<int>();
      r.t = j.at("t").get<int>();
      r.known_score = j.at("kscore").get<double>();
      r.predicted_class = j.at("pred").get<int>();
      r.true_class = j.at("y").get<int>();
      r.novel = j.at("u").get<bool>();
      r.labeled = j.at("labeled").get<bool>();
      r.shots_seen = j.at("shots").get<int>();
      r.steps_since_label = j.at("since").get<int>();
      out.push_back(r);
    } catch (const ConfigError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + ": malformed record: " + e.what());
    }
  }
  return out;
}

namespace {

void write_curve_svg(const std::string& path,
                     const std::vector<CurvePoint>& curve) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write plot: " + path);
  const int width = 640, height = 360, margin = 40;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
     << width - margin << "\" y2=\"" << height - margin
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
     << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"" << height - 8
     << "\" font-size=\"12\" text-anchor=\"middle\">timestep</text>\n";
  os << "<text x=\"12\" y=\"" << height / 2
     << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 12 "
     << height / 2 << ")\">accuracy</text>\n";
  if (!curve.empty()) {
    int max_t = 1;
    for (const CurvePoint& p : curve) max_t = std::max(max_t, p.t);
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" "
          "points=\"";
    for (const CurvePoint& p : curve) {
      const double px =
          margin + (width - 2.0 * margin) * p.t / std::max(1, max_t);
      const double py =
          height - margin - (height - 2.0 * margin) * p.accuracy;
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px, py);
      os << buf;
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
}

void write_meta_rows(std::ofstream& os, const ArtifactMeta& meta) {
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(meta.config_hash));
  os << "schema_version," << meta.schema_version << "\n";
  os << "config_hash," << hex << "\n";
  os << "seed," << meta.seed << "\n";
}

}  // namespace

void write_report_files(const std::string& out_dir,
                        const MetricsReport& report,
                        const ArtifactMeta& meta) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream os(out_dir + "/metrics.csv", std::ios::trunc);
    if (!os) throw ConfigError("cannot write metrics.csv in " + out_dir);
    os << "key,value\n";
    write_meta_rows(os, meta);
    os << "ap," << format_double(report.ap) << "\n";
    os << "n_records," << report.n_records << "\n";
    os << "n_sequences," << report.n_sequences << "\n";
    for (const NShotAccuracy& a : report.n_shot) {
      os << "nshot_" << a.shots << "_mean," << format_double(a.mean) << "\n";
      os << "nshot_" << a.shots << "_se," << format_double(a.se) << "\n";
      os << "nshot_" << a.shots << "_sequences," << a.sequences << "\n";
    }
  }
  {
    std::ofstream os(out_dir + "/forgetting.csv", std::ios::trunc);
    if (!os) throw ConfigError("cannot write forgetting.csv in " + out_dir);
    os << "shots,bin_lo,bin_hi,accuracy,count\n";
    const auto& bins = forgetting_bins();
    for (size_t s = 0; s < report.forgetting.shot_counts.size(); ++s) {
      for (size_t b = 0; b < bins.size(); ++b) {
        const ForgettingCell& cell = report.forgetting.cells[s][b];
        os << report.forgetting.shot_counts[s] << "," << bins[b].lo << ","
           << bins[b].hi << ",";
        if (cell.count > 0) os << format_double(cell.accuracy);
        os << "," << cell.count << "\n";
      }
    }
  }
  {
    std::ofstream os(out_dir + "/curve.csv", std::ios::trunc);
    if (!os) throw ConfigError("cannot write curve.csv in " + out_dir);
    os << "t,accuracy,count\n";
    for (const CurvePoint& p : report.curve)
      os << p.t << "," << format_double(p.accuracy) << "," << p.count << "\n";
  }
  write_curve_svg(out_dir + "/curve.svg", report.curve);
}

}  // namespace protostream
