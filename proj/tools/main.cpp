// protostream command-line front end: generate / train / eval / report /
// context-ablation over a single JSON experiment config.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "protostream/ablation.hpp"
#include "protostream/checkpoint.hpp"
#include "protostream/config.hpp"
#include "protostream/errors.hpp"
#include "protostream/evaluation.hpp"
#include "protostream/training.hpp"
#include "protostream/version.hpp"

namespace {

using namespace protostream;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitInvariant = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::string learner;
  std::string ablate;
  uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  bool supervised = false;
  bool semi = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required();
  cmd->add_option("--set", args.sets,
                  "override a config value, e.g. --set train.steps=100");
  cmd->add_option("--out", args.out, "output directory (overrides out_dir)");
  cmd->add_option("--seed", args.seed, "master seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--workers", args.workers, "parallel workers");
  cmd->add_option("--learner", args.learner,
                  "learner: cpm | online_protonet | online_matchingnet | "
                  "online_imp | lstm");
  cmd->add_option("--ablate", args.ablate,
                  "comma list: no-hrnn,no-control,no-metric,gau,cosine");
  auto* sup = cmd->add_flag("--supervised", args.supervised,
                            "fully supervised sequences");
  cmd->add_flag("--semi", args.semi, "semi-supervised sequences")
      ->excludes(sup);
}

void apply_ablate_flags(ExperimentConfig& cfg, const std::string& list) {
  size_t begin = 0;
  while (begin < list.size()) {
    size_t comma = list.find(',', begin);
    if (comma == std::string::npos) comma = list.size();
    const std::string token = list.substr(begin, comma - begin);
    begin = comma + 1;
    if (token.empty()) continue;
    if (token == "no-hrnn") {
      cfg.learner.ablation.context_bias = false;
    } else if (token == "no-control") {
      cfg.learner.ablation.predicted_control = false;
    } else if (token == "no-metric") {
      cfg.learner.ablation.metric_scaling = false;
    } else if (token == "gau") {
      cfg.learner.gated_averaging = true;
    } else if (token == "cosine") {
      cfg.learner.cosine = true;
    } else {
      throw ConfigError("unknown --ablate token '" + token + "'");
    }
  }
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg = ExperimentConfig::load(args.config_path, args.sets);
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out.empty()) cfg.out_dir = args.out;
  if (args.workers > 0) cfg.workers = args.workers;
  if (!args.learner.empty()) cfg.learner.name = args.learner;
  if (args.supervised) cfg.sampler.supervised = true;
  if (args.semi) cfg.sampler.supervised = false;
  apply_ablate_flags(cfg, args.ablate);
  cfg.learner.input_dim = cfg.sampler.input_dim();
  cfg.validate();
  return cfg;
}

void echo_config(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream os(cfg.out_dir + "/config.json", std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + cfg.out_dir + "/config.json");
  os << cfg.to_json_string();
}

ArtifactMeta meta_of(const ExperimentConfig& cfg) {
  ArtifactMeta meta;
  meta.config_hash = cfg.hash();
  meta.seed = cfg.seed;
  return meta;
}

int cmd_generate(const CommonArgs& args, size_t count,
                 const std::string& split) {
  ExperimentConfig cfg = resolve_config(args);
  echo_config(cfg);
  if (count == 0) count = static_cast<size_t>(cfg.eval.sequences);
  const auto seqs =
      generate_sequences(cfg.sampler, cfg.seed, split, count, cfg.workers);
  for (const Sequence& seq : seqs)
    validate_sequence(seq, cfg.sampler.max_appearances);
  const std::string path = cfg.out_dir + "/sequences.jsonl";
  write_sequences_jsonl(path, seqs);

  const SequenceStats stats = compute_stats(seqs);
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  j["config_hash"] = hex;
  j["seed"] = cfg.seed;
  j["split"] = split;
  j["sequences"] = stats.n_sequences;
  j["runs"] = stats.n_runs;
  j["mean_run_length"] = stats.mean_run_length;
  j["run_length_se"] = stats.run_length_se;
  j["run_length_histogram"] = stats.run_length_histogram;
  j["class_growth"] = stats.class_growth;
  j["labeled_fraction"] = stats.labeled_fraction;
  std::ofstream os(cfg.out_dir + "/sequences.stats.json", std::ios::trunc);
  os << j.dump(2) << "\n";

  std::cout << "wrote " << seqs.size() << " sequences to " << path
            << " (mean run length " << stats.mean_run_length << ")\n";
  return kExitOk;
}

int cmd_train(const CommonArgs& args, const std::string& resume) {
  ExperimentConfig cfg = resolve_config(args);
  echo_config(cfg);
  TrainOptions opts;
  opts.out_dir = cfg.out_dir;
  opts.resume_checkpoint = resume;
  opts.workers = cfg.workers;
  opts.config_hash = cfg.hash();
  const TrainSummary summary = train(cfg.learner, cfg.train, cfg.sampler,
                                     cfg.sampler, cfg.seed, opts);
  std::cout << "trained " << cfg.learner.name << " for " << summary.steps_done
            << " steps; best val AP " << summary.best_val_ap << " at step "
            << summary.best_step << "\n"
            << "checkpoints: " << summary.best_checkpoint << ", "
            << summary.last_checkpoint << "\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             const std::string& sequences_path) {
  ExperimentConfig cfg = resolve_config(args);
  echo_config(cfg);
  auto learner = make_learner(cfg.learner, cfg.seed);
  const CheckpointHeader header =
      load_checkpoint(checkpoint, learner->params());
  if (header.learner != learner->name())
    throw ConfigError("checkpoint/learner mismatch: checkpoint is for '" +
                      header.learner + "', config asks for '" +
                      learner->name() + "'");
  std::vector<Sequence> seqs;
  if (!sequences_path.empty()) {
    seqs = read_sequences_jsonl(sequences_path);
    if (seqs.empty()) throw ConfigError("no sequences in " + sequences_path);
    if (static_cast<int>(seqs[0].steps[0].x.size()) != cfg.learner.input_dim)
      throw ConfigError("sequence feature dimension does not match config");
  } else {
    seqs = generate_sequences(cfg.sampler, cfg.seed, "eval",
                              static_cast<size_t>(cfg.eval.sequences),
                              cfg.workers);
  }
  const auto records = evaluate_learner(
      cfg.learner, cfg.seed, learner->params(), seqs, EvalOptions{cfg.workers});
  const MetricsReport report =
      compute_report(records, cfg.eval.max_shots, cfg.eval.trapezoidal_ap);
  write_report_files(cfg.out_dir, report, meta_of(cfg));
  write_records_jsonl(cfg.out_dir + "/records.jsonl", records, meta_of(cfg));
  std::cout << "evaluated " << seqs.size() << " sequences: AP " << report.ap
            << " (" << records.size() << " records)\n";
  for (const auto& acc : report.n_shot)
    std::cout << "  " << acc.shots << "-shot acc " << acc.mean << " +/- "
              << acc.se << "\n";
  return kExitOk;
}

int cmd_report(const std::string& records_path, const std::string& out,
               int max_shots, bool trapezoidal) {
  const auto records = read_records_jsonl(records_path);
  if (records.empty()) throw ConfigError("no records in " + records_path);
  const MetricsReport report = compute_report(records, max_shots, trapezoidal);
  ArtifactMeta meta;  // recomputed reports carry no config hash
  write_report_files(out, report, meta);
  std::cout << "AP " << report.ap << " over " << report.n_records
            << " records from " << report.n_sequences << " sequences -> "
            << out << "\n";
  return kExitOk;
}

int cmd_context_ablation(const CommonArgs& args, int seeds) {
  ExperimentConfig cfg = resolve_config(args);
  echo_config(cfg);
  const AblationResult result = run_context_ablation(cfg, seeds, cfg.out_dir);
  write_ablation_csv(cfg.out_dir + "/ablation.csv", result, meta_of(cfg));
  std::cout << format_ablation_table(result);
  std::cout << "table written to " << cfg.out_dir << "/ablation.csv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"online few-shot learning lab: episodic samplers, prototype "
               "memory learners, and online metrics"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, abl_args;
  size_t gen_count = 0;
  std::string gen_split = "gen";
  std::string resume, checkpoint, sequences_path, records_path;
  std::string report_out = "report";
  int report_shots = 6;
  bool report_trapezoidal = false;
  int ablation_seeds = 5;

  CLI::App* generate =
      app.add_subcommand("generate", "sample sequences to JSON-lines");
  add_common(generate, gen_args);
  generate->add_option("--count", gen_count,
                       "number of sequences (default eval.sequences)");
  generate->add_option("--split", gen_split, "substream name (default gen)");

  CLI::App* train_cmd = app.add_subcommand("train", "train a learner");
  add_common(train_cmd, train_args);
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint with online metrics");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint")
      ->required();
  eval_cmd->add_option("--sequences", sequences_path,
                       "sequence file (default: generate the eval split)");

  CLI::App* report_cmd = app.add_subcommand(
      "report", "recompute metrics from an exported records file");
  report_cmd->add_option("--records", records_path, "records JSON-lines")
      ->required();
  report_cmd->add_option("--out", report_out, "output directory");
  report_cmd->add_option("--max-shots", report_shots, "N-shot table size");
  report_cmd->add_flag("--trapezoidal", report_trapezoidal,
                       "trapezoidal AP integral");

  CLI::App* ablation = app.add_subcommand(
      "context-ablation",
      "2x2 spatial-cue x temporal-order grid for cpm vs online_protonet");
  add_common(ablation, abl_args);
  ablation->add_option("--seeds", ablation_seeds, "seeds per cell");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(gen_args, gen_count, gen_split);
    if (train_cmd->parsed()) return cmd_train(train_args, resume);
    if (eval_cmd->parsed())
      return cmd_eval(eval_args, checkpoint, sequences_path);
    if (report_cmd->parsed())
      return cmd_report(records_path, report_out, report_shots,
                        report_trapezoidal);
    if (ablation->parsed())
      return cmd_context_ablation(abl_args, ablation_seeds);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
