#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "protostream/sampler.hpp"

// End-to-end checks against the installed binary. PROTOSTREAM_CLI is set by
// the build to the tool's path.

namespace {

namespace fs = std::filesystem;

std::string cli() { return PROTOSTREAM_CLI; }

int run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

std::string write_config(const std::string& dir) {
  const std::string path = dir + "/config.json";
  std::ofstream os(path);
  os << R"({
    "seed": 5150,
    "out_dir": ")" << dir
     << R"(/out",
    "sampler": {"sequence_length": 18, "environments": 2,
                 "feature_dim": 5, "context_cue_dim": 3},
    "learner": {"name": "online_protonet", "embedding_dim": 6,
                 "encoder_hidden": [6], "max_slots": 24},
    "train": {"steps": 8, "batch_size": 2, "val_interval": 4,
               "val_sequences": 4},
    "eval": {"sequences": 6}
  })";
  return path;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("generate/train/eval lifecycle with distinct error exit codes") {
    const std::string dir =
        (fs::temp_directory_path() / "ps_cli_test").string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string config = write_config(dir);

    CHECK(run("generate --config " + config + " --count 5 --supervised") == 0);
    CHECK(fs::exists(dir + "/out/sequences.jsonl"));
    CHECK(fs::exists(dir + "/out/sequences.stats.json"));
    CHECK(fs::exists(dir + "/out/config.json"));

    // Supervised mode leaves no unlabeled sentinel anywhere.
    const auto seqs =
        protostream::read_sequences_jsonl(dir + "/out/sequences.jsonl");
    CHECK(seqs.size() == 5);
    for (const auto& seq : seqs) {
      for (const auto& step : seq.steps)
        CHECK(step.y_tilde == step.y);
    }

    // Byte-identical regeneration.
    const std::string first = slurp(dir + "/out/sequences.jsonl");
    CHECK(run("generate --config " + config + " --count 5 --supervised") == 0);
    CHECK(slurp(dir + "/out/sequences.jsonl") == first);

    CHECK(run("train --config " + config) == 0);
    CHECK(fs::exists(dir + "/out/best.ckpt"));
    const std::string log = slurp(dir + "/out/train_log.csv");
    CHECK(log.rfind("step,loss,bce,ce,grad_norm,lr,ramp_p,beta_r,gamma_r,"
                    "beta_w,gamma_w,val_ap",
                    0) == 0);

    CHECK(run("eval --config " + config + " --checkpoint " + dir +
              "/out/best.ckpt --sequences " + dir +
              "/out/sequences.jsonl") == 0);
    CHECK(fs::exists(dir + "/out/metrics.csv"));
    CHECK(fs::exists(dir + "/out/records.jsonl"));

    // Records drive the standalone report command.
    CHECK(run("report --records " + dir + "/out/records.jsonl --out " + dir +
              "/report") == 0);
    CHECK(fs::exists(dir + "/report/metrics.csv"));

    // Config errors exit 2: unknown key, missing file, learner mismatch.
    CHECK(run("train --config " + dir + "/missing.json") == 2);
    CHECK(run("generate --config " + config + " --set sampler.nope=1") == 2);
    CHECK(run("eval --config " + config +
              " --learner lstm --checkpoint " + dir + "/out/best.ckpt") == 2);
    CHECK(run("generate --config " + config + " --ablate bogus-flag") == 2);

    fs::remove_all(dir);
  }
}
