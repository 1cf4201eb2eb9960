#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "levo/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(LEVO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

const char* kTiny =
    "--set corpus.count=80 --set trainer.heldout=10 --set rvq.codebook_size=8 --set rvq.iters=2 "
    "--set lelm.lm_layers=2 --set lelm.lm_dim=16 --set lelm.lm_heads=2 --set lelm.lm_ffn=32 "
    "--set lelm.dec_layers=1 --set lelm.dec_dim=16 --set lelm.dec_heads=2 --set lelm.dec_ffn=32 "
    "--set trainer.stage1_steps=20 --set trainer.stage2_steps=10 --set trainer.warmup=5 "
    "--set alignment.mining_lyrics=4 --set alignment.labeled_groups=12 --set alignment.reward_steps=20 "
    "--set alignment.dpo_steps=3 --set alignment.max_pairs=12 --set evalx.prompts=3 "
    "--set evalx.memorization_songs=5 --set generation.frames=64 --set generation.count=2 --quiet";

}  // namespace

TEST_CASE("exit codes") {
  const auto dir = (fs::temp_directory_path() / "levo_cli_codes").string();
  fs::remove_all(dir);
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("all --set lelm.bogus=1 --out " + dir) == 2);
  CHECK(run("all --set trainer.batch=\\\"x\\\" --out " + dir) == 2);
  CHECK(run("all --config /nonexistent.json --out " + dir) == 2);
  CHECK(run("all --no-such-flag") == 2);
  CHECK(run("--print-config") == 0);
  CHECK(run("--help") == 0);
  // Valid config, missing earlier artifacts: a runtime failure.
  CHECK(run("train --out " + dir) == 1);
  fs::remove_all(dir);
}

TEST_CASE("tiny pipeline, generate and unit-vector merge") {
  const fs::path a = fs::temp_directory_path() / "levo_cli_a", b = fs::temp_directory_path() / "levo_cli_b";
  fs::remove_all(a);
  fs::remove_all(b);
  REQUIRE(run(std::string("all ") + kTiny + " --out " + a.string()) == 0);
  for (const char* f : {"config.json", "config.hash", "seeds.json", "manifest.jsonl", "features.ckpt", "codec.ckpt",
                        "tokens.jsonl", "lelm_stage1.ckpt", "lelm_stage2.ckpt", "metrics.jsonl",
                        "train_summary.json", "samples.jsonl", "pairs.jsonl", "alignment.json", "dpo_s1.ckpt",
                        "dpo_s2.ckpt", "dpo_s3.ckpt", "merged.ckpt", "report.json", "report.csv"})
    CHECK_MESSAGE(fs::exists(a / f), f);
  CHECK(run(std::string("generate ") + kTiny + " --out " + a.string()) == 0);
  CHECK(fs::exists(a / "generated.jsonl"));
  CHECK(fs::exists(a / "generated_features.ckpt"));

  // Same directory, different config: refused.
  CHECK(run(std::string("merge ") + kTiny + " --seed 5 --out " + a.string()) == 2);

  fs::create_directories(b);
  for (const char* f : {"dpo_s1.ckpt", "dpo_s2.ckpt", "dpo_s3.ckpt"}) fs::copy_file(a / f, b / f);
  REQUIRE(run(std::string("merge ") + kTiny + " --set merge.alpha=[1,0,0] --out " + b.string()) == 0);
  const auto merged = levo::load_checkpoint((b / "merged.ckpt").string());
  const auto first = levo::load_checkpoint((b / "dpo_s1.ckpt").string());
  for (const auto& [name, t] : first.tensors()) CHECK(merged.at(name).data == t.data);
  CHECK(slurp(b / "merged.ckpt") == slurp(b / "dpo_s1.ckpt"));
  fs::remove_all(a);
  fs::remove_all(b);
}
