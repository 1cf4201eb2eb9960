#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "levo/corpus.hpp"
#include "levo/generation.hpp"
#include "levo/lelm.hpp"
#include "levo/rvq.hpp"

namespace levo::config {

struct TrainerSection {
  int stage1_steps = 2000;
  int stage2_steps = 1600;
  int joint_steps = 2000;
  int batch = 4;
  int warmup = 200;
  double lr_scale = 1.0;
  double dropout = 0.5;
  int heldout = 100;
};

struct AlignmentSection {
  int mining_lyrics = 100;
  int n_per_condition = 4;
  double musicality_noise = 0.02;
  double strategy1_gap = 2.0;
  int labeled_groups = 200;
  int votes = 5;
  int agree = 4;
  double heldout_fraction = 0.25;
  int reward_steps = 400;
  int reward_hidden = 16;
  double threshold_target = 0.8;
  double beta = 0.5;
  int dpo_steps = 150;
  int dpo_batch = 4;
  double dpo_lr = 1e-4;
  int max_pairs = 600;  // per strategy; a seeded subset is kept above it
  bool length_normalize = false;
  bool mixed_baseline = false;
};

struct GenerationSection {
  int top_k = 0;  // 0 picks the vocabulary-dependent default
  double temperature = 0.9;
  int frames = 128;
  std::string model = "merged";
  int count = 8;
};

struct EvalSection {
  int prompts = 50;
  int memorization_songs = 200;
};

struct RunConfig {
  std::uint64_t seed = 1234;
  int threads = 1;
  corpus::CorpusConfig corpus;
  rvq::FitConfig rvq;  // used for the mixed and both track codecs
  lelm::LeLMConfig lelm;
  TrainerSection trainer;
  AlignmentSection alignment;
  GenerationSection generation;
  EvalSection evalx;
  std::vector<double> merge_alpha{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::vector<std::vector<double>> sweep_points;

  nlohmann::json canonical;  // fully resolved config
  std::string hash;          // 16 hex digits

  int top_k() const;
};

// Every key with its default value; the documented schema.
nlohmann::json default_json();

// Dotted `key=value` pair; the value is parsed as JSON when possible and
// taken as a string otherwise.
std::pair<std::string, nlohmann::json> parse_override(const std::string& text);

// Merges `user` and `overrides` over the defaults and validates the result.
// Unknown keys, wrong types and out-of-range values throw kConfig with the
// offending field path.
RunConfig resolve(const nlohmann::json& user, const std::vector<std::pair<std::string, nlohmann::json>>& overrides);

std::string hash_json(const nlohmann::json& j);

}  // namespace levo::config
