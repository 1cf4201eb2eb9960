#pragma once

#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "levo/alignment.hpp"
#include "levo/config.hpp"
#include "levo/evalx.hpp"
#include "levo/trainer.hpp"

namespace levo::pipeline {

// Every subcommand the CLI accepts, in pipeline order.
const std::vector<std::string>& subcommands();
bool is_subcommand(const std::string& name);

// Named seeds, all derived from the master seed.
std::map<std::string, std::uint64_t> planned_seeds(std::uint64_t master);

// Run directory: `out` when given, runs/<UTC timestamp> otherwise.
std::string resolve_run_dir(const std::string& out);

class Pipeline {
 public:
  // Creates the run directory and writes config.json, config.hash and
  // seeds.json. A directory holding a different config hash is rejected.
  Pipeline(config::RunConfig cfg, std::string run_dir, std::ostream* log = nullptr);

  void run(const std::string& subcommand);
  void set_log(std::ostream* log) { log_ = log; }

  void gen_corpus();
  void fit_codec();
  void train();
  void mine();
  void build_pairs();
  void train_dpo();
  void merge();
  void generate();
  void eval();
  void ablate();
  void sweep();
  void all();

  const std::string& dir() const { return dir_; }
  const config::RunConfig& config() const { return cfg_; }

 private:
  struct Data;

  std::string path(const std::string& name) const;
  Data& data();
  const rvq::MusicCodec& codec();
  lelm::LeLMConfig model_config() const;
  lelm::LeLM load_model(const std::string& file);
  void save_model(const lelm::LeLM& m, const std::string& file);
  std::vector<align::MiningPrompt> mining_prompts();
  std::vector<evalx::EvalItem> eval_items();
  std::vector<align::GeneratedSample> load_samples();
  evalx::ModelMetrics evaluate(const lelm::LeLM& m, bool mixed_only, const std::string& seed_name);
  void note(const std::string& line);

  config::RunConfig cfg_;
  std::string dir_;
  std::ostream* log_;
  std::map<std::string, std::uint64_t> seeds_;
  std::shared_ptr<Data> data_;
  std::optional<rvq::MusicCodec> codec_;
};

}  // namespace levo::pipeline
