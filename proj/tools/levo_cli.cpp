#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "levo/levo.h"

namespace {

void print_usage(std::ostream& os) {
  os << "usage: levo <subcommand> [--config file.json] [--set key=value]... [--out dir] [--seed n] [--threads n]\n"
     << "subcommands: ";
  std::string list = levo_subcommands();
  for (auto& c : list)
    if (c == '|') c = ' ';
  os << list << '\n';
}

int exit_code(levo_status s) {
  if (s == LEVO_OK) return 0;
  if (s == LEVO_ERR_CONFIG || s == LEVO_ERR_UNKNOWN_SUBCOMMAND) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LeVo desk-scale pipeline"};
  std::string sub, config_path, out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool quiet = false, print_config = false;
  app.add_option("subcommand", sub, "pipeline step to run");
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", sets, "dotted key=value override (repeatable)");
  app.add_option("--out", out, "run directory (default runs/<timestamp>)");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--threads", threads, "worker threads");
  app.add_flag("--quiet", quiet, "no progress lines on stderr");
  app.add_flag("--print-config", print_config, "print the resolved config and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    print_usage(std::cout);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "levo: " << e.what() << '\n';
    print_usage(std::cerr);
    return 2;
  }

  if (!print_config && !levo_is_subcommand(sub.c_str())) {
    std::cerr << "levo: " << (sub.empty() ? std::string("missing subcommand") : "unknown subcommand '" + sub + "'")
              << '\n';
    print_usage(std::cerr);
    return 2;
  }

  std::string config_text;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) {
      std::cerr << "levo: cannot read config " << config_path << '\n';
      return 2;
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    config_text = ss.str();
  }
  if (seed) sets.push_back("seed=" + std::to_string(*seed));
  if (threads) sets.push_back("threads=" + std::to_string(*threads));
  std::vector<const char*> ov;
  for (const auto& s : sets) ov.push_back(s.c_str());

  if (print_config) {
    char* canonical = nullptr;
    const levo_status s = levo_config_resolve(config_text.c_str(), ov.data(), ov.size(), &canonical, nullptr);
    if (s != LEVO_OK) {
      std::cerr << "levo: " << levo_last_error() << '\n';
      return exit_code(s);
    }
    std::cout << canonical << '\n';
    levo_free_string(canonical);
    return 0;
  }

  levo_run* run = nullptr;
  levo_status s = levo_run_create(config_text.c_str(), ov.data(), ov.size(), out.c_str(), &run);
  if (s != LEVO_OK) {
    std::cerr << "levo: " << levo_status_name(s) << ": " << levo_last_error() << '\n';
    return exit_code(s);
  }
  if (!quiet) levo_run_set_log(run, [](const char* line, void*) { std::fprintf(stderr, "%s\n", line); }, nullptr);
  std::fprintf(stderr, "run directory %s (config %s)\n", levo_run_dir(run), levo_run_config_hash(run));
  s = levo_run_execute(run, sub.c_str());
  if (s != LEVO_OK) std::cerr << "levo: " << levo_status_name(s) << ": " << levo_last_error() << '\n';
  levo_run_destroy(run);
  return exit_code(s);
}
