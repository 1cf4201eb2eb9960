#include "levo/levo.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "levo/alignment.hpp"
#include "levo/checkpoint.hpp"
#include "levo/config.hpp"
#include "levo/pipeline.hpp"

struct levo_run {
  std::unique_ptr<levo::pipeline::Pipeline> pipeline;
  std::string hash;
  levo_log_fn log_fn = nullptr;
  void* log_user = nullptr;
};

struct levo_checkpoint {
  levo::ParamStore params;
  std::vector<std::string> names;
  void index() {
    names.clear();
    for (const auto& [n, _] : params.tensors()) names.push_back(n);
  }
};

namespace {

thread_local std::string g_last_error;

levo_status to_status(levo::ErrorCode c) { return static_cast<levo_status>(static_cast<int>(c)); }

levo_status fail(levo_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
levo_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return LEVO_OK;
  } catch (const levo::Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(LEVO_ERR_CONFIG, std::string("config: ") + e.what());
  } catch (const std::exception& e) {
    return fail(LEVO_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(LEVO_ERR_INTERNAL, "unknown exception");
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

levo::config::RunConfig resolve(const char* config_json, const char* const* overrides, size_t n) {
  nlohmann::json user;
  if (config_json && *config_json) {
    user = nlohmann::json::parse(config_json, nullptr, false);
    levo::check(!user.is_discarded(), levo::ErrorCode::kConfig, "config: not valid JSON");
  }
  std::vector<std::pair<std::string, nlohmann::json>> ov;
  for (size_t i = 0; i < n; ++i) {
    levo::check(overrides && overrides[i], levo::ErrorCode::kInvalidArgument, "null override");
    ov.push_back(levo::config::parse_override(overrides[i]));
  }
  return levo::config::resolve(user, ov);
}

class CallbackBuf : public std::stringbuf {
 public:
  explicit CallbackBuf(levo_run* run) : run_(run) {}
  int sync() override {
    std::string s = str();
    str("");
    std::size_t start = 0;
    for (std::size_t nl; (nl = s.find('\n', start)) != std::string::npos; start = nl + 1)
      if (run_->log_fn) run_->log_fn(s.substr(start, nl - start).c_str(), run_->log_user);
    if (start < s.size()) str(s.substr(start));
    return 0;
  }

 private:
  levo_run* run_;
};

}  // namespace

extern "C" {

const char* levo_version(void) { return "0.1.0"; }

const char* levo_status_name(levo_status s) {
  switch (s) {
    case LEVO_OK: return "ok";
    case LEVO_ERR_UNKNOWN_SUBCOMMAND: return "unknown subcommand";
    case LEVO_ERR_INTERNAL: return "internal error";
    default: break;
  }
  if (s >= LEVO_ERR_INVALID_ARGUMENT && s <= LEVO_ERR_RUNTIME)
    return levo::error_code_name(static_cast<levo::ErrorCode>(static_cast<int>(s)));
  return "unknown status";
}

const char* levo_last_error(void) { return g_last_error.c_str(); }

void levo_free_string(char* s) { std::free(s); }

const char* levo_subcommands(void) {
  static const std::string joined = [] {
    std::string j;
    for (const auto& s : levo::pipeline::subcommands()) j += (j.empty() ? "" : "|") + s;
    return j;
  }();
  return joined.c_str();
}

int levo_is_subcommand(const char* name) { return name && levo::pipeline::is_subcommand(name) ? 1 : 0; }

levo_status levo_config_defaults(char** out_json) {
  if (!out_json) return fail(LEVO_ERR_INVALID_ARGUMENT, "out_json is null");
  return guarded([&] { *out_json = dup(levo::config::resolve(nullptr, {}).canonical.dump(2)); });
}

levo_status levo_config_resolve(const char* config_json, const char* const* overrides, size_t n_overrides,
                                char** out_canonical, char** out_hash) {
  return guarded([&] {
    const auto cfg = resolve(config_json, overrides, n_overrides);
    if (out_canonical) *out_canonical = dup(cfg.canonical.dump(2));
    if (out_hash) *out_hash = dup(cfg.hash);
  });
}

levo_status levo_run_create(const char* config_json, const char* const* overrides, size_t n_overrides,
                            const char* out_dir, levo_run** out_run) {
  if (!out_run) return fail(LEVO_ERR_INVALID_ARGUMENT, "out_run is null");
  *out_run = nullptr;
  return guarded([&] {
    auto cfg = resolve(config_json, overrides, n_overrides);
    auto run = std::make_unique<levo_run>();
    run->hash = cfg.hash;
    const std::string dir = levo::pipeline::resolve_run_dir(out_dir ? out_dir : "");
    run->pipeline = std::make_unique<levo::pipeline::Pipeline>(std::move(cfg), dir, nullptr);
    *out_run = run.release();
  });
}

void levo_run_set_log(levo_run* run, levo_log_fn fn, void* user) {
  if (!run) return;
  run->log_fn = fn;
  run->log_user = user;
}

levo_status levo_run_execute(levo_run* run, const char* subcommand) {
  if (!run) return fail(LEVO_ERR_INVALID_ARGUMENT, "run is null");
  if (!levo_is_subcommand(subcommand))
    return fail(LEVO_ERR_UNKNOWN_SUBCOMMAND,
                std::string("unknown subcommand '") + (subcommand ? subcommand : "") + "'");
  return guarded([&] {
    CallbackBuf buf(run);
    std::ostream log(&buf);
    run->pipeline->set_log(run->log_fn ? &log : nullptr);
    try {
      run->pipeline->run(subcommand);
    } catch (...) {
      run->pipeline->set_log(nullptr);
      throw;
    }
    log.flush();
    run->pipeline->set_log(nullptr);
  });
}

const char* levo_run_dir(const levo_run* run) { return run ? run->pipeline->dir().c_str() : ""; }

const char* levo_run_config_hash(const levo_run* run) { return run ? run->hash.c_str() : ""; }

void levo_run_destroy(levo_run* run) { delete run; }

levo_status levo_checkpoint_load(const char* path, levo_checkpoint** out) {
  if (!path || !out) return fail(LEVO_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto c = std::make_unique<levo_checkpoint>();
    c->params = levo::load_checkpoint(path);
    c->index();
    *out = c.release();
  });
}

levo_status levo_checkpoint_save(const levo_checkpoint* ckpt, const char* path) {
  if (!ckpt || !path) return fail(LEVO_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] { levo::save_checkpoint(ckpt->params, path); });
}

size_t levo_checkpoint_count(const levo_checkpoint* ckpt) { return ckpt ? ckpt->names.size() : 0; }

const char* levo_checkpoint_name(const levo_checkpoint* ckpt, size_t index) {
  if (!ckpt || index >= ckpt->names.size()) return nullptr;
  return ckpt->names[index].c_str();
}

levo_status levo_checkpoint_tensor(const levo_checkpoint* ckpt, const char* name, const float** out_data,
                                   size_t* out_size) {
  if (!ckpt || !name || !out_data || !out_size) return fail(LEVO_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const auto& t = ckpt->params.at(name);
    *out_data = t.data.data();
    *out_size = t.data.size();
  });
}

uint64_t levo_checkpoint_checksum(const levo_checkpoint* ckpt, const char* prefix) {
  if (!ckpt) return 0;
  return levo::checksum(ckpt->params, prefix ? prefix : "");
}

levo_status levo_checkpoint_interpolate(const levo_checkpoint* const* ckpts, const double* alpha, size_t n,
                                        levo_checkpoint** out) {
  if (!ckpts || !alpha || !out || n == 0) return fail(LEVO_ERR_INVALID_ARGUMENT, "null or empty argument");
  *out = nullptr;
  return guarded([&] {
    std::vector<const levo::ParamStore*> ptrs;
    for (size_t i = 0; i < n; ++i) {
      levo::check(ckpts[i] != nullptr, levo::ErrorCode::kInvalidArgument, "null checkpoint");
      ptrs.push_back(&ckpts[i]->params);
    }
    auto c = std::make_unique<levo_checkpoint>();
    c->params = levo::align::interpolate(ptrs, levo::align::MergeWeights(alpha, alpha + n));
    c->index();
    *out = c.release();
  });
}

void levo_checkpoint_destroy(levo_checkpoint* ckpt) { delete ckpt; }

}  // extern "C"
