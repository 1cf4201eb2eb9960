#include "levo/config.hpp"

#include <cmath>
#include <cstdio>

namespace levo::config {

using nlohmann::json;

int RunConfig::top_k() const { return generation.top_k > 0 ? generation.top_k : gen::default_top_k(lelm.mixed_vocab()); }

json default_json() {
  const RunConfig d;
  const auto& c = d.corpus;
  const auto& r = d.rvq;
  const auto& l = d.lelm;
  const auto& t = d.trainer;
  const auto& a = d.alignment;
  const auto& g = d.generation;
  json j;
  j["seed"] = d.seed;
  j["threads"] = d.threads;
  j["corpus"] = {{"count", c.count},
                 {"frames", c.frames},
                 {"dim", c.dim},
                 {"lyric_vocab", c.lyric_vocab},
                 {"style_count", c.style_count},
                 {"prompt_frames", c.prompt_frames},
                 {"min_sections", c.min_sections},
                 {"max_sections", c.max_sections},
                 {"min_section_len", c.min_section_len},
                 {"max_section_len", c.max_section_len},
                 {"symbol_frames", c.symbol_frames},
                 {"accomp_noise", c.accomp_noise},
                 {"melody_depth", c.melody_depth},
                 {"style_prob", c.style_prob},
                 {"prompt_prob", c.prompt_prob},
                 {"frame_rate", c.frame_rate}};
  j["rvq"] = {{"stages", r.stages},       {"codebook_size", r.codebook_size}, {"iters", r.iters},
              {"ema_decay", r.ema_decay}, {"batch", r.batch},                 {"max_samples", r.max_samples}};
  j["lelm"] = {{"lm_layers", l.lm_layers},   {"lm_dim", l.lm_dim},       {"lm_heads", l.lm_heads},
               {"lm_ffn", l.lm_ffn},         {"dec_layers", l.dec_layers}, {"dec_dim", l.dec_dim},
               {"dec_heads", l.dec_heads},   {"dec_ffn", l.dec_ffn},     {"delay", l.delay},
               {"max_context", l.max_context}, {"init_std", l.init_std}};
  j["trainer"] = {{"stage1_steps", t.stage1_steps}, {"stage2_steps", t.stage2_steps}, {"joint_steps", t.joint_steps},
                  {"batch", t.batch},               {"warmup", t.warmup},             {"lr_scale", t.lr_scale},
                  {"dropout", t.dropout},           {"heldout", t.heldout}};
  j["alignment"] = {{"mining_lyrics", a.mining_lyrics},
                    {"n_per_condition", a.n_per_condition},
                    {"musicality_noise", a.musicality_noise},
                    {"strategy1_gap", a.strategy1_gap},
                    {"labeled_groups", a.labeled_groups},
                    {"votes", a.votes},
                    {"agree", a.agree},
                    {"heldout_fraction", a.heldout_fraction},
                    {"reward_steps", a.reward_steps},
                    {"reward_hidden", a.reward_hidden},
                    {"threshold_target", a.threshold_target},
                    {"beta", a.beta},
                    {"dpo_steps", a.dpo_steps},
                    {"dpo_batch", a.dpo_batch},
                    {"dpo_lr", a.dpo_lr},
                    {"max_pairs", a.max_pairs},
                    {"length_normalize", a.length_normalize},
                    {"mixed_baseline", a.mixed_baseline}};
  j["generation"] = {{"top_k", g.top_k},
                     {"temperature", g.temperature},
                     {"frames", g.frames},
                     {"model", g.model},
                     {"count", g.count}};
  j["evalx"] = {{"prompts", d.evalx.prompts}, {"memorization_songs", d.evalx.memorization_songs}};
  j["merge"] = {{"alpha", d.merge_alpha}};
  const double u = 1.0 / 3;
  j["sweep"] = {{"points", json::array({json::array({1, 0, 0}), json::array({0, 1, 0}), json::array({0, 0, 1}),
                                        json::array({u, u, u}), json::array({0.5, 0.5, 0}),
                                        json::array({0.5, 0, 0.5}), json::array({0, 0.5, 0.5})})}};
  return j;
}

std::pair<std::string, json> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  check(eq != std::string::npos && eq > 0, ErrorCode::kConfig, "override '" + text + "' is not key=value");
  const std::string key = text.substr(0, eq), raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  return {key, value};
}

namespace {

bool same_kind(const json& want, const json& got) {
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_number()) return got.is_number();
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_string()) return got.is_string();
  if (want.is_array()) return got.is_array();
  if (want.is_object()) return got.is_object();
  return false;
}

void merge_into(json& base, const json& user, const std::string& path) {
  check(user.is_object(), ErrorCode::kConfig, (path.empty() ? std::string("config") : path) + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    check(base.contains(it.key()), ErrorCode::kConfig, p + ": unknown field");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), p);
      continue;
    }
    check(same_kind(slot, it.value()), ErrorCode::kConfig, p + ": expected " + std::string(slot.type_name()) +
                                                               ", got " + it.value().type_name());
    slot = it.value();
  }
}

void set_path(json& base, const std::string& key, const json& value) {
  json* cur = &base;
  std::size_t start = 0;
  std::string walked;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    walked = walked.empty() ? part : walked + "." + part;
    check(cur->is_object() && cur->contains(part), ErrorCode::kConfig, walked + ": unknown field");
    cur = &(*cur)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json v = value;
  // Let "--set x.y=3" fill a float field.
  if (cur->is_number_float() && v.is_number_integer()) v = static_cast<double>(v.get<std::int64_t>());
  check(!cur->is_object(), ErrorCode::kConfig, key + ": cannot override a whole section");
  check(same_kind(*cur, v), ErrorCode::kConfig,
        key + ": expected " + std::string(cur->type_name()) + ", got " + v.type_name());
  *cur = v;
}

struct Reader {
  const json& root;
  template <typename T>
  T get(const std::string& path) const {
    const json* cur = &root;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      cur = &cur->at(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    return cur->get<T>();
  }
  int i(const std::string& p, int lo, int hi = 1 << 30) const {
    const auto v = get<std::int64_t>(p);
    check(v >= lo && v <= hi, ErrorCode::kConfig,
          p + ": " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(v);
  }
  double d(const std::string& p, double lo, double hi, bool open_lo = false) const {
    const auto v = get<double>(p);
    const bool ok = std::isfinite(v) && (open_lo ? v > lo : v >= lo) && v <= hi;
    check(ok, ErrorCode::kConfig, p + ": " + std::to_string(v) + " out of range");
    return v;
  }
};

std::vector<double> weights(const json& j, const std::string& path) {
  check(j.is_array() && j.size() == 3, ErrorCode::kConfig, path + ": expected three weights");
  std::vector<double> w;
  double s = 0;
  for (const auto& x : j) {
    check(x.is_number(), ErrorCode::kConfig, path + ": weights must be numbers");
    w.push_back(x.get<double>());
    check(w.back() >= 0.0, ErrorCode::kConfig, path + ": weights must be non-negative");
    s += w.back();
  }
  check(std::abs(s - 1.0) <= 1e-9, ErrorCode::kConfig, path + ": weights must sum to 1");
  return w;
}

}  // namespace

std::string hash_json(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig resolve(const json& user, const std::vector<std::pair<std::string, json>>& overrides) {
  json j = default_json();
  if (!user.is_null()) merge_into(j, user, "");
  for (const auto& [k, v] : overrides) set_path(j, k, v);

  RunConfig c;
  Reader r{j};
  c.seed = r.get<std::uint64_t>("seed");
  c.threads = r.i("threads", 1, 256);

  auto& co = c.corpus;
  co.count = r.i("corpus.count", 1);
  co.frames = r.i("corpus.frames", 2);
  co.dim = r.i("corpus.dim", corpus::kAccompBand + 1, 64);
  co.lyric_vocab = r.i("corpus.lyric_vocab", 2);
  co.style_count = r.i("corpus.style_count", 2);
  co.prompt_frames = r.i("corpus.prompt_frames", 1, co.frames);
  co.min_sections = r.i("corpus.min_sections", 1);
  co.max_sections = r.i("corpus.max_sections", co.min_sections);
  co.min_section_len = r.i("corpus.min_section_len", 1);
  co.max_section_len = r.i("corpus.max_section_len", co.min_section_len);
  co.symbol_frames = r.i("corpus.symbol_frames", 0);
  check(co.symbol_frames != 1, ErrorCode::kConfig, "corpus.symbol_frames: must be 0 or at least 2");
  const int longest = co.max_sections * (co.max_section_len + 1);
  check(co.symbol_frames > 0 ? longest * co.symbol_frames <= co.frames : 2 * longest <= co.frames, ErrorCode::kConfig,
        "corpus.frames: too short for the longest lyrics (" + std::to_string(longest) + " symbols)");
  co.accomp_noise = r.d("corpus.accomp_noise", 0.0, 10.0);
  co.melody_depth = r.d("corpus.melody_depth", 0.0, 1.0);
  co.style_prob = r.d("corpus.style_prob", 0.0, 1.0);
  co.prompt_prob = r.d("corpus.prompt_prob", 0.0, 1.0);
  co.frame_rate = r.d("corpus.frame_rate", 0.0, 1e6, true);

  auto& rq = c.rvq;
  rq.stages = r.i("rvq.stages", 1, 16);
  rq.codebook_size = r.i("rvq.codebook_size", 2, 65536);
  rq.iters = r.i("rvq.iters", 1);
  rq.ema_decay = r.d("rvq.ema_decay", 0.0, 1.0);
  rq.batch = r.i("rvq.batch", 1);
  rq.max_samples = r.i("rvq.max_samples", 1);

  auto& l = c.lelm;
  l.lm_layers = r.i("lelm.lm_layers", 1, 64);
  l.lm_dim = r.i("lelm.lm_dim", 1, 4096);
  l.lm_heads = r.i("lelm.lm_heads", 1, 64);
  l.lm_ffn = r.i("lelm.lm_ffn", 1, 16384);
  l.dec_layers = r.i("lelm.dec_layers", 0, l.lm_layers - 1);
  l.dec_dim = r.i("lelm.dec_dim", 1, 4096);
  l.dec_heads = r.i("lelm.dec_heads", 1, 64);
  l.dec_ffn = r.i("lelm.dec_ffn", 1, 16384);
  l.delay = r.i("lelm.delay", 0, co.frames - 1);
  l.max_context = r.i("lelm.max_context", 1, 1 << 16);
  l.init_std = r.d("lelm.init_std", 0.0, 10.0, true);
  check(l.lm_dim % l.lm_heads == 0, ErrorCode::kConfig, "lelm.lm_heads: must divide lelm.lm_dim");
  check(l.dec_dim % l.dec_heads == 0, ErrorCode::kConfig, "lelm.dec_heads: must divide lelm.dec_dim");
  l.lyric_vocab = co.lyric_vocab + 2;
  l.style_vocab = co.style_count;
  l.mixed_codes = l.vocal_vocab = l.accomp_vocab = rq.codebook_size;
  const int prefix_max = 4 + 1 + co.prompt_frames + longest;
  check(prefix_max + co.frames <= l.max_context, ErrorCode::kConfig,
        "lelm.max_context: needs at least " + std::to_string(prefix_max + co.frames) + " positions");

  auto& t = c.trainer;
  t.stage1_steps = r.i("trainer.stage1_steps", 1);
  t.stage2_steps = r.i("trainer.stage2_steps", 1);
  t.joint_steps = r.i("trainer.joint_steps", 1);
  t.batch = r.i("trainer.batch", 1);
  t.warmup = r.i("trainer.warmup", 1);
  t.lr_scale = r.d("trainer.lr_scale", 0.0, 1e3, true);
  t.dropout = r.d("trainer.dropout", 0.0, 1.0);
  t.heldout = r.i("trainer.heldout", 2, co.count - 1);

  auto& a = c.alignment;
  a.mining_lyrics = r.i("alignment.mining_lyrics", 1);
  a.n_per_condition = r.i("alignment.n_per_condition", 2);
  a.musicality_noise = r.d("alignment.musicality_noise", 0.0, 1e3);
  a.strategy1_gap = r.d("alignment.strategy1_gap", 0.0, 1e6);
  a.labeled_groups = r.i("alignment.labeled_groups", 1);
  a.votes = r.i("alignment.votes", 1, 99);
  a.agree = r.i("alignment.agree", a.votes / 2 + 1, a.votes);
  a.heldout_fraction = r.d("alignment.heldout_fraction", 0.0, 1.0, true);
  a.reward_steps = r.i("alignment.reward_steps", 1);
  a.reward_hidden = r.i("alignment.reward_hidden", 1, 4096);
  a.threshold_target = r.d("alignment.threshold_target", 0.0, 1.0);
  a.beta = r.d("alignment.beta", 0.0, 1e3, true);
  a.dpo_steps = r.i("alignment.dpo_steps", 1);
  a.dpo_batch = r.i("alignment.dpo_batch", 1);
  a.dpo_lr = r.d("alignment.dpo_lr", 0.0, 1.0, true);
  a.max_pairs = r.i("alignment.max_pairs", 1);
  a.length_normalize = r.get<bool>("alignment.length_normalize");
  a.mixed_baseline = r.get<bool>("alignment.mixed_baseline");

  auto& g = c.generation;
  g.top_k = r.i("generation.top_k", 0, l.mixed_vocab());
  g.temperature = r.d("generation.temperature", 0.0, 1e3, true);
  g.frames = r.i("generation.frames", 1, co.frames);
  g.model = r.get<std::string>("generation.model");
  check(g.model == "merged" || g.model == "stage1" || g.model == "stage2" || g.model == "dpo_s1" ||
            g.model == "dpo_s2" || g.model == "dpo_s3",
        ErrorCode::kConfig, "generation.model: unknown model '" + g.model + "'");
  g.count = r.i("generation.count", 1);

  c.evalx.prompts = r.i("evalx.prompts", 1, t.heldout - t.heldout / 2);
  c.evalx.memorization_songs = r.i("evalx.memorization_songs", 0);

  c.merge_alpha = weights(j["merge"]["alpha"], "merge.alpha");
  const auto& pts = j["sweep"]["points"];
  check(!pts.empty(), ErrorCode::kConfig, "sweep.points: needs at least one point");
  for (std::size_t i = 0; i < pts.size(); ++i)
    c.sweep_points.push_back(weights(pts[i], "sweep.points[" + std::to_string(i) + "]"));

  c.canonical = j;
  c.hash = hash_json(j);
  return c;
}

}  // namespace levo::config
