#include "levo/generation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace levo::gen {

int default_top_k(int vocab) { return vocab >= 512 ? 50 : std::min(8, vocab); }

int top_k_sample(std::span<const float> logits, const SamplerConfig& cfg, Rng& rng) {
  const auto n = static_cast<int>(logits.size());
  check(cfg.top_k >= 1, ErrorCode::kInvalidArgument, "top_k_sample: k must be at least 1");
  check(cfg.top_k <= n, ErrorCode::kInvalidArgument, "top_k_sample: k exceeds vocabulary");
  check(cfg.temperature > 0.0 && std::isfinite(cfg.temperature), ErrorCode::kInvalidArgument,
        "top_k_sample: temperature must be positive");
  for (float v : logits) check(std::isfinite(v), ErrorCode::kNonFinite, "top_k_sample: non-finite logit");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + cfg.top_k, idx.end(), [&](int a, int b) {
    return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
  });
  idx.resize(static_cast<std::size_t>(cfg.top_k));
  const double top = logits[idx[0]];
  std::vector<double> w(idx.size());
  double total = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    w[i] = std::exp((static_cast<double>(logits[idx[i]]) - top) / cfg.temperature);
    total += w[i];
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    acc += w[i];
    if (u < acc) return idx[i];
  }
  // u landed on the rounding slack at the top end; take the last positive weight.
  for (std::size_t i = idx.size(); i-- > 0;)
    if (w[i] > 0.0) return idx[i];
  return idx[0];
}

GenerateResult generate(const lelm::LeLM& model, const corpus::Conditions& cond, const GenerateConfig& cfg) {
  const auto& c = model.config;
  check(cfg.frames >= 1, ErrorCode::kInvalidArgument, "generate: frames must be at least 1");
  const auto prefix = lelm::build_prefix(c, cond, cfg.drop_style, cfg.drop_audio);
  check(prefix.size() + cfg.frames <= c.max_context, ErrorCode::kContextOverflow,
        "generate: prefix plus " + std::to_string(cfg.frames) + " frames exceeds max context");

  Rng rng_m(derive_seed(cfg.seed, {1}));
  Rng rng_v(derive_seed(cfg.seed, {2}));
  Rng rng_a(derive_seed(cfg.seed, {3}));
  SamplerConfig sm = cfg.sampler, sv = cfg.sampler, sa = cfg.sampler;
  sm.top_k = std::min(sm.top_k, c.mixed_vocab());
  sv.top_k = std::min(sv.top_k, c.vocal_vocab);
  sa.top_k = std::min(sa.top_k, c.accomp_vocab);

  GenerateResult res;
  auto& st = res.streams;
  st.mixed_vocab = c.mixed_codes;
  st.vocal_vocab = c.vocal_vocab;
  st.accomp_vocab = c.accomp_vocab;

  lelm::LmSession lm(model, cfg.use_cache);
  for (std::int64_t i = 0; i < prefix.size(); ++i) lm.feed(prefix.tokens[i], prefix.segments[i]);
  lelm::DecSession dec(model, cfg.use_cache);
  std::vector<std::vector<float>> hidden;
  int final_len = -1;  // known once EOS is drawn or the request is filled
  int t = 0;
  while (true) {
    if (final_len < 0) {
      const int tok = top_k_sample(lm.logits(), sm, rng_m);
      if (tok == c.eos()) {
        check(!st.mixed.empty(), ErrorCode::kRuntime, "generate: EOS before any frame");
        res.hit_eos = true;
        final_len = static_cast<int>(st.mixed.size());
      } else {
        st.mixed.push_back(tok);
        if (static_cast<int>(st.mixed.size()) == cfg.frames) final_len = cfg.frames;
        lm.feed(lelm::mixed_token(c, tok), lelm::kSegMixed);
        hidden.push_back(lm.hidden());
      }
    }
    if (cfg.mixed_only) {
      if (final_len >= 0) break;
      continue;
    }
    while (final_len < 0 || t < final_len) {
      int need = t + c.delay;
      if (final_len >= 0) need = std::min(need, final_len - 1);
      if (need >= static_cast<int>(hidden.size())) break;
      res.access_log.push_back({t, need, static_cast<int>(hidden.size())});
      const int pv = t == 0 ? c.vocal_vocab : st.vocal.back();
      const int pa = t == 0 ? c.accomp_vocab : st.accompaniment.back();
      dec.feed(pv, pa, hidden[static_cast<std::size_t>(need)]);
      st.vocal.push_back(top_k_sample(dec.logits_v(), sv, rng_v));
      st.accompaniment.push_back(top_k_sample(dec.logits_a(), sa, rng_a));
      ++t;
    }
    if (final_len >= 0 && t == final_len) break;
  }
  if (cfg.mixed_only) {
    st.vocal.clear();
    st.accompaniment.clear();
  }
  return res;
}

}  // namespace levo::gen
