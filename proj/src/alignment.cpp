#include "levo/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "levo/evalx.hpp"
#include "levo/rng.hpp"

namespace levo::align {

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kText: return "text";
    case Regime::kAudio: return "audio";
    case Regime::kBoth: return "both";
  }
  return "?";
}

std::vector<GeneratedSample> mine_samples(const lelm::LeLM& model, std::span<const MiningPrompt> prompts,
                                          const corpus::Synth& synth, const rvq::MusicCodec& codec,
                                          const MiningConfig& cfg) {
  check(cfg.n_per_condition >= 1, ErrorCode::kInvalidArgument, "mine_samples: n_per_condition must be positive");
  std::vector<GeneratedSample> out;
  for (std::size_t li = 0; li < prompts.size(); ++li) {
    const auto& p = prompts[li];
    for (Regime r : {Regime::kText, Regime::kAudio, Regime::kBoth}) {
      corpus::Conditions cond;
      cond.lyrics = p.lyrics;
      if (r != Regime::kAudio) cond.text_style = p.style;
      if (r != Regime::kText) cond.audio_prompt = p.audio_prompt;
      for (int n = 0; n < cfg.n_per_condition; ++n) {
        GeneratedSample s;
        s.lyric_index = static_cast<int>(li);
        s.regime = r;
        s.group = static_cast<int>(li) * 3 + static_cast<int>(r);
        s.cond = cond;
        gen::GenerateConfig gc;
        gc.frames = cfg.frames;
        gc.sampler = cfg.sampler;
        gc.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(s.group), static_cast<std::uint64_t>(n)});
        s.streams = gen::generate(model, cond, gc).streams;
        s.tracks = codec.decode_dual(s.streams);
        const auto heard = synth.transcribe(s.tracks.vocal);
        const double errors = evalx::edit_distance(heard, p.lyrics.symbols);
        s.scores["lyric_errors"] = errors;
        s.scores["per"] = std::min(1.0, errors / static_cast<double>(std::max<std::size_t>(p.lyrics.symbols.size(), 1)));
        if (r != Regime::kAudio) s.scores["style_text"] = synth.style_similarity(s.tracks.mixed, p.style);
        if (r != Regime::kText) s.scores["style_audio"] = synth.style_similarity(s.tracks.mixed, p.prompt_features);
        s.scores["musicality"] = synth.musicality(s.tracks, gc.seed, cfg.musicality_noise);
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

bool strategy1_accepts(double err_w, double err_l, double gap) { return err_l - err_w > gap + kScoreTolerance; }
bool strategy2_text_accepts(double w, double l) {
  return w >= 0.3 - kScoreTolerance && w - l >= 0.1 - kScoreTolerance;
}
bool strategy2_audio_accepts(double w, double l) {
  return w >= 0.75 - kScoreTolerance && w - l > 0.1 + kScoreTolerance;
}

namespace {

std::map<int, std::vector<int>> by_group(std::span<const GeneratedSample> samples) {
  std::map<int, std::vector<int>> g;
  for (std::size_t i = 0; i < samples.size(); ++i) g[samples[i].group].push_back(static_cast<int>(i));
  return g;
}

double score_of(const GeneratedSample& s, const std::string& key) {
  auto it = s.scores.find(key);
  check(it != s.scores.end(), ErrorCode::kInvalidArgument, "sample lacks score '" + key + "'");
  return it->second;
}

template <typename Pred>
std::vector<PreferencePair> grouped_pairs(std::span<const GeneratedSample> samples, std::span<const double> scores,
                                          int strategy, Pred pred) {
  std::vector<PreferencePair> out;
  for (const auto& [group, idx] : by_group(samples)) {
    std::vector<double> s;
    for (int i : idx) s.push_back(scores[static_cast<std::size_t>(i)]);
    for (auto [w, l] : qualifying_pairs(std::span<const double>(s), pred))
      out.push_back({strategy, group, idx[static_cast<std::size_t>(w)], idx[static_cast<std::size_t>(l)],
                     s[static_cast<std::size_t>(w)], s[static_cast<std::size_t>(l)]});
  }
  return out;
}

}  // namespace

std::vector<PreferencePair> build_pairs_strategy1(std::span<const GeneratedSample> samples, double gap) {
  std::vector<double> err;
  for (const auto& s : samples) err.push_back(score_of(s, "lyric_errors"));
  return grouped_pairs(samples, err, 1, [gap](double w, double l) { return strategy1_accepts(w, l, gap); });
}

std::vector<PreferencePair> build_pairs_strategy2(std::span<const GeneratedSample> samples, StyleMode mode) {
  const Regime need = mode == StyleMode::kText ? Regime::kText : Regime::kAudio;
  const char* key = mode == StyleMode::kText ? "style_text" : "style_audio";
  std::vector<double> sc;
  for (const auto& s : samples) {
    check(s.regime == need, ErrorCode::kInvalidArgument,
          std::string("build_pairs_strategy2: sample generated under '") + regime_name(s.regime) +
              "' conditions, expected '" + regime_name(need) + "'");
    sc.push_back(score_of(s, key));
  }
  if (mode == StyleMode::kText) return grouped_pairs(samples, sc, 2, strategy2_text_accepts);
  return grouped_pairs(samples, sc, 2, strategy2_audio_accepts);
}

std::vector<float> reward_features(const corpus::Synth& synth, const corpus::SongTracks& tracks) {
  const Tensor& v = tracks.vocal;
  const Tensor& a = tracks.accompaniment;
  const int band = synth.vocal_band(), d = synth.config().dim;
  const auto T = static_cast<double>(v.rows());
  std::vector<float> f;
  auto pooled = [&](const Tensor& x, int lo, int hi) {
    for (int k = lo; k < hi; ++k) {
      double m = 0, q = 0;
      for (std::int64_t t = 0; t < x.rows(); ++t) m += x.row(t)[k];
      m /= T;
      for (std::int64_t t = 0; t < x.rows(); ++t) q += (x.row(t)[k] - m) * (x.row(t)[k] - m);
      f.push_back(static_cast<float>(m));
      f.push_back(static_cast<float>(q / T));
    }
  };
  pooled(v, 0, band);
  pooled(a, band, d);
  const auto c = synth.contour(v);
  double sq = 0, ab = 0, mean = 0, var = 0;
  int pairs = 0, voiced = 0;
  for (std::size_t t = 0; t < c.size(); ++t) {
    if (std::isnan(c[t])) continue;
    ++voiced;
    mean += c[t];
    if (t > 0 && !std::isnan(c[t - 1])) {
      const double dlt = c[t] - c[t - 1];
      sq += dlt * dlt;
      ab += std::abs(dlt);
      ++pairs;
    }
  }
  if (pairs > 0) {
    sq /= pairs;
    ab /= pairs;
  }
  if (voiced > 0) mean /= voiced;
  for (double x : c)
    if (!std::isnan(x)) var += (x - mean) * (x - mean);
  if (voiced > 0) var /= voiced;
  for (double x : {sq, ab, static_cast<double>(voiced) / T, mean, var}) f.push_back(static_cast<float>(x));
  return f;
}

namespace {

ad::Var rm_forward(ad::Graph<float>& g, const ParamStore& ps, std::span<const std::vector<float>> rows) {
  const auto n = static_cast<std::int64_t>(rows.size());
  const auto d = ps.at("rm.norm.mean").size();
  std::vector<float> x;
  x.reserve(static_cast<std::size_t>(n * d));
  const auto& mu = ps.at("rm.norm.mean").data;
  const auto& sd = ps.at("rm.norm.std").data;
  for (const auto& r : rows) {
    check(static_cast<std::int64_t>(r.size()) == d, ErrorCode::kShapeMismatch, "reward model: feature width");
    for (std::int64_t k = 0; k < d; ++k) x.push_back((r[k] - mu[k]) / sd[k]);
  }
  ad::Var in = g.constant(Shape{n, d}, std::move(x));
  ad::Var h = ad::tanh(g, ad::linear(g, in, g.parameter(ps, "rm.fc1.w"), g.parameter(ps, "rm.fc1.b")));
  return ad::linear(g, h, g.parameter(ps, "rm.fc2.w"), g.parameter(ps, "rm.fc2.b"));
}

}  // namespace

double RewardModel::reward(std::span<const float> features) const {
  ad::Graph<float> g(false);
  std::vector<std::vector<float>> rows{std::vector<float>(features.begin(), features.end())};
  return g.value(rm_forward(g, params, rows))[0];
}

RewardModel train_reward_model(std::span<const LabeledPair> pairs, const RewardConfig& cfg) {
  check(pairs.size() >= 2, ErrorCode::kInvalidArgument, "train_reward_model: need at least 2 pairs");
  check(cfg.hidden >= 1 && cfg.steps >= 1 && cfg.lr > 0.0, ErrorCode::kConfig, "train_reward_model: bad config");
  const auto d = static_cast<std::int64_t>(pairs[0].winner.size());
  std::vector<std::vector<float>> rows;
  for (const auto& p : pairs) {
    check(static_cast<std::int64_t>(p.winner.size()) == d && static_cast<std::int64_t>(p.loser.size()) == d,
          ErrorCode::kShapeMismatch, "train_reward_model: inconsistent feature widths");
    rows.push_back(p.winner);
    rows.push_back(p.loser);
  }
  RewardModel rm;
  Tensor mean(Shape{d}), std_(Shape{d});
  for (std::int64_t k = 0; k < d; ++k) {
    double m = 0, q = 0;
    for (const auto& r : rows) m += r[k];
    m /= static_cast<double>(rows.size());
    for (const auto& r : rows) q += (r[k] - m) * (r[k] - m);
    mean.data[k] = static_cast<float>(m);
    std_.data[k] = static_cast<float>(std::sqrt(q / static_cast<double>(rows.size())) + 1e-6);
  }
  rm.params.add("rm.norm.mean", mean);
  rm.params.add("rm.norm.std", std_);
  rm.params.freeze_prefix("rm.norm.");
  Rng rng(derive_seed(cfg.seed, {0x52u}));
  auto init = [&](Shape s, double scale) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = static_cast<float>(rng.normal() * scale);
    return t;
  };
  rm.params.add("rm.fc1.w", init(Shape{d, cfg.hidden}, 1.0 / std::sqrt(static_cast<double>(d))));
  rm.params.add("rm.fc1.b", Tensor(Shape{cfg.hidden}));
  rm.params.add("rm.fc2.w", init(Shape{cfg.hidden, 1}, 1.0 / std::sqrt(static_cast<double>(cfg.hidden))));
  rm.params.add("rm.fc2.b", Tensor(Shape{1}));

  AdamState opt;
  const auto n = static_cast<std::int64_t>(pairs.size());
  std::vector<int> even(static_cast<std::size_t>(n)), odd(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    even[i] = static_cast<int>(2 * i);
    odd[i] = static_cast<int>(2 * i + 1);
  }
  for (int step = 0; step < cfg.steps; ++step) {
    ad::Graph<float> g(true);
    ad::Var r = rm_forward(g, rm.params, rows);
    ad::Var diff = ad::sub(g, ad::gather_rows(g, r, std::span<const int>(even)), ad::gather_rows(g, r, std::span<const int>(odd)));
    ad::Var loss = ad::scale(g, ad::sum(g, ad::log_sigmoid(g, diff)), -1.0f / static_cast<float>(n));
    adam_step(rm.params, ad::grad(g, loss, rm.params), opt, cfg.lr);
  }
  int correct = 0;
  for (const auto& p : pairs) correct += rm.reward(p.winner) > rm.reward(p.loser);
  rm.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  rm.params.unfreeze_all();
  return rm;
}

Threshold tune_threshold(std::span<const double> signed_gaps, double target) {
  check(!signed_gaps.empty(), ErrorCode::kInvalidArgument, "tune_threshold: no held-out pairs");
  std::vector<double> cand{0.0};
  for (double gp : signed_gaps) cand.push_back(std::abs(gp));
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  double best = -1.0;
  for (double delta : cand) {
    int kept = 0, agree = 0;
    for (double gp : signed_gaps)
      if (std::abs(gp) > delta) {
        ++kept;
        agree += gp > 0.0;
      }
    if (kept == 0) break;
    const double acc = static_cast<double>(agree) / kept;
    best = std::max(best, acc);
    if (acc >= target) return {delta, acc, static_cast<double>(kept) / static_cast<double>(signed_gaps.size())};
  }
  fail(ErrorCode::kUnreachableTarget, "tune_threshold: no threshold reaches accuracy " + std::to_string(target) +
                                          " (best achievable " + std::to_string(std::max(best, 0.0)) + ")");
}

Threshold tune_threshold(const RewardModel& rm, std::span<const LabeledPair> heldout, double target) {
  std::vector<double> gaps;
  for (const auto& p : heldout) gaps.push_back(rm.reward(p.winner) - rm.reward(p.loser));
  return tune_threshold(gaps, target);
}

std::vector<PreferencePair> build_pairs_strategy3(std::span<const double> rewards,
                                                  std::span<const GeneratedSample> samples, double delta) {
  check(rewards.size() == samples.size(), ErrorCode::kShapeMismatch, "build_pairs_strategy3: one reward per sample");
  return grouped_pairs(samples, rewards, 3, [delta](double w, double l) { return w - l > delta; });
}

std::vector<std::pair<int, int>> label_by_agreement(std::span<const GeneratedSample> samples,
                                                    std::span<const int> groups, const corpus::Synth& synth,
                                                    double noise_std, std::uint64_t seed, int votes, int agree) {
  const auto grouped = by_group(samples);
  std::vector<std::pair<int, int>> out;
  for (int g : groups) {
    auto it = grouped.find(g);
    if (it == grouped.end()) continue;
    const auto& idx = it->second;
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        int a_wins = 0;
        for (int v = 0; v < votes; ++v) {
          const auto base = derive_seed(seed, {static_cast<std::uint64_t>(g), a, b, static_cast<std::uint64_t>(v)});
          const double sa = synth.musicality(samples[idx[a]].tracks, derive_seed(base, {1}), noise_std);
          const double sb = synth.musicality(samples[idx[b]].tracks, derive_seed(base, {2}), noise_std);
          a_wins += sa > sb;
        }
        if (a_wins >= agree) out.emplace_back(idx[a], idx[b]);
        else if (votes - a_wins >= agree) out.emplace_back(idx[b], idx[a]);
      }
  }
  return out;
}

ad::Var seq_logprob_var(ad::Graph<float>& g, const lelm::LeLM& model, const lelm::PrefixSequence& prefix,
                        const rvq::TokenStreams& streams, bool length_normalize) {
  check(streams.vocal.size() == streams.mixed.size() && streams.accompaniment.size() == streams.mixed.size() &&
            !streams.mixed.empty(),
        ErrorCode::kInvalidArgument, "seq_logprob: streams must be non-empty and length-consistent");
  const auto& c = model.config;
  auto lm = lelm::lm_forward(g, model, prefix, streams.mixed);
  ad::Var nll = ad::nll_sum(g, lm.logits_m, streams.mixed);
  if (streams.frames() > c.delay) {
    ad::Var hm = ad::slice_rows(g, lm.hidden, lm.prefix_len, lm.prefix_len + streams.frames());
    auto dec = lelm::dec_forward(g, model, hm, lelm::shift_right(streams.vocal, c.vocal_vocab),
                                 lelm::shift_right(streams.accompaniment, c.accomp_vocab), c.delay);
    nll = ad::add(g, nll, ad::add(g, ad::nll_sum(g, dec.logits_v, streams.vocal),
                                  ad::nll_sum(g, dec.logits_a, streams.accompaniment)));
  } else {
    // Too short for the teacher-forced delay window: every step reads h[T-1].
    ad::Var last = ad::slice_rows(g, lm.hidden, lm.prefix_len + streams.frames() - 1, lm.prefix_len + streams.frames());
    std::vector<int> rows(streams.mixed.size(), 0);
    ad::Var hm = ad::gather_rows(g, last, std::span<const int>(rows));
    auto dec = lelm::dec_forward(g, model, hm, lelm::shift_right(streams.vocal, c.vocal_vocab),
                                 lelm::shift_right(streams.accompaniment, c.accomp_vocab), 0);
    nll = ad::add(g, nll, ad::add(g, ad::nll_sum(g, dec.logits_v, streams.vocal),
                                  ad::nll_sum(g, dec.logits_a, streams.accompaniment)));
  }
  const float s = length_normalize ? -1.0f / static_cast<float>(3 * streams.frames()) : -1.0f;
  return ad::scale(g, nll, s);
}

double seq_logprob(const lelm::LeLM& model, const corpus::Conditions& cond, const rvq::TokenStreams& streams,
                   bool length_normalize) {
  ad::Graph<float> g(false);
  return g.scalar(seq_logprob_var(g, model, lelm::build_prefix(model.config, cond, false, false), streams,
                                  length_normalize));
}

double dpo_loss(double logp_w, double logp_l, double ref_logp_w, double ref_logp_l, double beta) {
  check(beta > 0.0, ErrorCode::kInvalidArgument, "dpo_loss: beta must be positive");
  for (double x : {logp_w, logp_l, ref_logp_w, ref_logp_l, beta})
    check(std::isfinite(x), ErrorCode::kNonFinite, "dpo_loss: non-finite input");
  const double z = beta * ((logp_w - ref_logp_w) - (logp_l - ref_logp_l));
  // -log sigmoid(z), stable for both signs.
  return z >= 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

namespace {

struct PairLogps {
  double w = 0.0, l = 0.0;
};

std::vector<PairLogps> reference_logps(const lelm::LeLM& reference, std::span<const DpoPair> pairs, bool norm) {
  std::vector<PairLogps> out;
  for (const auto& p : pairs)
    out.push_back({seq_logprob(reference, p.cond, p.winner, norm), seq_logprob(reference, p.cond, p.loser, norm)});
  return out;
}

}  // namespace

DpoResult train_stage3_dpo(lelm::LeLM& policy, const lelm::LeLM& reference, std::span<const DpoPair> pairs,
                           const DpoConfig& cfg) {
  check(!pairs.empty(), ErrorCode::kInvalidArgument, "train_stage3_dpo: no preference pairs");
  check(cfg.beta > 0.0 && cfg.steps >= 1 && cfg.batch >= 1 && cfg.lr > 0.0 && cfg.threads >= 1, ErrorCode::kConfig,
        "train_stage3_dpo: bad config");
  const auto ref = reference_logps(reference, pairs, cfg.length_normalize);
  policy.params.unfreeze_all();
  AdamState opt;
  opt.hyper = cfg.adam;
  DpoResult res;
  std::vector<int> order(pairs.size());
  std::size_t pos = order.size();
  int epoch = 0;
  const float beta = static_cast<float>(cfg.beta);
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      if (pos == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(cfg.seed, {0xd90u, static_cast<std::uint64_t>(epoch++)}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        pos = 0;
      }
      batch.push_back(order[pos++]);
    }
    std::vector<GradMap<float>> grads(batch.size());
    std::vector<double> losses(batch.size()), margins(batch.size());
    auto work = [&](std::size_t b) {
      const auto& p = pairs[static_cast<std::size_t>(batch[b])];
      const auto& r = ref[static_cast<std::size_t>(batch[b])];
      ad::Graph<float> g(true);
      const auto prefix = lelm::build_prefix(policy.config, p.cond, false, false);
      ad::Var lw = seq_logprob_var(g, policy, prefix, p.winner, cfg.length_normalize);
      ad::Var ll = seq_logprob_var(g, policy, prefix, p.loser, cfg.length_normalize);
      const float ref_gap = static_cast<float>(r.w - r.l);
      ad::Var z = ad::scale(g, ad::sub(g, ad::sub(g, lw, ll), g.constant(Shape{}, {ref_gap})), beta);
      ad::Var loss = ad::scale(g, ad::log_sigmoid(g, z), -1.0f / static_cast<float>(cfg.batch));
      const double zv = cfg.beta * ((g.scalar(lw) - r.w) - (g.scalar(ll) - r.l));
      margins[b] = zv;
      losses[b] = dpo_loss(g.scalar(lw), g.scalar(ll), r.w, r.l, cfg.beta);
      grads[b] = ad::grad(g, loss, policy.params);
    };
    if (cfg.threads <= 1) {
      for (std::size_t b = 0; b < batch.size(); ++b) work(b);
    } else {
      for (std::size_t start = 0; start < batch.size(); start += static_cast<std::size_t>(cfg.threads)) {
        std::vector<std::thread> pool;
        for (std::size_t b = start; b < std::min(batch.size(), start + static_cast<std::size_t>(cfg.threads)); ++b)
          pool.emplace_back(work, b);
        for (auto& t : pool) t.join();
      }
    }
    GradMap<float> total;
    for (const auto& gm : grads)
      for (const auto& [name, t] : gm) {
        auto it = total.find(name);
        if (it == total.end()) {
          total.emplace(name, t);
        } else {
          for (std::size_t i = 0; i < t.data.size(); ++i) it->second.data[i] += t.data[i];
        }
      }
    DpoPoint pt;
    pt.step = step;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      pt.loss += losses[b] / static_cast<double>(batch.size());
      pt.margin += margins[b] / static_cast<double>(batch.size());
      pt.accuracy += (margins[b] > 0.0 ? 1.0 : 0.0) / static_cast<double>(batch.size());
    }
    res.curve.push_back(pt);
    adam_step(policy.params, total, opt, cfg.lr);
  }
  return res;
}

DpoEval evaluate_dpo(const lelm::LeLM& policy, const lelm::LeLM& reference, std::span<const DpoPair> pairs,
                     double beta, bool length_normalize) {
  check(!pairs.empty(), ErrorCode::kInvalidArgument, "evaluate_dpo: no pairs");
  DpoEval e;
  const auto ref = reference_logps(reference, pairs, length_normalize);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double lw = seq_logprob(policy, pairs[i].cond, pairs[i].winner, length_normalize);
    const double ll = seq_logprob(policy, pairs[i].cond, pairs[i].loser, length_normalize);
    const double z = beta * ((lw - ref[i].w) - (ll - ref[i].l));
    e.mean_loss += dpo_loss(lw, ll, ref[i].w, ref[i].l, beta);
    e.mean_margin += z;
    e.accuracy += z > 0.0 ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(pairs.size());
  e.mean_loss /= n;
  e.mean_margin /= n;
  e.accuracy /= n;
  return e;
}

void validate_weights(const MergeWeights& alpha, std::size_t models) {
  check(alpha.size() == models && models > 0, ErrorCode::kInvalidArgument,
        "interpolate: need one weight per model");
  double s = 0.0;
  for (double a : alpha) {
    check(std::isfinite(a) && a >= 0.0, ErrorCode::kInvalidArgument, "interpolate: weights must be non-negative");
    s += a;
  }
  check(std::abs(s - 1.0) <= 1e-9, ErrorCode::kInvalidArgument, "interpolate: weights must sum to 1");
}

namespace {

void check_compatible(std::span<const ParamStore* const> models) {
  check(!models.empty(), ErrorCode::kInvalidArgument, "interpolate: no models");
  const auto& first = models[0]->tensors();
  for (const auto* m : models) {
    check(m->tensors().size() == first.size(), ErrorCode::kShapeMismatch, "interpolate: parameter sets differ");
    for (const auto& [name, t] : first) {
      check(m->contains(name), ErrorCode::kShapeMismatch, "interpolate: missing parameter " + name);
      check(m->at(name).shape == t.shape, ErrorCode::kShapeMismatch, "interpolate: shape mismatch for " + name);
    }
  }
}

}  // namespace

ParamStore64 interpolate_unnormalized(std::span<const ParamStore* const> models, std::span<const double> alpha) {
  check_compatible(models);
  check(alpha.size() == models.size(), ErrorCode::kInvalidArgument, "interpolate: need one weight per model");
  ParamStore64 out;
  for (const auto& [name, t] : models[0]->tensors()) {
    Tensor64 acc(t.shape);
    for (std::size_t i = 0; i < models.size(); ++i) {
      if (alpha[i] == 0.0) continue;
      const auto& src = models[i]->at(name).data;
      for (std::size_t k = 0; k < src.size(); ++k) acc.data[k] += alpha[i] * static_cast<double>(src[k]);
    }
    out.add(name, std::move(acc));
  }
  return out;
}

ParamStore interpolate(std::span<const ParamStore* const> models, const MergeWeights& alpha) {
  validate_weights(alpha, models.size());
  const auto acc = interpolate_unnormalized(models, alpha);
  ParamStore out;
  for (const auto& [name, t] : acc.tensors()) out.add(name, t.cast<float>());
  return out;
}

std::string pair_line(const PreferencePair& p, std::span<const GeneratedSample> samples) {
  const auto& w = samples[static_cast<std::size_t>(p.winner)];
  nlohmann::ordered_json j;
  j["strategy"] = p.strategy;
  j["condition"] = {{"group", p.group}, {"lyric", w.lyric_index}, {"regime", regime_name(w.regime)}};
  j["winner"] = p.winner;
  j["loser"] = p.loser;
  j["score_w"] = p.score_w;
  j["score_l"] = p.score_l;
  return j.dump();
}

}  // namespace levo::align
