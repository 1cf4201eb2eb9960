#include "levo/trainer.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <mutex>
#include <thread>
#include <tuple>

#include "json.hpp"

#include "levo/rng.hpp"

namespace levo::train {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrain: return "1";
    case Stage::kExtension: return "2";
    case Stage::kJoint: return "joint";
  }
  return "?";
}

void StageConfig::validate() const {
  check(steps >= 1, ErrorCode::kConfig, "trainer: steps must be at least 1");
  check(batch >= 1, ErrorCode::kConfig, "trainer: batch must be at least 1");
  check(warmup >= 1, ErrorCode::kConfig, "trainer: warmup must be at least 1");
  check(dropout >= 0.0 && dropout <= 1.0, ErrorCode::kConfig, "trainer: dropout must lie in [0, 1]");
  check(lr_scale > 0.0, ErrorCode::kConfig, "trainer: lr_scale must be positive");
  check(threads >= 1, ErrorCode::kConfig, "trainer: threads must be at least 1");
}

std::vector<Example> make_examples(const std::vector<corpus::SongRecord>& songs, const rvq::MusicCodec& codec,
                                   int prompt_frames) {
  std::vector<Example> out;
  out.reserve(songs.size());
  for (const auto& rec : songs) out.push_back({rec.cond, codec.tokenize(rec.tracks)});
  for (auto& ex : out) {
    if (!ex.cond.prompt_ref) continue;
    const auto& ref = *ex.cond.prompt_ref;
    check(ref.song >= 0 && ref.song < static_cast<int>(out.size()), ErrorCode::kInvalidArgument,
          "make_examples: prompt refers to a missing song");
    const auto& src = out[static_cast<std::size_t>(ref.song)].streams.mixed;
    check(ref.offset >= 0 && ref.offset + prompt_frames <= static_cast<int>(src.size()), ErrorCode::kInvalidArgument,
          "make_examples: prompt window outside the song");
    ex.cond.audio_prompt = std::vector<int>(src.begin() + ref.offset, src.begin() + ref.offset + prompt_frames);
  }
  return out;
}

lelm::PrefixSequence training_prefix(const lelm::LeLMConfig& c, const Example& ex, const StageConfig& cfg, int epoch,
                                     int index) {
  Rng rng(derive_seed(cfg.seed, {0xd50u, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(index)}));
  const bool drop_style = rng.bernoulli(cfg.dropout);
  const bool drop_audio = rng.bernoulli(cfg.dropout);
  return lelm::build_prefix(c, ex.cond, drop_style, drop_audio);
}

namespace {

struct Pick {
  int index;
  int epoch;
};

// Epoch-wise shuffled sample order, reproducible from the seed alone.
class Sampler {
 public:
  Sampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}
  Pick next() {
    if (pos_ == order_.size()) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), 0);
      Rng rng(derive_seed(seed_, {0x5u, static_cast<std::uint64_t>(epoch_ + 1)}));
      for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
      ++epoch_;
      pos_ = 0;
    }
    return {order_[pos_++], epoch_ - 1};
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
  int epoch_ = 0;
};

using LossFn = std::function<double(ad::Graph<float>&, const Pick&, ad::Var&)>;

void add_into(GradMap<float>& acc, const GradMap<float>& g) {
  for (const auto& [name, t] : g) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, t);
      continue;
    }
    auto& d = it->second.data;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += t.data[i];
  }
}

TrainResult run_loop(lelm::LeLM& model, std::size_t n, const StageConfig& cfg, const LossFn& song_loss,
                     const StepCallback& on_step) {
  Sampler sampler(n, derive_seed(cfg.seed, {0x77u}));
  AdamState opt;
  opt.hyper = cfg.adam;
  TrainResult res;
  const float inv_b = 1.0f / static_cast<float>(cfg.batch);
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<Pick> picks;
    for (int b = 0; b < cfg.batch; ++b) picks.push_back(sampler.next());
    std::vector<GradMap<float>> grads(picks.size());
    std::vector<double> losses(picks.size());
    auto work = [&](std::size_t b) {
      ad::Graph<float> g(true);
      ad::Var loss;
      losses[b] = song_loss(g, picks[b], loss);
      grads[b] = ad::grad(g, ad::scale(g, loss, inv_b), model.params);
    };
    if (cfg.threads <= 1 || picks.size() == 1) {
      for (std::size_t b = 0; b < picks.size(); ++b) work(b);
    } else {
      for (std::size_t start = 0; start < picks.size(); start += static_cast<std::size_t>(cfg.threads)) {
        std::vector<std::thread> pool;
        for (std::size_t b = start; b < std::min(picks.size(), start + static_cast<std::size_t>(cfg.threads)); ++b)
          pool.emplace_back(work, b);
        for (auto& t : pool) t.join();
      }
    }
    // Reduce in batch order so the sum does not depend on the thread count.
    GradMap<float> total;
    for (const auto& g : grads) add_into(total, g);
    const double lr = cfg.lr_scale * noam_lr(step, model.config.lm_dim, cfg.warmup);
    adam_step(model.params, total, opt, lr);
    LossPoint p{step, stage_name(cfg.stage), std::accumulate(losses.begin(), losses.end(), 0.0) / cfg.batch, lr,
                cfg.seed};
    res.curve.push_back(p);
    if (on_step) on_step(p);
  }
  return res;
}

void require_data(std::span<const Example> data, bool dual) {
  check(!data.empty(), ErrorCode::kInvalidArgument, "trainer: dataset is empty");
  if (dual)
    for (const auto& ex : data)
      check(!ex.streams.vocal.empty() && ex.streams.vocal.size() == ex.streams.mixed.size() &&
                ex.streams.accompaniment.size() == ex.streams.mixed.size(),
            ErrorCode::kInvalidArgument, "trainer: dataset lacks dual-track tokens");
}

double add_dual_loss(ad::Graph<float>& g, const lelm::TeacherForced& tf, const Example& ex, ad::Var& loss) {
  ad::Var lv = ad::cross_entropy(g, tf.dec.logits_v, ex.streams.vocal);
  ad::Var la = ad::cross_entropy(g, tf.dec.logits_a, ex.streams.accompaniment);
  ad::Var dual = ad::add(g, lv, la);
  loss = loss.valid() ? ad::add(g, loss, dual) : dual;
  return g.scalar(loss);
}

}  // namespace

TrainResult train_stage1(lelm::LeLM& model, std::span<const Example> data, const StageConfig& cfg,
                         const StepCallback& on_step) {
  cfg.validate();
  check(cfg.stage == Stage::kPretrain, ErrorCode::kInvalidArgument, "train_stage1: stage must be 1");
  require_data(data, false);
  model.params.unfreeze_all();
  model.params.freeze_prefix("dec.");
  model.params.freeze_prefix("heads.");
  auto res = run_loop(model, data.size(), cfg,
                      [&](ad::Graph<float>& g, const Pick& p, ad::Var& loss) {
                        const auto& ex = data[static_cast<std::size_t>(p.index)];
                        auto prefix = training_prefix(model.config, ex, cfg, p.epoch, p.index);
                        auto lm = lelm::lm_forward(g, model, prefix, ex.streams.mixed);
                        loss = ad::cross_entropy(g, lm.logits_m, ex.streams.mixed);
                        return static_cast<double>(g.scalar(loss));
                      },
                      on_step);
  model.params.unfreeze_all();
  return res;
}

TrainResult train_stage2(lelm::LeLM& model, std::span<const Example> data, const StageConfig& cfg,
                         const StepCallback& on_step) {
  cfg.validate();
  check(cfg.stage == Stage::kExtension, ErrorCode::kInvalidArgument, "train_stage2: stage must be 2");
  require_data(data, true);
  model.params.unfreeze_all();
  model.params.freeze_prefix("lm.");
  // The LM is frozen, so its mixed-position states depend only on the sample
  // and its dropout draw; compute each once.
  std::map<std::tuple<int, bool, bool>, Tensor> cache;
  std::mutex mu;
  auto res = run_loop(model, data.size(), cfg,
                      [&](ad::Graph<float>& g, const Pick& p, ad::Var& loss) {
                        const auto& ex = data[static_cast<std::size_t>(p.index)];
                        auto prefix = training_prefix(model.config, ex, cfg, p.epoch, p.index);
                        const auto key = std::make_tuple(p.index, prefix.style_dropped, prefix.audio_dropped);
                        Tensor hm;
                        {
                          std::lock_guard<std::mutex> lock(mu);
                          auto it = cache.find(key);
                          if (it != cache.end()) hm = it->second;
                        }
                        if (hm.data.empty()) {
                          ad::Graph<float> lg(false);
                          auto lm = lelm::lm_forward(lg, model, prefix, ex.streams.mixed);
                          auto rows = ad::slice_rows(lg, lm.hidden, lm.prefix_len, lm.prefix_len + ex.streams.frames());
                          hm = lg.tensor(rows);
                          std::lock_guard<std::mutex> lock(mu);
                          cache.emplace(key, hm);
                        }
                        const auto& c = model.config;
                        lelm::TeacherForced tf;
                        tf.dec = lelm::dec_forward(g, model, g.constant(hm),
                                                   lelm::shift_right(ex.streams.vocal, c.vocal_vocab),
                                                   lelm::shift_right(ex.streams.accompaniment, c.accomp_vocab), c.delay);
                        return add_dual_loss(g, tf, ex, loss);
                      },
                      on_step);
  model.params.unfreeze_all();
  return res;
}

TrainResult train_joint(lelm::LeLM& model, std::span<const Example> data, const StageConfig& cfg,
                        const StepCallback& on_step) {
  cfg.validate();
  check(cfg.stage == Stage::kJoint, ErrorCode::kInvalidArgument, "train_joint: stage must be joint");
  require_data(data, true);
  model.params.unfreeze_all();
  return run_loop(model, data.size(), cfg,
                  [&](ad::Graph<float>& g, const Pick& p, ad::Var& loss) {
                    const auto& ex = data[static_cast<std::size_t>(p.index)];
                    auto prefix = training_prefix(model.config, ex, cfg, p.epoch, p.index);
                    auto tf = lelm::forward_song(g, model, prefix, ex.streams, true);
                    loss = ad::cross_entropy(g, tf.lm.logits_m, ex.streams.mixed);
                    return add_dual_loss(g, tf, ex, loss);
                  },
                  on_step);
}

DualAccuracy dual_accuracy(const lelm::LeLM& model, std::span<const Example> data) {
  check(!data.empty(), ErrorCode::kInvalidArgument, "dual_accuracy: no data");
  std::int64_t hit_v = 0, hit_a = 0, total = 0;
  for (const auto& ex : data) {
    ad::Graph<float> g(false);
    auto prefix = lelm::build_prefix(model.config, ex.cond, false, false);
    auto tf = lelm::forward_song(g, model, prefix, ex.streams, true);
    auto lv = g.tensor(tf.dec.logits_v), la = g.tensor(tf.dec.logits_a);
    for (std::int64_t t = 0; t < ex.streams.frames(); ++t) {
      hit_v += std::max_element(lv.row(t), lv.row(t) + lv.cols()) - lv.row(t) == ex.streams.vocal[t];
      hit_a += std::max_element(la.row(t), la.row(t) + la.cols()) - la.row(t) == ex.streams.accompaniment[t];
      ++total;
    }
  }
  return {static_cast<double>(hit_v) / static_cast<double>(total),
          static_cast<double>(hit_a) / static_cast<double>(total)};
}

double mixed_cross_entropy(const lelm::LeLM& model, std::span<const Example> data) {
  check(!data.empty(), ErrorCode::kInvalidArgument, "mixed_cross_entropy: no data");
  double total = 0.0;
  std::int64_t frames = 0;
  for (const auto& ex : data) {
    ad::Graph<float> g(false);
    auto lm = lelm::lm_forward(g, model, lelm::build_prefix(model.config, ex.cond, false, false), ex.streams.mixed);
    total += lelm::ce_loss(g.tensor(lm.logits_m), ex.streams.mixed) * static_cast<double>(ex.streams.frames());
    frames += ex.streams.frames();
  }
  return total / static_cast<double>(frames);
}

std::string metrics_line(const LossPoint& p) {
  nlohmann::ordered_json j;
  j["step"] = p.step;
  j["stage"] = p.stage;
  j["loss"] = p.loss;
  j["lr"] = p.lr;
  j["seed"] = p.seed;
  return j.dump();
}

}  // namespace levo::train
