#include "levo/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

namespace levo::evalx {

int edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<int> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double levenshtein_sim(std::span<const int> a, std::span<const int> b) {
  const std::size_t m = std::max(a.size(), b.size());
  if (m == 0) return 1.0;
  return 1.0 - static_cast<double>(edit_distance(a, b)) / static_cast<double>(m);
}

double ngram_overlap(std::span<const int> a, std::span<const int> b, int n) {
  check(n >= 1, ErrorCode::kInvalidArgument, "ngram_overlap: n must be at least 1");
  auto grams = [n](std::span<const int> s) {
    std::set<std::vector<int>> out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
      out.emplace(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i) + n);
    return out;
  };
  const auto ga = grams(a);
  if (ga.empty()) return 0.0;
  const auto gb = grams(b);
  std::size_t shared = 0;
  for (const auto& g : ga) shared += gb.count(g);
  return static_cast<double>(shared) / static_cast<double>(ga.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check(x.size() == y.size() && x.size() >= 2, ErrorCode::kInvalidArgument,
        "pearson: needs two equal-length vectors of at least 2 values");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  check(sxx > 0.0 && syy > 0.0, ErrorCode::kInvalidArgument, "pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Tensor vocal_from_mixed(const corpus::Synth& synth, const Tensor& mixed) {
  Tensor v = mixed;
  const int band = synth.vocal_band();
  for (std::int64_t t = 0; t < v.rows(); ++t)
    for (std::int64_t k = 0; k < v.cols(); ++k) v.row(t)[k] = k < band ? v.row(t)[k] / corpus::kVocalGain : 0.0f;
  return v;
}

double per_from_vocal(const corpus::Synth& synth, const Tensor& vocal, const corpus::Lyrics& lyrics) {
  const auto heard = synth.transcribe(vocal);
  const double err = edit_distance(heard, lyrics.symbols);
  return std::min(1.0, err / static_cast<double>(std::max<std::size_t>(lyrics.symbols.size(), 1)));
}

double per_analog(const corpus::Synth& synth, const rvq::MusicCodec& codec, const rvq::TokenStreams& streams,
                  const corpus::Lyrics& lyrics) {
  if (streams.vocal.empty() && !streams.mixed.empty())
    return per_from_vocal(synth, vocal_from_mixed(synth, codec.decode_mixed(streams.mixed)), lyrics);
  check(streams.vocal_vocab == 0 || streams.vocal_vocab == codec.dual.vocal.front().entries.rows(),
        ErrorCode::kInvalidArgument, "per_analog: stream vocabulary does not match the codec");
  if (streams.vocal.empty()) return lyrics.symbols.empty() ? 0.0 : 1.0;
  return per_from_vocal(synth, codec.decode_dual(streams).vocal, lyrics);
}

Stat summarize(std::span<const double> xs) {
  Stat s;
  s.n = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double v = 0;
    for (double x : xs) v += (x - s.mean) * (x - s.mean);
    v /= static_cast<double>(xs.size() - 1);
    s.ci95 = 1.96 * std::sqrt(v / static_cast<double>(xs.size()));
  }
  return s;
}

void MetricsReport::add(const std::string& name, ModelMetrics m) {
  if (!models.contains(name)) order.push_back(name);
  models[name] = std::move(m);
}

namespace {

nlohmann::ordered_json stat_json(const Stat& s) {
  nlohmann::ordered_json j;
  j["mean"] = s.mean;
  j["ci95"] = s.ci95;
  j["n"] = s.n;
  return j;
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash;
  j["seeds"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : seeds) j["seeds"][k] = v;
  j["models"] = nlohmann::ordered_json::object();
  for (const auto& name : order) {
    const auto& m = models.at(name);
    nlohmann::ordered_json e;
    e["per_analog"] = stat_json(m.per_analog);
    e["style_sim_text"] = stat_json(m.style_sim_text);
    e["style_sim_audio"] = stat_json(m.style_sim_audio);
    e["musicality"] = stat_json(m.musicality);
    e["recon_mse"] = m.recon_mse;
    e["ngram5_overlap"] = m.ngram5_overlap;
    e["levenshtein_sim"] = m.levenshtein_sim;
    e["pair_counts"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m.pair_counts) e["pair_counts"][k] = v;
    j["models"][name] = e;
  }
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os.precision(6);
  os << "model,per_analog,style_sim_text,style_sim_audio,musicality,recon_mse\n";
  for (const auto& name : order) {
    const auto& m = models.at(name);
    os << name << ',' << m.per_analog.mean << ',' << m.style_sim_text.mean << ',' << m.style_sim_audio.mean << ','
       << m.musicality.mean << ',' << m.recon_mse << '\n';
  }
  return os.str();
}

ModelMetrics evaluate_model(const lelm::LeLM& model, const corpus::Synth& synth, const rvq::MusicCodec& codec,
                            std::span<const EvalItem> items, std::span<const std::vector<int>> training_mixed,
                            const EvalConfig& cfg) {
  check(!items.empty(), ErrorCode::kInvalidArgument, "evaluate_model: no evaluation items");
  std::vector<double> per, text, audio, music, overlap, lev;
  double recon = 0.0;
  std::int64_t recon_n = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    for (int regime = 0; regime < 3; ++regime) {
      corpus::Conditions c = it.cond;
      if (regime == 1) c.text_style.reset();
      if (regime == 0) c.audio_prompt.reset();
      gen::GenerateConfig gc;
      gc.frames = cfg.frames;
      gc.sampler = cfg.sampler;
      gc.mixed_only = cfg.mixed_only;
      gc.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(regime)});
      const auto out = gen::generate(model, c, gc);
      corpus::SongTracks tr;
      if (cfg.mixed_only) {
        tr.mixed = codec.decode_mixed(out.streams.mixed);
        tr.vocal = vocal_from_mixed(synth, tr.mixed);
      } else {
        tr = codec.decode_dual(out.streams);
      }
      per.push_back(per_from_vocal(synth, tr.vocal, c.lyrics));
      music.push_back(synth.musicality(tr, 0, 0.0));
      if (regime == 0) text.push_back(synth.style_similarity(tr.mixed, it.style));
      if (regime == 1) audio.push_back(synth.style_similarity(tr.mixed, it.prompt_features));
      if (regime == 2 && !training_mixed.empty()) {
        double best_o = 0.0, best_l = 0.0;
        const std::size_t n = std::min<std::size_t>(training_mixed.size(), static_cast<std::size_t>(cfg.memorization_songs));
        for (std::size_t s = 0; s < n; ++s) {
          best_o = std::max(best_o, ngram_overlap(out.streams.mixed, training_mixed[s], 5));
          best_l = std::max(best_l, levenshtein_sim(out.streams.mixed, training_mixed[s]));
        }
        overlap.push_back(best_o);
        lev.push_back(best_l);
      }
    }
    // Codec round trip of the reference through this model's decode path.
    const auto toks = codec.tokenize(it.reference);
    const Tensor dec = cfg.mixed_only ? codec.decode_mixed(toks.mixed) : codec.decode_dual(toks).mixed;
    for (std::size_t k = 0; k < dec.data.size(); ++k) {
      const double d = dec.data[k] - it.reference.mixed.data[k];
      recon += d * d;
    }
    recon_n += dec.size();
  }
  ModelMetrics m;
  m.per_analog = summarize(per);
  m.style_sim_text = summarize(text);
  m.style_sim_audio = summarize(audio);
  m.musicality = summarize(music);
  m.recon_mse = recon / static_cast<double>(recon_n);
  m.ngram5_overlap = summarize(overlap).mean;
  m.levenshtein_sim = summarize(lev).mean;
  return m;
}

}  // namespace levo::evalx
