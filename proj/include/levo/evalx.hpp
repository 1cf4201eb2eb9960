#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "levo/corpus.hpp"
#include "levo/generation.hpp"
#include "levo/lelm.hpp"
#include "levo/rvq.hpp"

namespace levo::evalx {

int edit_distance(std::span<const int> a, std::span<const int> b);
double levenshtein_sim(std::span<const int> a, std::span<const int> b);
// Share of the distinct n-grams of `a` that also occur in `b`.
double ngram_overlap(std::span<const int> a, std::span<const int> b, int n = 5);
double pearson(std::span<const double> x, std::span<const double> y);

// The vocal band of a mixed track rescaled by the vocal gain; the bands never
// overlap, so this is the vocal track whenever the mix is exact.
Tensor vocal_from_mixed(const corpus::Synth& synth, const Tensor& mixed);

// Normalized lyric error of a decoded vocal track, capped at 1.
double per_from_vocal(const corpus::Synth& synth, const Tensor& vocal, const corpus::Lyrics& lyrics);
// Decodes S_v (or the mixed stream when there is no dual track) and scores it.
double per_analog(const corpus::Synth& synth, const rvq::MusicCodec& codec, const rvq::TokenStreams& streams,
                  const corpus::Lyrics& lyrics);

struct Stat {
  double mean = 0.0;
  double ci95 = 0.0;  // half-width, normal approximation
  int n = 0;
};
Stat summarize(std::span<const double> xs);

struct ModelMetrics {
  Stat per_analog;
  Stat style_sim_text;
  Stat style_sim_audio;
  Stat musicality;
  double recon_mse = 0.0;
  double ngram5_overlap = 0.0;
  double levenshtein_sim = 0.0;
  std::map<std::string, int> pair_counts;
};

struct MetricsReport {
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, ModelMetrics> models;  // ordered by name
  std::vector<std::string> order;              // insertion order for tables
  void add(const std::string& name, ModelMetrics m);
  std::string to_json() const;
  std::string to_csv() const;
};

// One held-out prompt: the song supplying lyrics, style and audio prompt.
struct EvalItem {
  corpus::Conditions cond;  // lyrics always; style and prompt filled in
  corpus::StyleTag style;
  Tensor prompt_features;   // mixed features the audio prompt was cut from
  corpus::SongTracks reference;
};

struct EvalConfig {
  gen::SamplerConfig sampler;
  int frames = 128;
  std::uint64_t seed = 0;
  bool mixed_only = false;
  int memorization_songs = 200;
};

// Generates every item under text-only, audio-only and combined conditions
// and scores the samples with the corpus oracles.
ModelMetrics evaluate_model(const lelm::LeLM& model, const corpus::Synth& synth, const rvq::MusicCodec& codec,
                            std::span<const EvalItem> items, std::span<const std::vector<int>> training_mixed,
                            const EvalConfig& cfg);

}  // namespace levo::evalx
