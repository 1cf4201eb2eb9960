#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "levo/corpus.hpp"
#include "levo/generation.hpp"
#include "levo/lelm.hpp"
#include "levo/optim.hpp"
#include "levo/rvq.hpp"

namespace levo::align {

// Which optional conditions a mined sample was generated under.
enum class Regime { kText, kAudio, kBoth };
const char* regime_name(Regime r);

// One lyric sheet plus the optional conditions it may be paired with.
struct MiningPrompt {
  corpus::Lyrics lyrics;
  corpus::StyleTag style;
  std::vector<int> audio_prompt;  // mixed tokens
  Tensor prompt_features;         // mixed features the prompt was cut from
};

struct GeneratedSample {
  int group = 0;  // lyric index * 3 + regime
  int lyric_index = 0;
  Regime regime = Regime::kBoth;
  corpus::Conditions cond;
  rvq::TokenStreams streams;
  corpus::SongTracks tracks;
  std::map<std::string, double> scores;  // lyric_errors, per, style_text, style_audio, musicality
};

struct MiningConfig {
  int n_per_condition = 4;
  std::uint64_t seed = 0;
  gen::SamplerConfig sampler;
  int frames = 128;
  double musicality_noise = 0.0;
};

std::vector<GeneratedSample> mine_samples(const lelm::LeLM& model, std::span<const MiningPrompt> prompts,
                                          const corpus::Synth& synth, const rvq::MusicCodec& codec,
                                          const MiningConfig& cfg);

struct PreferencePair {
  int strategy = 0;
  int group = 0;
  int winner = 0;  // sample indices
  int loser = 0;
  double score_w = 0.0;
  double score_l = 0.0;
};

// Score comparisons treat values this close as equal, so 0.8 - 0.7 is a
// margin of exactly 0.1.
constexpr double kScoreTolerance = 1e-9;

// Acceptance predicates. Strategy 1 scores are error counts (lower wins).
bool strategy1_accepts(double err_w, double err_l, double gap);
bool strategy2_text_accepts(double w, double l);
bool strategy2_audio_accepts(double w, double l);

// Every ordered (winner, loser) index pair of `scores` accepted by `pred`.
template <typename Pred>
std::vector<std::pair<int, int>> qualifying_pairs(std::span<const double> scores, Pred pred) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j)
      if (i != j && pred(scores[i], scores[j])) out.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return out;
}

constexpr double kFullScaleErrorGap = 40.0;  // full-scale gap; desk runs use a rescaled value
constexpr double kDeskErrorGap = 2.0;

std::vector<PreferencePair> build_pairs_strategy1(std::span<const GeneratedSample> samples, double gap);
enum class StyleMode { kText, kAudio };
std::vector<PreferencePair> build_pairs_strategy2(std::span<const GeneratedSample> samples, StyleMode mode);

// Pooled statistics of decoded tracks fed to the reward model.
std::vector<float> reward_features(const corpus::Synth& synth, const corpus::SongTracks& tracks);

struct LabeledPair {
  std::vector<float> winner;
  std::vector<float> loser;
};

struct RewardConfig {
  int hidden = 16;
  int steps = 400;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

struct RewardModel {
  ParamStore params;  // rm.norm.*, rm.fc1.*, rm.fc2.*
  double train_accuracy = 0.0;
  double reward(std::span<const float> features) const;
};

RewardModel train_reward_model(std::span<const LabeledPair> pairs, const RewardConfig& cfg);

struct Threshold {
  double delta = 0.0;
  double accuracy = 0.0;
  double coverage = 0.0;  // share of held-out pairs with |gap| > delta
};

// `signed_gaps[i]` = r(labelled winner) - r(labelled loser). Smallest delta
// >= 0 whose surviving pairs agree with the labels at >= target.
Threshold tune_threshold(std::span<const double> signed_gaps, double target = 0.80);
Threshold tune_threshold(const RewardModel& rm, std::span<const LabeledPair> heldout, double target = 0.80);

std::vector<PreferencePair> build_pairs_strategy3(std::span<const double> rewards,
                                                  std::span<const GeneratedSample> samples, double delta);

// Simulated ranking: pairs of each group judged by `votes` noisy oracle calls,
// kept when at least `agree` calls pick the same winner.
std::vector<std::pair<int, int>> label_by_agreement(std::span<const GeneratedSample> samples,
                                                    std::span<const int> groups, const corpus::Synth& synth,
                                                    double noise_std, std::uint64_t seed, int votes = 5,
                                                    int agree = 4);

// Sum of log-probabilities of S_m, S_v and S_a given the conditions.
double seq_logprob(const lelm::LeLM& model, const corpus::Conditions& cond, const rvq::TokenStreams& streams,
                   bool length_normalize = false);
ad::Var seq_logprob_var(ad::Graph<float>& g, const lelm::LeLM& model, const lelm::PrefixSequence& prefix,
                        const rvq::TokenStreams& streams, bool length_normalize = false);

double dpo_loss(double logp_w, double logp_l, double ref_logp_w, double ref_logp_l, double beta);

struct DpoPair {
  corpus::Conditions cond;
  rvq::TokenStreams winner;
  rvq::TokenStreams loser;
};

struct DpoConfig {
  double beta = 0.1;
  int steps = 150;
  int batch = 4;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  bool length_normalize = false;
  AdamHyper adam;
  int threads = 1;
};

struct DpoPoint {
  int step = 0;
  double loss = 0.0;
  double margin = 0.0;    // mean beta * (delta_w - delta_l) over the batch
  double accuracy = 0.0;  // share of the batch with a positive margin
};

struct DpoResult {
  std::vector<DpoPoint> curve;
};

// Fine-tunes every parameter of `policy`; `reference` is only read.
DpoResult train_stage3_dpo(lelm::LeLM& policy, const lelm::LeLM& reference, std::span<const DpoPair> pairs,
                           const DpoConfig& cfg);

struct DpoEval {
  double mean_loss = 0.0;
  double mean_margin = 0.0;
  double accuracy = 0.0;
};
DpoEval evaluate_dpo(const lelm::LeLM& policy, const lelm::LeLM& reference, std::span<const DpoPair> pairs,
                     double beta, bool length_normalize = false);

using MergeWeights = std::vector<double>;
void validate_weights(const MergeWeights& alpha, std::size_t models);
// Elementwise sum_i alpha_i * theta_i; zero weights are skipped entirely.
ParamStore interpolate(std::span<const ParamStore* const> models, const MergeWeights& alpha);
// Same combination without the simplex constraint, accumulated in double.
ParamStore64 interpolate_unnormalized(std::span<const ParamStore* const> models, std::span<const double> alpha);

std::string pair_line(const PreferencePair& p, std::span<const GeneratedSample> samples);

}  // namespace levo::align
