#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "levo/corpus.hpp"
#include "levo/lelm.hpp"
#include "levo/rng.hpp"
#include "levo/rvq.hpp"

namespace levo::gen {

struct SamplerConfig {
  int top_k = 50;
  double temperature = 0.9;
};

// 8 for small desk vocabularies, 50 once the vocabulary reaches 512.
int default_top_k(int vocab);

// Keeps the k largest logits (ties to the lowest index), rescales by
// 1/temperature and samples from the renormalized survivors.
int top_k_sample(std::span<const float> logits, const SamplerConfig& cfg, Rng& rng);

struct GenerateConfig {
  int frames = 128;  // requested length; EOS may end it earlier
  SamplerConfig sampler;
  std::uint64_t seed = 0;
  bool use_cache = true;
  bool mixed_only = false;  // skip the AR decoder entirely
  bool drop_style = false;
  bool drop_audio = false;
};

// One decoder read of an LM hidden state.
struct Access {
  int step = 0;            // dual-track step t
  int hidden_index = 0;    // mixed position read
  int decoded_mixed = 0;   // mixed tokens available at that moment
};

struct GenerateResult {
  rvq::TokenStreams streams;
  bool hit_eos = false;
  std::vector<Access> access_log;
};

GenerateResult generate(const lelm::LeLM& model, const corpus::Conditions& cond, const GenerateConfig& cfg);

}  // namespace levo::gen
