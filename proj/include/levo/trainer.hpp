#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "levo/corpus.hpp"
#include "levo/lelm.hpp"
#include "levo/optim.hpp"
#include "levo/rvq.hpp"

namespace levo::train {

// One training song: its conditions and its three token streams.
struct Example {
  corpus::Conditions cond;
  rvq::TokenStreams streams;
};

// Tokenizes every song and attaches audio-prompt tokens cut from the mixed
// stream of the referenced song.
std::vector<Example> make_examples(const std::vector<corpus::SongRecord>& songs, const rvq::MusicCodec& codec,
                                   int prompt_frames);

enum class Stage { kPretrain, kExtension, kJoint };
const char* stage_name(Stage s);

struct StageConfig {
  Stage stage = Stage::kPretrain;
  int steps = 2000;
  int batch = 4;
  int warmup = 200;
  double lr_scale = 1.0;
  std::uint64_t seed = 0;
  double dropout = 0.5;  // per optional condition, per sample per epoch
  AdamHyper adam;
  int threads = 1;
  void validate() const;
};

struct LossPoint {
  int step = 0;
  std::string stage;
  double loss = 0.0;
  double lr = 0.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<LossPoint> curve;
};

using StepCallback = std::function<void(const LossPoint&)>;

// Stage 1: mixed-token LM only; dec.* and heads.* stay frozen.
TrainResult train_stage1(lelm::LeLM& model, std::span<const Example> data, const StageConfig& cfg,
                         const StepCallback& on_step = {});
// Stage 2: dual-track decoder only; lm.* stays frozen.
TrainResult train_stage2(lelm::LeLM& model, std::span<const Example> data, const StageConfig& cfg,
                         const StepCallback& on_step = {});
// Ablation: every parameter against mixed + dual-track loss.
TrainResult train_joint(lelm::LeLM& model, std::span<const Example> data, const StageConfig& cfg,
                        const StepCallback& on_step = {});

// Prefix used for a training sample, with the dropout decision applied.
lelm::PrefixSequence training_prefix(const lelm::LeLMConfig& c, const Example& ex, const StageConfig& cfg, int epoch,
                                     int index);

struct DualAccuracy {
  double vocal = 0.0;
  double accompaniment = 0.0;
};

// Teacher-forced next-token accuracy of the dual-track heads, full conditions.
DualAccuracy dual_accuracy(const lelm::LeLM& model, std::span<const Example> data);
// Teacher-forced mixed-token cross-entropy, full conditions.
double mixed_cross_entropy(const lelm::LeLM& model, std::span<const Example> data);

std::string metrics_line(const LossPoint& p);

}  // namespace levo::train
