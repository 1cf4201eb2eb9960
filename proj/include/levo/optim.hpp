#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "levo/tensor.hpp"

namespace levo {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  // Global-norm clipping threshold; 0 disables it.
  double grad_clip = 0.0;
};

struct AdamState {
  AdamHyper hyper;
  std::int64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// One bias-corrected Adam step over every non-frozen parameter. Frozen
// parameters are never touched, even when `grads` carries an entry for them.
void adam_step(ParamStore& params, const GradMap<float>& grads, AdamState& state, double lr);

// Transformer warmup/inverse-sqrt schedule:
// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
double noam_lr(std::int64_t step, std::int64_t d_model, std::int64_t warmup);

}  // namespace levo
