#include "levo/optim.hpp"

#include <cmath>

namespace levo {

void adam_step(ParamStore& params, const GradMap<float>& grads, AdamState& state, double lr) {
  check(lr > 0.0, ErrorCode::kInvalidArgument, "adam_step: lr must be positive");
  for (const auto& [name, g] : grads) {
    const auto& p = params.at(name);
    check(p.shape == g.shape, ErrorCode::kShapeMismatch,
          "adam_step: gradient shape " + shape_str(g.shape) + " does not match " + name + " " + shape_str(p.shape));
    for (float x : g.data)
      check(std::isfinite(x), ErrorCode::kNonFinite, "adam_step: non-finite gradient for " + name);
  }

  double clip_scale = 1.0;
  if (state.hyper.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      if (!params.is_frozen(name))
        for (float x : g.data) sq += static_cast<double>(x) * x;
    const double norm = std::sqrt(sq);
    if (norm > state.hyper.grad_clip) clip_scale = state.hyper.grad_clip / norm;
  }

  state.step += 1;
  const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    if (params.is_frozen(name)) continue;
    auto& p = params.at(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.shape != p.shape) m = Tensor(p.shape);
    if (v.shape != p.shape) v = Tensor(p.shape);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = static_cast<double>(g.data[i]) * clip_scale;
      const double mi = b1 * m.data[i] + (1.0 - b1) * gi;
      const double vi = b2 * v.data[i] + (1.0 - b2) * gi * gi;
      m.data[i] = static_cast<float>(mi);
      v.data[i] = static_cast<float>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + state.hyper.eps);
      p.data[i] = static_cast<float>(p.data[i] - update);
    }
  }
}

double noam_lr(std::int64_t step, std::int64_t d_model, std::int64_t warmup) {
  check(step >= 1, ErrorCode::kInvalidArgument, "noam_lr: step must be >= 1");
  check(warmup >= 1 && d_model >= 1, ErrorCode::kInvalidArgument, "noam_lr: warmup and d_model must be >= 1");
  const double s = static_cast<double>(step);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

}  // namespace levo
