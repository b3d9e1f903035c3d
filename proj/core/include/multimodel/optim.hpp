#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "multimodel/model.hpp"
#include "multimodel/tape.hpp"

namespace mm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

/// First and second moments per parameter, in the order the parameters are
/// passed to adam_step.
struct OptState {
  AdamConfig config;
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

OptState make_opt_state(const AdamConfig& config, std::span<const Tensor> params);

/// Global L2 norm over every gradient.
double global_norm(std::span<const std::vector<double>> grads);

/// Scales all gradients by min(1, clip / norm). Returns the pre-clip norm.
double clip_by_global_norm(std::vector<std::vector<double>>& grads, double clip);

struct StepInfo {
  double grad_norm = 0.0;  // before clipping
  double scale = 1.0;      // applied clip factor
};

/// Clip, then one bias-corrected Adam update. Throws NumericError on a
/// non-finite gradient; parameters and state are left untouched then.
StepInfo adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, OptState& state);

/// Model parameters in visit order, and the inverse.
std::vector<Tensor> flatten(const ModelParams& p);
void unflatten(ModelParams& p, std::span<const Tensor> values);

}  // namespace mm
