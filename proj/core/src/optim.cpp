#include "multimodel/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mm {

OptState make_opt_state(const AdamConfig& config, std::span<const Tensor> params) {
  OptState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

double global_norm(std::span<const std::vector<double>> grads) {
  double ss = 0.0;
  for (const auto& g : grads)
    for (double x : g) ss += x * x;
  return std::sqrt(ss);
}

double clip_by_global_norm(std::vector<std::vector<double>>& grads, double clip) {
  const double norm = global_norm(grads);
  if (clip > 0.0 && norm > clip) {
    const double s = clip / norm;
    for (auto& g : grads)
      for (double& x : g) x *= s;
  }
  return norm;
}

StepInfo adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, OptState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  std::vector<std::vector<double>> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape())
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has shape " + shape_str(grads[i].shape()) +
                       ", parameter has " + shape_str(params[i].shape()));
    g[i].assign(grads[i].values().begin(), grads[i].values().end());
    check_finite(g[i], ("gradient " + std::to_string(i)).c_str());
  }
  StepInfo info;
  info.grad_norm = clip_by_global_norm(g, state.config.clip_norm);
  if (state.config.clip_norm > 0.0 && info.grad_norm > state.config.clip_norm)
    info.scale = state.config.clip_norm / info.grad_norm;

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t), bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    std::vector<double> w(params[i].values().begin(), params[i].values().end());
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[i][j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[i][j] * g[i][j];
      w[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
    params[i] = Tensor(params[i].shape(), std::move(w));
  }
  return info;
}

std::vector<Tensor> flatten(const ModelParams& p) {
  std::vector<Tensor> out;
  visit(p, [&](const std::string&, const Tensor& t) { out.push_back(t.detach()); });
  return out;
}

void unflatten(ModelParams& p, std::span<const Tensor> values) {
  std::size_t i = 0;
  visit(p, [&](const std::string& name, Tensor& t) {
    if (i >= values.size()) throw std::invalid_argument("unflatten: too few tensors");
    if (values[i].shape() != t.shape()) throw ShapeError("unflatten: shape mismatch for " + name);
    t = values[i++];
  });
  if (i != values.size()) throw std::invalid_argument("unflatten: too many tensors");
}

}  // namespace mm
