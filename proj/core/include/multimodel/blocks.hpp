#pragma once

#include <array>
#include <concepts>
#include <cstddef>
#include <string>
#include <type_traits>

#include "multimodel/ops.hpp"
#include "multimodel/rng.hpp"
#include "multimodel/tensor.hpp"

namespace mm {

inline constexpr double kLayerNormEps = 1e-6;

/// ReLU -> separable convolution -> layer norm.
struct ConvStepParams {
  Tensor depthwise;  // [h, w, Cin]
  Tensor pointwise;  // [Cin, f]
  Tensor gain;       // [f]
  Tensor bias;       // [f]
  Pair stride{1, 1};
  Pair dilation{1, 1};
  double eps = kLayerNormEps;

  std::size_t in_depth() const { return depthwise.dim(2); }
  std::size_t out_depth() const { return pointwise.dim(1); }

  static ConvStepParams init(Pair kernel, std::size_t in_depth, std::size_t filters, Pair stride, Pair dilation,
                             const RngStream& rng);
};

/// Four conv steps (3x1, 3x1, 15x1, 15x1 dilated by 8) with residual adds
/// after the second and fourth, then dropout.
struct ConvBlockParams {
  std::array<ConvStepParams, 4> steps;
  double dropout = 0.4;

  std::size_t depth() const { return steps[0].in_depth(); }
  static ConvBlockParams init(std::size_t depth, double dropout, const RngStream& rng);
};

struct AttentionParams {
  std::array<ConvBlockParams, 2> mixing;
  Tensor query;  // [C, C]
  Tensor key;    // [C, C]
  Tensor value;  // [C, C]
  std::size_t heads = 8;

  std::size_t depth() const { return query.dim(0); }
  static AttentionParams init(std::size_t depth, std::size_t heads, double dropout, const RngStream& rng);
};

/// Sparsely-gated mixture of feed-forward experts (C -> hidden -> C).
struct MoEParams {
  Tensor gate;   // [C, E]
  Tensor noise;  // [C, E]
  Tensor w1;     // [E, C, H]
  Tensor b1;     // [E, H]
  Tensor w2;     // [E, H, C]
  Tensor b2;     // [E, C]
  std::size_t k = 4;
  double balance_weight = 0.01;

  std::size_t experts() const { return gate.dim(1); }
  std::size_t depth() const { return gate.dim(0); }
  std::size_t hidden() const { return w1.dim(2); }
  static MoEParams init(std::size_t depth, std::size_t hidden, std::size_t experts, std::size_t k,
                        double balance_weight, const RngStream& rng);
};

Tensor conv_step(const ConvStepParams& p, const Tensor& x, Padding padding);
Tensor conv_block(const ConvBlockParams& p, const Tensor& x, Padding padding, bool train, const RngStream& rng);

/// [length, depth] with [t, 2i] = sin(t * 1e4^(-2i/depth)) and [t, 2i+1] the cosine.
Tensor timing_signal(std::size_t length, std::size_t depth);

/// Scaled dot-product attention over `heads` channel groups. q is [B,Lt,C],
/// k and v are [B,Ls,C]; the result is [B,Lt,C].
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);
/// The attention probabilities [B, heads, Lt, Ls] used by multihead_attention.
Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t heads);

/// Target gets the timing signal and two left-padded conv blocks; it then
/// queries keys and values projected from the source.
Tensor attention_block(const AttentionParams& p, const Tensor& source, const Tensor& target, bool train,
                       const RngStream& rng);
/// The target-mixing half of attention_block alone.
Tensor attention_target_mix(const AttentionParams& p, const Tensor& target, bool train, const RngStream& rng);

/// Softmax restricted to the k largest entries of each row; all others are
/// exactly zero. Ties go to the lower index.
Tensor topk_softmax(const Tensor& logits, std::size_t k);

struct GateOutput {
  Tensor weights;     // [..., E]
  Tensor importance;  // [E]
};

/// Noisy top-k gating. Noise (standard normal scaled by softplus(x W_noise))
/// is only added when training.
GateOutput moe_gate(const MoEParams& p, const Tensor& x, bool train, const RngStream& rng);

/// Weighted sum of expert outputs. x is [N,C], weights [N,E]; experts with a
/// zero weight for a row are not evaluated for it.
Tensor moe_experts(const Tensor& x, const Tensor& weights, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                   const Tensor& b2);

/// Squared coefficient of variation (population std / mean)^2 of a vector.
Tensor cv_squared(const Tensor& v);

struct MoEOutput {
  Tensor output;        // same shape as the input
  Tensor importance;    // [E]
  Tensor balance_cost;  // scalar
};

MoEOutput moe_layer(const MoEParams& p, const Tensor& x, bool train, const RngStream& rng);

// Parameter enumeration. `f(name, tensor)` is called for every learned tensor
// in a fixed order; the names are stable checkpoint keys.
template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ConvStepParams>
void visit(P& p, const std::string& prefix, F&& f) {
  f(prefix + "/depthwise", p.depthwise);
  f(prefix + "/pointwise", p.pointwise);
  f(prefix + "/gain", p.gain);
  f(prefix + "/bias", p.bias);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ConvBlockParams>
void visit(P& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.steps.size(); ++i) visit(p.steps[i], prefix + "/step" + std::to_string(i), f);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, AttentionParams>
void visit(P& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.mixing.size(); ++i) visit(p.mixing[i], prefix + "/mix" + std::to_string(i), f);
  f(prefix + "/query", p.query);
  f(prefix + "/key", p.key);
  f(prefix + "/value", p.value);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, MoEParams>
void visit(P& p, const std::string& prefix, F&& f) {
  f(prefix + "/gate", p.gate);
  f(prefix + "/noise", p.noise);
  f(prefix + "/w1", p.w1);
  f(prefix + "/b1", p.b1);
  f(prefix + "/w2", p.w2);
  f(prefix + "/b2", p.b2);
}

/// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, const RngStream& rng);

}  // namespace mm
