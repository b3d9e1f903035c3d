#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "multimodel/blocks.hpp"

// Modality nets: conversions between external data and the [B, L, C] body
// representation.
namespace mm {

struct LanguageModalityParams {
  Tensor embedding;  // W_E [V, C]
  Tensor softmax;    // W_S [C, V]
  int pad_id = 0;
  int term_id = 1;

  std::size_t vocab() const { return embedding.dim(0); }
  std::size_t depth() const { return embedding.dim(1); }
  /// Embeddings are Glorot; the output projection starts at zero so the
  /// untrained predictive distribution is uniform.
  static LanguageModalityParams init(std::size_t vocab, std::size_t depth, const RngStream& rng);
};

/// [B, L] ids -> [B, L, C].
Tensor language_in(const LanguageModalityParams& p, std::span<const int> ids, std::size_t batch);
/// body [B, L, C] -> unnormalized scores [B, L, V].
Tensor language_logits(const LanguageModalityParams& p, const Tensor& body);
/// body [B, L, C] -> probabilities [B, L, V].
Tensor language_out(const LanguageModalityParams& p, const Tensor& body);

/// Two 3x3 conv steps, 3x3 max pool with the given stride, plus a strided 1x1
/// conv step on the input.
struct ConvResParams {
  ConvStepParams c1;
  ConvStepParams c2;
  ConvStepParams skip;
  Pair stride{2, 2};

  std::size_t out_depth() const { return c2.out_depth(); }
  static ConvResParams init(std::size_t in_depth, std::size_t filters, Pair stride, const RngStream& rng);
};

/// [B, H, W, C] -> [B, ceil(H/sh), ceil(W/sw), F].
Tensor conv_res(const ConvResParams& p, const Tensor& x);

struct ImageWidths {
  std::size_t h1 = 32;
  std::size_t h2 = 64;
  std::size_t r1 = 128;
  std::size_t r2 = 256;
};

struct ImageEntryParams {
  ConvStepParams h1;  // stride 2
  ConvStepParams h2;
  std::array<ConvResParams, 3> res;

  std::size_t depth() const { return res[2].out_depth(); }
  static ImageEntryParams init(std::size_t channels, std::size_t depth, const ImageWidths& widths,
                               const RngStream& rng);
};

/// Spatial extent after image_in: one factor 2 from h1 and three from the pools.
inline std::size_t image_reduced(std::size_t n) {
  for (int i = 0; i < 4; ++i) n = (n + 1) / 2;
  return n;
}

/// [B, H, W, channels] -> [B, ceil(H/16) * ceil(W/16), d].
Tensor image_in(const ImageEntryParams& p, const Tensor& image);

struct CategoricalExitParams {
  ConvStepParams skip;  // 3x3, stride 2
  ConvStepParams h1;
  ConvStepParams h2;
  ConvStepParams h4;
  ConvStepParams h5;
  Tensor classes;  // [h5 width, n_classes]

  std::size_t n_classes() const { return classes.dim(1); }
  /// h4/h5 widths default to 4C and 8C. The class projection starts at zero.
  static CategoricalExitParams init(std::size_t depth, std::size_t n_classes, std::size_t h4_width,
                                    std::size_t h5_width, const RngStream& rng);
};

/// body [B, L, C] with L == hint.h * hint.w -> class scores [B, n_classes].
Tensor categorical_logits(const CategoricalExitParams& p, const Tensor& body, Pair hint);
Tensor categorical_out(const CategoricalExitParams& p, const Tensor& body, Pair hint);

struct AudioEntryParams {
  std::vector<ConvResParams> stages;
  bool spectrogram = false;

  std::size_t depth() const { return stages.back().out_depth(); }
  /// Stage i (1-based) has depth min(2^i, cap). Every stage strides time by 2;
  /// the frequency axis is never strided.
  static AudioEntryParams init(std::size_t cap, bool spectrogram, std::size_t n_stages, const RngStream& rng);
};

/// Waveform [B, T, 1] or spectrogram [B, T, F, 1] -> [B, L, depth]. The
/// reduced (time, frequency) extent is written to `grid` when given.
Tensor audio_in(const AudioEntryParams& p, const Tensor& audio, Pair* grid = nullptr);

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, LanguageModalityParams>
void visit(P& p, const std::string& prefix, F&& f) {
  f(prefix + "/embedding", p.embedding);
  f(prefix + "/softmax", p.softmax);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ConvResParams>
void visit(P& p, const std::string& prefix, F&& f) {
  visit(p.c1, prefix + "/c1", f);
  visit(p.c2, prefix + "/c2", f);
  visit(p.skip, prefix + "/skip", f);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ImageEntryParams>
void visit(P& p, const std::string& prefix, F&& f) {
  visit(p.h1, prefix + "/h1", f);
  visit(p.h2, prefix + "/h2", f);
  for (std::size_t i = 0; i < p.res.size(); ++i) visit(p.res[i], prefix + "/res" + std::to_string(i), f);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, CategoricalExitParams>
void visit(P& p, const std::string& prefix, F&& f) {
  visit(p.skip, prefix + "/skip", f);
  visit(p.h1, prefix + "/h1", f);
  visit(p.h2, prefix + "/h2", f);
  visit(p.h4, prefix + "/h4", f);
  visit(p.h5, prefix + "/h5", f);
  f(prefix + "/classes", p.classes);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, AudioEntryParams>
void visit(P& p, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < p.stages.size(); ++i) visit(p.stages[i], prefix + "/stage" + std::to_string(i), f);
}

}  // namespace mm
