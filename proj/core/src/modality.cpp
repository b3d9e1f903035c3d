#include "multimodel/modality.hpp"

#include <algorithm>

namespace mm {

LanguageModalityParams LanguageModalityParams::init(std::size_t vocab, std::size_t depth, const RngStream& rng) {
  if (vocab < 3) throw std::invalid_argument("language modality needs at least the reserved ids");
  LanguageModalityParams p;
  p.embedding = glorot({vocab, depth}, 1, depth, rng.fork("embedding"));
  p.softmax = Tensor::zeros({depth, vocab});
  return p;
}

Tensor language_in(const LanguageModalityParams& p, std::span<const int> ids, std::size_t batch) {
  if (batch == 0 || ids.size() % batch != 0) throw ShapeError("language_in: ids do not split into the batch");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= p.vocab())
      throw std::out_of_range("language_in: token id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(p.vocab()));
  return embedding_lookup(p.embedding, ids, {batch, ids.size() / batch});
}

Tensor language_logits(const LanguageModalityParams& p, const Tensor& body) { return pointwise_conv(body, p.softmax); }

Tensor language_out(const LanguageModalityParams& p, const Tensor& body) { return softmax(language_logits(p, body)); }

ConvResParams ConvResParams::init(std::size_t in_depth, std::size_t filters, Pair stride, const RngStream& rng) {
  ConvResParams p;
  p.c1 = ConvStepParams::init({3, 3}, in_depth, filters, {1, 1}, {1, 1}, rng.fork("c1"));
  p.c2 = ConvStepParams::init({3, 3}, filters, filters, {1, 1}, {1, 1}, rng.fork("c2"));
  p.skip = ConvStepParams::init({1, 1}, in_depth, filters, stride, {1, 1}, rng.fork("skip"));
  p.stride = stride;
  return p;
}

Tensor conv_res(const ConvResParams& p, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("conv_res: expected [B,H,W,C], got " + shape_str(x.shape()));
  Tensor c1 = conv_step(p.c1, x, Padding::same);
  Tensor c2 = conv_step(p.c2, c1, Padding::same);
  Tensor p1 = max_pool(c2, {3, 3}, p.stride);
  return add(p1, conv_step(p.skip, x, Padding::same));
}

ImageEntryParams ImageEntryParams::init(std::size_t channels, std::size_t depth, const ImageWidths& w,
                                        const RngStream& rng) {
  if (!(w.h2 < w.r1 && w.r1 < w.r2)) throw std::invalid_argument("image entry stage depths must increase");
  ImageEntryParams p;
  p.h1 = ConvStepParams::init({3, 3}, channels, w.h1, {2, 2}, {1, 1}, rng.fork("h1"));
  p.h2 = ConvStepParams::init({3, 3}, w.h1, w.h2, {1, 1}, {1, 1}, rng.fork("h2"));
  p.res[0] = ConvResParams::init(w.h2, w.r1, {2, 2}, rng.fork("res0"));
  p.res[1] = ConvResParams::init(w.r1, w.r2, {2, 2}, rng.fork("res1"));
  p.res[2] = ConvResParams::init(w.r2, depth, {2, 2}, rng.fork("res2"));
  return p;
}

Tensor image_in(const ImageEntryParams& p, const Tensor& image) {
  if (image.rank() != 4 || image.dim(3) != p.h1.in_depth())
    throw ShapeError("image_in: expected [B,H,W," + std::to_string(p.h1.in_depth()) + "], got " +
                     shape_str(image.shape()));
  if (image.dim(1) < 16 || image.dim(2) < 16) throw ShapeError("image_in: images must be at least 16x16");
  Tensor x = conv_step(p.h2, conv_step(p.h1, image, Padding::same), Padding::same);
  for (const auto& r : p.res) x = conv_res(r, x);
  return reshape(x, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
}

CategoricalExitParams CategoricalExitParams::init(std::size_t depth, std::size_t n_classes, std::size_t h4_width,
                                                  std::size_t h5_width, const RngStream& rng) {
  if (n_classes < 2) throw std::invalid_argument("categorical exit needs at least two classes");
  CategoricalExitParams p;
  p.skip = ConvStepParams::init({3, 3}, depth, depth, {2, 2}, {1, 1}, rng.fork("skip"));
  p.h1 = ConvStepParams::init({3, 3}, depth, depth, {1, 1}, {1, 1}, rng.fork("h1"));
  p.h2 = ConvStepParams::init({3, 3}, depth, depth, {1, 1}, {1, 1}, rng.fork("h2"));
  p.h4 = ConvStepParams::init({3, 3}, depth, h4_width, {1, 1}, {1, 1}, rng.fork("h4"));
  p.h5 = ConvStepParams::init({3, 3}, h4_width, h5_width, {1, 1}, {1, 1}, rng.fork("h5"));
  p.classes = Tensor::zeros({h5_width, n_classes});
  return p;
}

Tensor categorical_logits(const CategoricalExitParams& p, const Tensor& body, Pair hint) {
  if (body.rank() != 3 || body.dim(1) != hint.h * hint.w)
    throw ShapeError("categorical_out: length of " + shape_str(body.shape()) + " does not factor as " +
                     std::to_string(hint.h) + "x" + std::to_string(hint.w));
  Tensor x = reshape(body, {body.dim(0), hint.h, hint.w, body.dim(2)});
  Tensor h2 = conv_step(p.h2, conv_step(p.h1, x, Padding::same), Padding::same);
  Tensor h3 = add(conv_step(p.skip, x, Padding::same), max_pool(h2, {3, 3}, {2, 2}));
  Tensor h5 = conv_step(p.h5, conv_step(p.h4, h3, Padding::same), Padding::same);
  return matmul(global_avg_pool(relu(h5)), p.classes);
}

Tensor categorical_out(const CategoricalExitParams& p, const Tensor& body, Pair hint) {
  return softmax(categorical_logits(p, body, hint));
}

AudioEntryParams AudioEntryParams::init(std::size_t cap, bool spectrogram, std::size_t n_stages,
                                        const RngStream& rng) {
  if (n_stages == 0) throw std::invalid_argument("audio entry needs at least one stage");
  AudioEntryParams p;
  p.spectrogram = spectrogram;
  std::size_t in = 1;
  for (std::size_t i = 1; i <= n_stages; ++i) {
    const std::size_t depth = std::min<std::size_t>(std::size_t{1} << std::min<std::size_t>(i, 62), cap);
    p.stages.push_back(ConvResParams::init(in, depth, {2, 1}, rng.fork(i)));
    in = depth;
  }
  return p;
}

Tensor audio_in(const AudioEntryParams& p, const Tensor& audio, Pair* grid) {
  Tensor x;
  if (p.spectrogram) {
    if (audio.rank() != 4 || audio.dim(3) != 1) throw ShapeError("audio_in: spectrogram must be [B,T,F,1]");
    x = audio;
  } else {
    if (audio.rank() != 3 || audio.dim(2) != 1) throw ShapeError("audio_in: waveform must be [B,T,1]");
    x = reshape(audio, {audio.dim(0), audio.dim(1), 1, 1});
  }
  for (const auto& s : p.stages) x = conv_res(s, x);
  if (grid) *grid = {x.dim(1), x.dim(2)};
  return reshape(x, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
}

}  // namespace mm
