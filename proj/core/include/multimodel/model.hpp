#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "multimodel/blocks.hpp"
#include "multimodel/modality.hpp"
#include "multimodel/tape.hpp"

namespace mm {

enum class Modality { language, image, audio, categorical };

const char* modality_name(Modality m);

struct ModelConfig {
  std::size_t depth = 64;
  std::size_t heads = 8;
  std::size_t experts = 16;
  std::size_t k = 4;
  std::size_t expert_hidden = 0;  // 0 means 2 * depth
  double balance_weight = 0.01;
  double dropout = 0.4;
  std::size_t vocab = 512;
  std::size_t n_tasks = 1;
  std::size_t n_classes = 4;

  std::size_t encoder_blocks = 6;
  std::size_t encoder_moe_after = 3;
  std::size_t mixer_blocks = 2;
  std::size_t decoder_units = 4;
  std::size_t decoder_moe_after = 2;

  bool use_moe = true;
  bool use_attention = true;

  // Which non-language modality nets exist.
  bool image = false;
  bool audio = false;
  bool categorical = false;
  ImageWidths image_widths{};
  std::size_t image_channels = 3;
  std::size_t categorical_h4 = 0;  // 0 means 4 * depth
  std::size_t categorical_h5 = 0;  // 0 means 8 * depth
  std::size_t audio_stages = 8;
  bool audio_spectrogram = false;
};

struct ModelParams {
  ModelConfig config;
  std::vector<ConvBlockParams> encoder;
  MoEParams encoder_moe;
  AttentionParams mixer_attention;
  std::vector<ConvBlockParams> mixer;
  std::vector<ConvBlockParams> decoder_conv;
  std::vector<AttentionParams> decoder_attention;
  MoEParams decoder_moe;
  Tensor commands;  // [n_tasks, C]

  LanguageModalityParams language;
  std::optional<ImageEntryParams> image;
  std::optional<AudioEntryParams> audio;
  std::optional<CategoricalExitParams> categorical;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);
};

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ModelParams>
void visit(P& p, F&& f) {
  for (std::size_t i = 0; i < p.encoder.size(); ++i) visit(p.encoder[i], "encoder/block" + std::to_string(i), f);
  if (p.config.use_moe) visit(p.encoder_moe, "encoder/moe", f);
  visit(p.mixer_attention, "mixer/attention", f);
  for (std::size_t i = 0; i < p.mixer.size(); ++i) visit(p.mixer[i], "mixer/block" + std::to_string(i), f);
  for (std::size_t i = 0; i < p.decoder_conv.size(); ++i) {
    visit(p.decoder_conv[i], "decoder/unit" + std::to_string(i) + "/conv", f);
    visit(p.decoder_attention[i], "decoder/unit" + std::to_string(i) + "/attention", f);
  }
  if (p.config.use_moe) visit(p.decoder_moe, "decoder/moe", f);
  f(std::string("commands"), p.commands);
  visit(p.language, "modality/language", f);
  if (p.image) visit(*p.image, "modality/image", f);
  if (p.audio) visit(*p.audio, "modality/audio", f);
  if (p.categorical) visit(*p.categorical, "modality/categorical", f);
}

/// Names of every learned tensor in visit order.
std::vector<std::string> parameter_names(const ModelParams& p);
std::size_t parameter_count(const ModelParams& p);

/// Copy of `p` whose tensors are leaves on `tape`, in visit order.
ModelParams track(const ModelParams& p, Tape& tape);

struct TaskRoute {
  int task_id = 0;
  Modality input = Modality::language;
  Modality output = Modality::language;
  int command_id = 0;  // vocabulary id of the command token
};

/// One unpadded example. Language sides end with the termination id.
struct Example {
  int task = 0;
  std::vector<int> input_ids;
  Tensor signal;  // image [1,H,W,3], waveform [1,T,1] or spectrogram [1,T,F,1]
  std::vector<int> target_ids;
  int label = -1;
};

/// Runs the route's input modality net; `grid` receives the spatial factoring
/// of the resulting length (1 x L for language).
Tensor embed_input(const ModelParams& p, const TaskRoute& route, const Example& ex, Pair* grid = nullptr);

struct BodyOutput {
  Tensor output;
  Tensor aux_cost;    // scalar
  Tensor importance;  // [E], undefined without MoE
};

/// Six same-padded conv blocks with a residual MoE layer in the middle.
BodyOutput encode(const ModelParams& p, const Tensor& inputs, bool train, const RngStream& rng);
/// Residual attention from the shifted outputs into the encoding, then two
/// left-padded conv blocks.
Tensor mix(const ModelParams& p, const Tensor& encoded, const Tensor& outputs_shifted, bool train,
           const RngStream& rng);
/// Decoder units of (left-padded conv block, residual attention into the
/// encoding), with a residual MoE layer in the middle.
BodyOutput decode_body(const ModelParams& p, const Tensor& encoded, const Tensor& mixed, bool train,
                       const RngStream& rng);

/// Decoder input for a language target: the command embedding followed by the
/// embeddings of `prefix` (the target shifted right by one).
Tensor shifted_targets(const ModelParams& p, const TaskRoute& route, std::span<const int> prefix);
/// Decoder input for a categorical target: the encoding plus the command embedding.
Tensor categorical_targets(const ModelParams& p, const TaskRoute& route, const Tensor& encoded);

struct ExampleForward {
  Tensor logits;      // [1, Lo, V] or [1, n_classes]
  Tensor nll;         // scalar sum over scored positions
  std::size_t scored = 0;
  std::vector<Tensor> importance;  // one [E] per MoE layer
  std::vector<Tensor> aux;         // this example's own balance costs
};

/// Full teacher-forced pass over one example.
ExampleForward forward_example(const ModelParams& p, const TaskRoute& route, const Example& ex, bool train,
                               const RngStream& rng);

struct TeacherForced {
  std::vector<Tensor> probabilities;  // per example
  Tensor nll;                         // mean over scored tokens
  Tensor aux;                         // balance costs over the batch importance
  Tensor loss;                        // nll + aux
  std::size_t scored = 0;
};

/// Batch teacher forcing. Examples are processed unpadded; MoE importance is
/// summed over the whole batch before the balance cost is taken.
TeacherForced forward_teacher_forced(const ModelParams& p, const TaskRoute& route, std::span<const Example> batch,
                                     bool train, const RngStream& rng);

/// Greedy decoding. Language routes stop after the termination id or
/// max_len symbols; categorical routes emit one class.
std::vector<int> generate(const ModelParams& p, const TaskRoute& route, const Example& ex, std::size_t max_len);

/// Rng stream for example `slot` of a training step.
RngStream example_stream(std::uint64_t seed, std::uint64_t step, std::size_t slot);

}  // namespace mm
