#include "multimodel/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace mm {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::language: return "language";
    case Modality::image: return "image";
    case Modality::audio: return "audio";
    case Modality::categorical: return "categorical";
  }
  return "?";
}

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
  if (c.depth == 0 || c.depth % 2 != 0) throw std::invalid_argument("model depth must be positive and even");
  if (c.n_tasks == 0) throw std::invalid_argument("model needs at least one task");
  if (c.encoder_moe_after > c.encoder_blocks || c.decoder_moe_after > c.decoder_units)
    throw std::invalid_argument("MoE position lies outside its stack");
  const RngStream root(seed);
  const std::size_t hidden = c.expert_hidden ? c.expert_hidden : 2 * c.depth;
  ModelParams p;
  p.config = c;
  for (std::size_t i = 0; i < c.encoder_blocks; ++i)
    p.encoder.push_back(ConvBlockParams::init(c.depth, c.dropout, root.fork("encoder/block" + std::to_string(i))));
  p.encoder_moe = MoEParams::init(c.depth, hidden, c.experts, c.k, c.balance_weight, root.fork("encoder/moe"));
  p.mixer_attention = AttentionParams::init(c.depth, c.heads, c.dropout, root.fork("mixer/attention"));
  for (std::size_t i = 0; i < c.mixer_blocks; ++i)
    p.mixer.push_back(ConvBlockParams::init(c.depth, c.dropout, root.fork("mixer/block" + std::to_string(i))));
  for (std::size_t i = 0; i < c.decoder_units; ++i) {
    const std::string unit = "decoder/unit" + std::to_string(i);
    p.decoder_conv.push_back(ConvBlockParams::init(c.depth, c.dropout, root.fork(unit + "/conv")));
    p.decoder_attention.push_back(AttentionParams::init(c.depth, c.heads, c.dropout, root.fork(unit + "/attention")));
  }
  p.decoder_moe = MoEParams::init(c.depth, hidden, c.experts, c.k, c.balance_weight, root.fork("decoder/moe"));
  p.commands = glorot({c.n_tasks, c.depth}, 1, c.depth, root.fork("commands"));
  p.language = LanguageModalityParams::init(c.vocab, c.depth, root.fork("modality/language"));
  if (c.image) p.image = ImageEntryParams::init(c.image_channels, c.depth, c.image_widths, root.fork("modality/image"));
  if (c.audio) p.audio = AudioEntryParams::init(c.depth, c.audio_spectrogram, c.audio_stages, root.fork("modality/audio"));
  if (c.categorical)
    p.categorical = CategoricalExitParams::init(c.depth, c.n_classes, c.categorical_h4 ? c.categorical_h4 : 4 * c.depth,
                                                c.categorical_h5 ? c.categorical_h5 : 8 * c.depth,
                                                root.fork("modality/categorical"));
  if (p.audio && p.audio->depth() != c.depth)
    throw std::invalid_argument("audio entry depth " + std::to_string(p.audio->depth()) + " differs from model depth");
  return p;
}

std::vector<std::string> parameter_names(const ModelParams& p) {
  std::vector<std::string> names;
  visit(p, [&](const std::string& name, const Tensor&) { names.push_back(name); });
  return names;
}

std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  visit(p, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams track(const ModelParams& p, Tape& tape) {
  ModelParams out = p;
  visit(out, [&](const std::string& name, Tensor& t) { t = tape.leaf(t, name); });
  return out;
}

Tensor embed_input(const ModelParams& p, const TaskRoute& route, const Example& ex, Pair* grid) {
  Tensor x;
  Pair g{1, 1};
  switch (route.input) {
    case Modality::language:
      if (ex.input_ids.empty()) throw std::invalid_argument("language route but the example has no input ids");
      x = language_in(p.language, ex.input_ids, 1);
      g = {1, ex.input_ids.size()};
      break;
    case Modality::image:
      if (!p.image) throw std::invalid_argument("model has no image modality");
      if (!ex.signal.defined()) throw std::invalid_argument("image route but the example has no image");
      x = image_in(*p.image, ex.signal);
      g = {image_reduced(ex.signal.dim(1)), image_reduced(ex.signal.dim(2))};
      break;
    case Modality::audio:
      if (!p.audio) throw std::invalid_argument("model has no audio modality");
      if (!ex.signal.defined()) throw std::invalid_argument("audio route but the example has no signal");
      x = audio_in(*p.audio, ex.signal, &g);
      break;
    case Modality::categorical: throw std::invalid_argument("categorical is an output-only modality");
  }
  if (grid) *grid = g;
  return x;
}

namespace {

Tensor zero_cost() { return Tensor::scalar(0.0); }

Tensor residual_attention(const ModelParams& p, const AttentionParams& a, const Tensor& source, const Tensor& state,
                          bool train, const RngStream& rng) {
  if (p.config.use_attention) return add(state, attention_block(a, source, state, train, rng));
  return add(state, attention_target_mix(a, state, train, rng));
}

}  // namespace

BodyOutput encode(const ModelParams& p, const Tensor& inputs, bool train, const RngStream& rng) {
  BodyOutput out{inputs, zero_cost(), {}};
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    out.output = conv_block(p.encoder[i], out.output, Padding::same, train, rng.fork(i));
    if (p.config.use_moe && i + 1 == p.config.encoder_moe_after) {
      MoEOutput m = moe_layer(p.encoder_moe, out.output, train, rng.fork("moe"));
      out.output = add(out.output, m.output);
      out.aux_cost = m.balance_cost;
      out.importance = m.importance;
    }
  }
  return out;
}

Tensor mix(const ModelParams& p, const Tensor& encoded, const Tensor& outputs_shifted, bool train,
           const RngStream& rng) {
  Tensor x = residual_attention(p, p.mixer_attention, encoded, outputs_shifted, train, rng.fork("attention"));
  for (std::size_t i = 0; i < p.mixer.size(); ++i) x = conv_block(p.mixer[i], x, Padding::left, train, rng.fork(i));
  return x;
}

BodyOutput decode_body(const ModelParams& p, const Tensor& encoded, const Tensor& mixed, bool train,
                       const RngStream& rng) {
  BodyOutput out{mixed, zero_cost(), {}};
  for (std::size_t i = 0; i < p.decoder_conv.size(); ++i) {
    const RngStream unit = rng.fork(i);
    out.output = conv_block(p.decoder_conv[i], out.output, Padding::left, train, unit.fork("conv"));
    out.output = residual_attention(p, p.decoder_attention[i], encoded, out.output, train, unit.fork("attention"));
    if (p.config.use_moe && i + 1 == p.config.decoder_moe_after) {
      MoEOutput m = moe_layer(p.decoder_moe, out.output, train, rng.fork("moe"));
      out.output = add(out.output, m.output);
      out.aux_cost = m.balance_cost;
      out.importance = m.importance;
    }
  }
  return out;
}

namespace {

Tensor command_row(const ModelParams& p, const TaskRoute& route) {
  if (route.task_id < 0 || static_cast<std::size_t>(route.task_id) >= p.config.n_tasks)
    throw std::out_of_range("task id " + std::to_string(route.task_id) + " has no command embedding");
  const auto t = static_cast<std::size_t>(route.task_id);
  return slice(p.commands, 0, t, t + 1);
}

}  // namespace

Tensor shifted_targets(const ModelParams& p, const TaskRoute& route, std::span<const int> prefix) {
  Tensor cmd = reshape(command_row(p, route), {1, 1, p.config.depth});
  if (prefix.empty()) return cmd;
  std::vector<Tensor> parts{cmd, language_in(p.language, prefix, 1)};
  return concat(parts, 1);
}

Tensor categorical_targets(const ModelParams& p, const TaskRoute& route, const Tensor& encoded) {
  return add(encoded, reshape(command_row(p, route), {p.config.depth}));
}

namespace {

void check_route(const ModelParams& p, const TaskRoute& route, const Example& ex) {
  if (ex.task != route.task_id)
    throw std::invalid_argument("example of task " + std::to_string(ex.task) + " sent down the route of task " +
                                std::to_string(route.task_id));
  if (route.output == Modality::language) {
    if (ex.target_ids.empty()) throw std::invalid_argument("language output route but the example has no target");
  } else if (route.output == Modality::categorical) {
    if (!p.categorical) throw std::invalid_argument("model has no categorical modality");
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= p.categorical->n_classes())
      throw std::invalid_argument("label " + std::to_string(ex.label) + " outside the class range");
  } else {
    throw std::invalid_argument(std::string("unsupported output modality ") + modality_name(route.output));
  }
}

struct Decoded {
  Tensor logits;
  std::vector<Tensor> importance;
  std::vector<Tensor> aux;
};

Decoded run_body(const ModelParams& p, const TaskRoute& route, const Example& ex, std::span<const int> prefix,
                 bool train, const RngStream& rng) {
  Pair grid;
  Tensor x = embed_input(p, route, ex, &grid);
  BodyOutput enc = encode(p, x, train, rng.fork("encoder"));
  Tensor target = route.output == Modality::language ? shifted_targets(p, route, prefix)
                                                     : categorical_targets(p, route, enc.output);
  Tensor mixed = mix(p, enc.output, target, train, rng.fork("mixer"));
  BodyOutput dec = decode_body(p, enc.output, mixed, train, rng.fork("decoder"));
  Decoded out;
  out.logits = route.output == Modality::language ? language_logits(p.language, dec.output)
                                                  : categorical_logits(*p.categorical, dec.output, grid);
  for (const BodyOutput* b : {&enc, &dec})
    if (b->importance.defined()) {
      out.importance.push_back(b->importance);
      out.aux.push_back(b->aux_cost);
    }
  return out;
}

}  // namespace

ExampleForward forward_example(const ModelParams& p, const TaskRoute& route, const Example& ex, bool train,
                               const RngStream& rng) {
  check_route(p, route, ex);
  ExampleForward out;
  std::vector<int> targets;
  if (route.output == Modality::language) {
    targets = ex.target_ids;
    Decoded d = run_body(p, route, ex, std::span<const int>(targets).first(targets.size() - 1), train, rng);
    out.logits = d.logits;
    out.importance = std::move(d.importance);
    out.aux = std::move(d.aux);
  } else {
    targets = {ex.label};
    Decoded d = run_body(p, route, ex, {}, train, rng);
    out.logits = d.logits;
    out.importance = std::move(d.importance);
    out.aux = std::move(d.aux);
  }
  std::vector<double> weights(targets.size(), 1.0);
  out.nll = softmax_cross_entropy(out.logits, targets, weights);
  out.scored = targets.size();
  return out;
}

TeacherForced forward_teacher_forced(const ModelParams& p, const TaskRoute& route, std::span<const Example> batch,
                                     bool train, const RngStream& rng) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  TeacherForced out;
  Tensor nll_sum;
  std::vector<Tensor> importance;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ExampleForward f = forward_example(p, route, batch[i], train, rng.fork(i));
    out.probabilities.push_back(softmax(f.logits));
    nll_sum = nll_sum.defined() ? add(nll_sum, f.nll) : f.nll;
    out.scored += f.scored;
    if (importance.empty()) importance = f.importance;
    else
      for (std::size_t l = 0; l < importance.size(); ++l) importance[l] = add(importance[l], f.importance[l]);
  }
  out.nll = scale(nll_sum, 1.0 / static_cast<double>(out.scored));
  out.aux = zero_cost();
  const MoEParams* layers[] = {&p.encoder_moe, &p.decoder_moe};
  for (std::size_t l = 0; l < importance.size(); ++l)
    out.aux = add(out.aux, scale(cv_squared(importance[l]), layers[l]->balance_weight));
  out.loss = add(out.nll, out.aux);
  return out;
}

namespace {

int argmax_row(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

std::vector<int> generate(const ModelParams& p, const TaskRoute& route, const Example& ex, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("generate: max_len must be at least 1");
  const RngStream rng(0);
  Pair grid;
  Tensor x = embed_input(p, route, ex, &grid);
  BodyOutput enc = encode(p, x, false, rng);
  if (route.output == Modality::categorical) {
    if (!p.categorical) throw std::invalid_argument("model has no categorical modality");
    Tensor mixed = mix(p, enc.output, categorical_targets(p, route, enc.output), false, rng);
    Tensor logits = categorical_logits(*p.categorical, decode_body(p, enc.output, mixed, false, rng).output, grid);
    return {argmax_row(logits.values())};
  }
  std::vector<int> out;
  const std::size_t v = p.language.vocab();
  while (out.size() < max_len) {
    Tensor mixed = mix(p, enc.output, shifted_targets(p, route, out), false, rng);
    Tensor logits = language_logits(p.language, decode_body(p, enc.output, mixed, false, rng).output);
    out.push_back(argmax_row(logits.values().subspan(out.size() * v, v)));
    if (out.back() == p.language.term_id) break;
  }
  return out;
}

RngStream example_stream(std::uint64_t seed, std::uint64_t step, std::size_t slot) {
  return RngStream(seed).fork("train").fork(step).fork(slot);
}

}  // namespace mm
