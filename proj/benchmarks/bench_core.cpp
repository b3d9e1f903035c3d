#include <benchmark/benchmark.h>

#include "multimodel/blocks.hpp"
#include "multimodel/tape.hpp"
#include "multimodel/taskgen.hpp"
#include "multimodel/tokenizer.hpp"
#include "multimodel/train.hpp"

namespace {

using namespace mm;

Tensor noise(Shape shape, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<double> v(shape_size(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform_at(i) * 2.0 - 1.0;
  return Tensor(std::move(shape), std::move(v));
}

const TaskSuite& suite() {
  static const TaskSuite s;
  return s;
}

void BM_SepConv(benchmark::State& state) {
  const std::size_t len = static_cast<std::size_t>(state.range(0));
  Tensor x = noise({1, len, 64}, 1), dw = noise({15, 1, 64}, 2), pw = noise({64, 64}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(sep_conv(x, dw, pw, {1, 1}, {8, 1}, Padding::left));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_SepConv)->Arg(8)->Arg(32)->Arg(128);

void BM_ConvBlockForwardBackward(benchmark::State& state) {
  ConvBlockParams p = ConvBlockParams::init(64, 0.0, RngStream(4));
  Tensor x = noise({1, static_cast<std::size_t>(state.range(0)), 64}, 5);
  for (auto _ : state) {
    Tape tape;
    Tensor in = tape.leaf(x, "x");
    benchmark::DoNotOptimize(tape.backward(sum(conv_block(p, in, Padding::left, false, RngStream(0)))));
  }
}
BENCHMARK(BM_ConvBlockForwardBackward)->Arg(16)->Arg(64);

void BM_AttentionBlock(benchmark::State& state) {
  AttentionParams p = AttentionParams::init(64, 8, 0.0, RngStream(6));
  const std::size_t len = static_cast<std::size_t>(state.range(0));
  Tensor src = noise({1, len, 64}, 7), tgt = noise({1, len, 64}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(attention_block(p, src, tgt, false, RngStream(0)));
}
BENCHMARK(BM_AttentionBlock)->Arg(16)->Arg(64);

void BM_MoELayer(benchmark::State& state) {
  MoEParams p = MoEParams::init(64, 128, 16, static_cast<std::size_t>(state.range(0)), 0.01, RngStream(9));
  p.gate = noise(p.gate.shape(), 10);
  Tensor x = noise({1, 32, 64}, 11);
  for (auto _ : state) benchmark::DoNotOptimize(moe_layer(p, x, false, RngStream(0)));
}
BENCHMARK(BM_MoELayer)->Arg(1)->Arg(4)->Arg(16);

void BM_TrainingBatch(benchmark::State& state) {
  const std::size_t task = suite().index_of(state.range(0) ? "image-classify" : "copy");
  TrainConfig c;
  c.model.dropout = 0.0;
  const ModelParams p = ModelParams::init(suite_model_config(c.model, suite()), 1);
  const auto batch = suite().examples(task, Split::train, 1, 0, 16);
  for (auto _ : state)
    benchmark::DoNotOptimize(batch_gradients(p, suite().route(task), batch, RngStream(2)));
  state.SetLabel(suite().task(task).name);
}
BENCHMARK(BM_TrainingBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Generate(benchmark::State& state) {
  const std::size_t task = suite().index_of("reverse");
  const ModelParams p = ModelParams::init(suite_model_config(ModelConfig{}, suite()), 1);
  const Example ex = suite().example(task, Split::dev, 1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(generate(p, suite().route(task), ex, ex.target_ids.size()));
}
BENCHMARK(BM_Generate)->Unit(benchmark::kMillisecond);

void BM_EncodeText(benchmark::State& state) {
  const std::size_t task = suite().index_of("translate-ab");
  std::string text;
  for (std::uint64_t i = 0; i < 64; ++i) text += suite().render_input(suite().example(task, Split::train, 1, i)) + " ";
  for (auto _ : state) benchmark::DoNotOptimize(encode_text(text, suite().vocab()));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_EncodeText);

void BM_TaskExamples(benchmark::State& state) {
  const std::size_t task = static_cast<std::size_t>(state.range(0));
  std::uint64_t index = 0;
  for (auto _ : state) benchmark::DoNotOptimize(suite().example(task, Split::train, 1, index++));
  state.SetLabel(suite().task(task).name);
}
BENCHMARK(BM_TaskExamples)->DenseRange(0, 9);

}  // namespace

BENCHMARK_MAIN();
