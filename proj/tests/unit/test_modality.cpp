#include <gtest/gtest.h>

#include <cmath>

#include "multimodel/grad_check.hpp"
#include "multimodel/modality.hpp"
#include "multimodel/tape.hpp"
#include "test_helpers.hpp"

namespace mm {
namespace {

using test::random_tensor;

template <class P>
std::vector<NamedInput> named(P& p, const std::string& prefix) {
  std::vector<NamedInput> out;
  visit(p, prefix, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

template <class P>
P rebuilt(const P& p, const std::vector<Tensor>& in, std::size_t first) {
  P q = p;
  visit(q, "", [&](const std::string&, Tensor& t) { t = in[first++]; });
  return q;
}

TEST(Language, InMatchesOneHotAlgebra) {
  LanguageModalityParams p = LanguageModalityParams::init(7, 4, RngStream(1));
  std::vector<int> ids{3, 0, 6, 3};
  Tensor y = language_in(p, ids, 2);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 4}));
  std::vector<double> onehot(4 * 7, 0.0);
  for (std::size_t i = 0; i < 4; ++i) onehot[i * 7 + static_cast<std::size_t>(ids[i])] = 1.0;
  Tensor ref = matmul(Tensor({4, 7}, onehot), p.embedding);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  EXPECT_THROW(language_in(p, std::vector<int>{7}, 1), std::out_of_range);

  LanguageModalityParams z = p;
  z.embedding = Tensor::zeros({7, 4});
  for (double v : test::to_vector(language_in(z, std::vector<int>{0}, 1))) EXPECT_EQ(v, 0.0);
}

TEST(Language, GradientOnlyReachesUsedRows) {
  LanguageModalityParams p = LanguageModalityParams::init(6, 3, RngStream(2));
  Tape tape;
  Tensor table = tape.leaf(p.embedding, "E");
  LanguageModalityParams q = p;
  q.embedding = table;
  auto g = tape.backward(sum(language_in(q, std::vector<int>{1, 4, 1}, 1)));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const double expect = r == 1 ? 2.0 : r == 4 ? 1.0 : 0.0;
      EXPECT_EQ(g.get("E")[r * 3 + c], expect);
    }
}

TEST(Language, UntrainedOutputIsUniform) {
  LanguageModalityParams p = LanguageModalityParams::init(512, 8, RngStream(3));
  Tensor body = random_tensor({1, 3, 8}, 4);
  Tensor probs = language_out(p, body);
  for (double v : probs.values()) EXPECT_EQ(v, 1.0 / 512.0);
  std::vector<int> t{5, 9, 100};
  std::vector<double> w(3, 1.0);
  EXPECT_NEAR(softmax_cross_entropy(language_logits(p, body), t, w).item() / 3.0, std::log(512.0), 1e-12);
  p.softmax = random_tensor({8, 512}, 5);
  Tensor pr = language_out(p, body);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 512; ++j) s += pr[r * 512 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(ConvRes, ShapesAndZeros) {
  ConvResParams p = ConvResParams::init(3, 5, {2, 2}, RngStream(6));
  EXPECT_EQ(conv_res(p, random_tensor({1, 16, 16, 3}, 7)).shape(), (Shape{1, 8, 8, 5}));
  EXPECT_EQ(conv_res(p, random_tensor({2, 7, 5, 3}, 8)).shape(), (Shape{2, 4, 3, 5}));
  ConvResParams z = p;
  visit(z, "", [](const std::string& name, Tensor& t) {
    if (name.ends_with("gain")) return;
    t = Tensor::zeros(t.shape());
  });
  for (double v : test::to_vector(conv_res(z, Tensor::zeros({1, 6, 6, 3})))) EXPECT_EQ(v, 0.0);
}

TEST(ConvRes, GradCheck) {
  ConvResParams p = ConvResParams::init(3, 4, {2, 2}, RngStream(9));
  auto inputs = named(p, "");
  inputs.insert(inputs.begin(), {"x", random_tensor({1, 5, 6, 3}, 10)});
  auto f = [&](const std::vector<Tensor>& in) { return conv_res(rebuilt(p, in, 1), in[0]); };
  GradCheckOptions opt;
  opt.rtol = 1e-3;
  auto r = grad_check(probe_sum(f, 11), inputs, opt);
  EXPECT_TRUE(r.passed) << r.summary();
}

ImageWidths tiny_widths() { return {3, 4, 5, 6}; }

TEST(ImageIn, SpatialReductionIsSixteen) {
  ImageEntryParams p = ImageEntryParams::init(3, 8, tiny_widths(), RngStream(12));
  EXPECT_EQ(image_in(p, random_tensor({1, 64, 64, 3}, 13)).shape(), (Shape{1, 16, 8}));
  EXPECT_EQ(image_in(p, random_tensor({2, 16, 16, 3}, 14)).shape(), (Shape{2, 1, 8}));
  EXPECT_EQ(image_in(p, random_tensor({1, 32, 48, 3}, 15)).shape(), (Shape{1, 6, 8}));
  EXPECT_EQ(image_reduced(32), 2u);
  EXPECT_THROW(image_in(p, random_tensor({1, 8, 16, 3}, 16)), ShapeError);
  EXPECT_THROW(ImageEntryParams::init(3, 8, {3, 6, 5, 7}, RngStream(1)), std::invalid_argument);
}

TEST(ImageIn, GradCheck) {
  ImageEntryParams p = ImageEntryParams::init(3, 4, tiny_widths(), RngStream(17));
  auto inputs = named(p, "");
  inputs.insert(inputs.begin(), {"image", random_tensor({1, 16, 16, 3}, 18)});
  auto f = [&](const std::vector<Tensor>& in) { return image_in(rebuilt(p, in, 1), in[0]); };
  GradCheckOptions opt;
  opt.rtol = 1e-3;
  opt.max_coords = 60;
  auto r = grad_check(probe_sum(f, 19), inputs, opt);
  EXPECT_TRUE(r.passed) << r.summary();
}

TEST(Categorical, UniformAndNormalized) {
  CategoricalExitParams p = CategoricalExitParams::init(4, 5, 16, 32, RngStream(20));
  Tensor probs = categorical_out(p, Tensor::full({2, 16, 4}, 0.3), {4, 4});
  ASSERT_EQ(probs.shape(), (Shape{2, 5}));
  for (double v : probs.values()) EXPECT_EQ(v, 0.2);
  p.classes = random_tensor({32, 5}, 21);
  Tensor pr = categorical_out(p, random_tensor({2, 6, 4}, 22), {2, 3});
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GE(pr[r * 5 + j], 0.0);
      s += pr[r * 5 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(categorical_out(p, random_tensor({1, 7, 4}, 23), {2, 3}), ShapeError);
  EXPECT_THROW(CategoricalExitParams::init(4, 1, 8, 8, RngStream(1)), std::invalid_argument);
}

TEST(Categorical, GradCheck) {
  CategoricalExitParams p = CategoricalExitParams::init(4, 3, 6, 8, RngStream(24));
  p.classes = random_tensor({8, 3}, 25);
  auto inputs = named(p, "");
  inputs.insert(inputs.begin(), {"body", random_tensor({1, 16, 4}, 26)});
  auto f = [&](const std::vector<Tensor>& in) { return categorical_out(rebuilt(p, in, 1), in[0], {4, 4}); };
  GradCheckOptions opt;
  opt.rtol = 1e-3;
  auto r = grad_check(probe_sum(f, 27), inputs, opt);
  EXPECT_TRUE(r.passed) << r.summary();
}

TEST(Audio, WaveformAndSpectrogramShapes) {
  AudioEntryParams wave = AudioEntryParams::init(16, false, 8, RngStream(28));
  ASSERT_EQ(wave.stages.size(), 8u);
  EXPECT_EQ(wave.stages[0].out_depth(), 2u);
  EXPECT_EQ(wave.stages[2].out_depth(), 8u);
  EXPECT_EQ(wave.depth(), 16u);
  Pair grid;
  EXPECT_EQ(audio_in(wave, random_tensor({1, 256, 1}, 29), &grid).shape(), (Shape{1, 1, 16}));
  EXPECT_EQ(grid.h, 1u);
  EXPECT_EQ(grid.w, 1u);

  AudioEntryParams spec = AudioEntryParams::init(16, true, 8, RngStream(30));
  EXPECT_EQ(audio_in(spec, random_tensor({1, 64, 9, 1}, 31), &grid).shape(), (Shape{1, 9, 16}));
  EXPECT_EQ(grid.h, 1u);
  EXPECT_EQ(grid.w, 9u);
  EXPECT_THROW(audio_in(spec, random_tensor({1, 64, 1}, 32)), ShapeError);

  AudioEntryParams z = wave;
  visit(z, "", [](const std::string& name, Tensor& t) {
    if (!name.ends_with("gain")) t = Tensor::zeros(t.shape());
  });
  for (double v : test::to_vector(audio_in(z, Tensor::zeros({1, 64, 1})))) EXPECT_EQ(v, 0.0);
}

TEST(Audio, GradCheck) {
  AudioEntryParams p = AudioEntryParams::init(4, true, 3, RngStream(33));
  auto inputs = named(p, "");
  inputs.insert(inputs.begin(), {"audio", random_tensor({1, 8, 3, 1}, 34)});
  auto f = [&](const std::vector<Tensor>& in) { return audio_in(rebuilt(p, in, 1), in[0]); };
  GradCheckOptions opt;
  opt.rtol = 1e-3;
  auto r = grad_check(probe_sum(f, 35), inputs, opt);
  EXPECT_TRUE(r.passed) << r.summary();
}

}  // namespace
}  // namespace mm
