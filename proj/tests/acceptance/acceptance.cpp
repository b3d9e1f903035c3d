// Acceptance suite. Usage: mm_acceptance <criterion>... (1-9 or "all").
// Prints one PASS/FAIL line per criterion and exits non-zero if any failed.
// Training artifacts (metric logs, battery report) land in the working
// directory, or in $MM_ACCEPTANCE_OUT when set.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "../unit/op_cases.hpp"
#include "../unit/test_helpers.hpp"
#include "multimodel/checkpoint.hpp"
#include "multimodel/grad_check.hpp"
#include "multimodel/model.hpp"
#include "multimodel/train.hpp"

namespace {

using namespace mm;
using test::bit_equal;
using test::random_tensor;

// Tolerances and budgets.
constexpr double kOpRtol = 1e-4;
constexpr double kBlockRtol = 1e-3;
constexpr std::size_t kGradSeeds = 5;
constexpr double kGradBudgetSeconds = 300.0;
constexpr std::size_t kCausalTrials = 100;
constexpr std::size_t kSepConvCases = 50;
constexpr double kSepConvAbs = 1e-9;
constexpr double kMoEDenseRtol = 1e-9;
constexpr double kGateSumTol = 1e-12;
constexpr double kBalanceTol = 1e-12;
constexpr double kTimingTol = 1e-12;
constexpr double kUniformTol = 1e-6;

// Joint run.
constexpr std::size_t kJointSteps = 20000;
constexpr std::size_t kJointEvalEvery = 2000;
constexpr std::size_t kJointDev = 256;
constexpr double kJointLr = 1e-3;
constexpr double kCpuBudgetMinutes = 30.0 * 8.0;  // 30 minutes on 8 cores
constexpr double kParseMarginPoints = 2.0;
constexpr std::size_t kBatterySteps = 3000;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::filesystem::path out_dir() {
  const char* env = std::getenv("MM_ACCEPTANCE_OUT");
  std::filesystem::path p = env ? env : ".";
  std::filesystem::create_directories(p);
  return p;
}

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

template <class P>
std::vector<NamedInput> named(const P& p, const std::string& prefix) {
  std::vector<NamedInput> out;
  visit(p, prefix, [&](const std::string& name, const Tensor& t) {
    if (!name.ends_with("/noise")) out.push_back({name, t});
  });
  return out;
}

template <class P>
P rebuilt(const P& p, const std::vector<Tensor>& in, std::size_t first) {
  P q = p;
  visit(q, "", [&](const std::string& name, Tensor& t) {
    if (!name.ends_with("/noise")) t = in[first++];
  });
  return q;
}

Tensor uniform(const Shape& s, const RngStream& r, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(s));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = lo + (hi - lo) * r.uniform_at(i);
  return Tensor(s, std::move(v));
}

// ---------------------------------------------------------------- 1

ModelConfig reduced_model(std::size_t enc_blocks, std::size_t dec_units) {
  ModelConfig c;
  c.depth = 4;
  c.heads = 2;
  c.experts = 3;
  c.k = 2;
  c.expert_hidden = 6;
  c.vocab = 12;
  c.n_tasks = 2;
  c.dropout = 0.0;
  c.encoder_blocks = enc_blocks;
  c.encoder_moe_after = 1;
  c.mixer_blocks = 0;
  c.decoder_units = dec_units;
  c.decoder_moe_after = 1;
  return c;
}

std::vector<NamedInput> model_inputs(const ModelParams& p, const std::string& prefix) {
  std::vector<NamedInput> out;
  visit(p, [&](const std::string& name, const Tensor& t) {
    if (name.starts_with(prefix) && !name.ends_with("/noise")) out.push_back({name, t});
  });
  return out;
}

ModelParams model_with(const ModelParams& p, const std::string& prefix, const std::vector<Tensor>& in,
                       std::size_t first) {
  ModelParams q = p;
  visit(q, [&](const std::string& name, Tensor& t) {
    if (name.starts_with(prefix) && !name.ends_with("/noise")) t = in[first++];
  });
  return q;
}

ModelParams with_random_gates(ModelParams p, const RngStream& r) {
  p.language.softmax = uniform(p.language.softmax.shape(), r.fork(1));
  p.encoder_moe.gate = uniform(p.encoder_moe.gate.shape(), r.fork(2));
  p.decoder_moe.gate = uniform(p.decoder_moe.gate.shape(), r.fork(3));
  if (p.categorical) p.categorical->classes = uniform(p.categorical->classes.shape(), r.fork(4));
  return p;
}

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::string> failures;
  std::size_t checks = 0;
  double worst_op = 0.0, worst_block = 0.0;
  auto record = [&](const std::string& name, std::uint64_t seed, const GradCheckReport& r, bool op) {
    ++checks;
    (op ? worst_op : worst_block) = std::max(op ? worst_op : worst_block, r.max_rel_error);
    if (!r.passed) failures.push_back(name + " seed " + std::to_string(seed) + ": " + r.summary());
  };
  GradCheckOptions op_opt;
  op_opt.rtol = kOpRtol;
  GradCheckOptions block_opt;
  block_opt.rtol = kBlockRtol;

  for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
    const RngStream root = RngStream(seed).fork("acceptance-grad");
    for (const auto& oc : test::op_cases(seed)) {
      std::vector<NamedInput> inputs;
      for (std::size_t i = 0; i < oc.shapes.size(); ++i)
        inputs.push_back({"in" + std::to_string(i), uniform(oc.shapes[i], root.fork(oc.name).fork(i))});
      record(oc.name, seed, grad_check(probe_sum(oc.f, 1000 + seed), inputs, op_opt), true);
    }

    {
      ConvStepParams p = ConvStepParams::init({3, 1}, 3, 4, {1, 1}, {1 + seed % 2, 1}, root.fork("step"));
      p.gain = uniform({4}, root.fork("step-gain"), 0.5, 1.5);
      p.bias = uniform({4}, root.fork("step-bias"));
      auto inputs = named(p, "step");
      inputs.insert(inputs.begin(), {"x", uniform({1, 6, 3}, root.fork("step-x"))});
      auto f = [&](const std::vector<Tensor>& in) {
        return conv_step(rebuilt(p, in, 1), in[0], seed % 2 ? Padding::left : Padding::same);
      };
      record("conv_step", seed, grad_check(probe_sum(f, seed), inputs, block_opt), false);
    }
    {
      ConvBlockParams p = ConvBlockParams::init(3, 0.4, root.fork("block"));
      visit(p, "", [&](const std::string& name, Tensor& t) {
        if (name.ends_with("gain")) t = uniform(t.shape(), root.fork(name), 0.5, 1.5);
        if (name.ends_with("bias")) t = uniform(t.shape(), root.fork(name));
      });
      auto inputs = named(p, "block");
      inputs.insert(inputs.begin(), {"x", uniform({1, 6, 3}, root.fork("block-x"))});
      auto f = [&](const std::vector<Tensor>& in) {
        return conv_block(rebuilt(p, in, 1), in[0], Padding::left, false, RngStream(0));
      };
      record("conv_block", seed, grad_check(probe_sum(f, seed), inputs, block_opt), false);
    }
    {
      AttentionParams p = AttentionParams::init(4, 2, 0.4, root.fork("attention"));
      auto inputs = named(p, "attention");
      inputs.insert(inputs.begin(), {"target", uniform({1, 4, 4}, root.fork("att-target"))});
      inputs.insert(inputs.begin(), {"source", uniform({1, 3, 4}, root.fork("att-source"))});
      auto f = [&](const std::vector<Tensor>& in) {
        return attention_block(rebuilt(p, in, 2), in[0], in[1], false, RngStream(0));
      };
      record("attention_block", seed, grad_check(probe_sum(f, seed), inputs, block_opt), false);
    }
    {
      MoEParams p = MoEParams::init(3, 5, 4, 2, 0.1, root.fork("moe"));
      p.gate = uniform(p.gate.shape(), root.fork("moe-gate"));
      auto inputs = named(p, "moe");
      inputs.insert(inputs.begin(), {"x", uniform({1, 5, 3}, root.fork("moe-x"))});
      auto f = [&](const std::vector<Tensor>& in) {
        MoEOutput o = moe_layer(rebuilt(p, in, 1), in[0], false, RngStream(0));
        return add(probe_sum([&](auto&) { return o.output; }, seed)(in), o.balance_cost);
      };
      record("moe_layer", seed, grad_check(f, inputs, block_opt), false);
    }
    {
      ConvResParams p = ConvResParams::init(2, 3, {2, 2}, root.fork("conv-res"));
      auto inputs = named(p, "res");
      inputs.insert(inputs.begin(), {"x", uniform({1, 5, 4, 2}, root.fork("res-x"))});
      auto f = [&](const std::vector<Tensor>& in) { return conv_res(rebuilt(p, in, 1), in[0]); };
      record("conv_res", seed, grad_check(probe_sum(f, seed), inputs, block_opt), false);
    }
    {
      CategoricalExitParams p = CategoricalExitParams::init(4, 3, 6, 8, root.fork("categorical"));
      p.classes = uniform(p.classes.shape(), root.fork("classes"));
      auto inputs = named(p, "cat");
      inputs.insert(inputs.begin(), {"body", uniform({1, 16, 4}, root.fork("cat-body"))});
      auto f = [&](const std::vector<Tensor>& in) { return categorical_out(rebuilt(p, in, 1), in[0], {4, 4}); };
      record("categorical_out", seed, grad_check(probe_sum(f, seed), inputs, block_opt), false);
    }
    {
      ModelParams p = with_random_gates(ModelParams::init(reduced_model(2, 1), seed), root.fork("enc"));
      auto inputs = model_inputs(p, "encoder/");
      inputs.insert(inputs.begin(), {"x", uniform({1, 5, 4}, root.fork("enc-x"))});
      auto f = [&](const std::vector<Tensor>& in) {
        BodyOutput e = encode(model_with(p, "encoder/", in, 1), in[0], false, RngStream(0));
        return add(probe_sum([&](auto&) { return e.output; }, seed)(in), e.aux_cost);
      };
      record("reduced encoder", seed, grad_check(f, inputs, block_opt), false);
    }
    {
      ModelParams p = with_random_gates(ModelParams::init(reduced_model(1, 1), seed + 100), root.fork("dec"));
      auto inputs = model_inputs(p, "decoder/");
      inputs.insert(inputs.begin(), {"mixed", uniform({1, 4, 4}, root.fork("dec-mixed"))});
      inputs.insert(inputs.begin(), {"encoded", uniform({1, 3, 4}, root.fork("dec-enc"))});
      auto f = [&](const std::vector<Tensor>& in) {
        BodyOutput d = decode_body(model_with(p, "decoder/", in, 2), in[0], in[1], false, RngStream(0));
        return add(probe_sum([&](auto&) { return d.output; }, seed)(in), d.aux_cost);
      };
      record("reduced decoder", seed, grad_check(f, inputs, block_opt), false);
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::string detail = fmt("%zu checks over %zu seeds, worst op rel err %.2e, worst block rel err %.2e, %.1f s", checks,
                           kGradSeeds, worst_op, worst_block, seconds);
  for (const auto& f : failures) detail += "\n    " + f;
  if (seconds >= kGradBudgetSeconds) detail += fmt("\n    runtime %.1f s exceeds %.0f s", seconds, kGradBudgetSeconds);
  return {failures.empty() && seconds < kGradBudgetSeconds, detail};
}

// ---------------------------------------------------------------- 2

Outcome causality() {
  const TaskSuite suite;
  ModelConfig c = suite_model_config(ModelConfig{}, suite);
  const ModelParams p = with_random_gates(ModelParams::init(c, 5), RngStream(6));
  const std::size_t d = c.depth;
  std::size_t mixer_leaks = 0, decoder_leaks = 0;
  for (std::size_t trial = 0; trial < kCausalTrials; ++trial) {
    const RngStream r = RngStream(trial).fork("acceptance-causal");
    const std::size_t ls = 2 + r.bits_at(0) % 10, lt = 2 + r.bits_at(1) % 12;
    const std::size_t keep = 1 + r.bits_at(2) % (lt - 1);  // positions [0, keep) must not change
    const Tensor enc = uniform({1, ls, d}, r.fork(1));
    const Tensor tgt = uniform({1, lt, d}, r.fork(2));
    std::vector<double> v(tgt.values().begin(), tgt.values().end());
    for (std::size_t i = keep * d; i < v.size(); ++i) v[i] += (r.uniform_at(100 + i) - 0.5) * 8.0;
    const Tensor tgt2({1, lt, d}, std::move(v));
    const std::size_t n = keep * d;

    const Tensor m1 = mix(p, enc, tgt, false, r), m2 = mix(p, enc, tgt2, false, r);
    mixer_leaks += !bit_equal(m1.values().first(n), m2.values().first(n));
    // The decoder stack on its own: perturb its input directly.
    const Tensor d1 = decode_body(p, enc, tgt, false, r).output, d2 = decode_body(p, enc, tgt2, false, r).output;
    decoder_leaks += !bit_equal(d1.values().first(n), d2.values().first(n));
  }
  return {mixer_leaks == 0 && decoder_leaks == 0,
          fmt("%zu trials each: mixer %zu leaked, decoder %zu leaked", kCausalTrials, mixer_leaks, decoder_leaks)};
}

// ---------------------------------------------------------------- 3

// Independent reference: explicit loops over every output, tap and channel.
// "same" pads (out - 1) * stride + span - n in total, the smaller half first;
// "left" pads span - 1 before the sequence.
std::vector<double> reference_sep_conv(const Tensor& x, const Tensor& dw, const Tensor& pw, Pair stride, Pair dil,
                                       bool left) {
  const bool spatial = x.rank() == 4;
  const std::size_t b = x.dim(0), h = x.dim(1), w = spatial ? x.dim(2) : 1, c = x.dim(spatial ? 3 : 2);
  const std::size_t kh = dw.dim(0), kw = dw.dim(1), f = pw.dim(1);
  auto pad_before = [](std::size_t n, std::size_t k, std::size_t s, std::size_t dl, bool causal) {
    const long span = static_cast<long>((k - 1) * dl + 1);
    if (causal) return span - 1;
    const long out = static_cast<long>((n + s - 1) / s);
    return std::max((out - 1) * static_cast<long>(s) + span - static_cast<long>(n), 0L) / 2;
  };
  const std::size_t oh = (h + stride.h - 1) / stride.h, ow = (w + stride.w - 1) / stride.w;
  const long ph = pad_before(h, kh, stride.h, dil.h, left), pwid = pad_before(w, kw, stride.w, dil.w, false);
  std::vector<double> y(b * oh * ow * f, 0.0);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double depth_sum = 0.0;
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t e = 0; e < kw; ++e) {
              const long si = static_cast<long>(i * stride.h + a * dil.h) - ph;
              const long sj = static_cast<long>(j * stride.w + e * dil.w) - pwid;
              if (si < 0 || sj < 0 || si >= static_cast<long>(h) || sj >= static_cast<long>(w)) continue;
              depth_sum += x[((n * h + si) * w + sj) * c + ch] * dw[(a * kw + e) * c + ch];
            }
          for (std::size_t o = 0; o < f; ++o) y[((n * oh + i) * ow + j) * f + o] += depth_sum * pw[ch * f + o];
        }
  return y;
}

Outcome oracles() {
  double worst_conv = 0.0;
  for (std::size_t trial = 0; trial < kSepConvCases; ++trial) {
    const RngStream r = RngStream(trial).fork("acceptance-sepconv");
    auto pick = [&](std::size_t slot, std::size_t lo, std::size_t hi) { return lo + r.bits_at(slot) % (hi - lo + 1); };
    const bool spatial = trial % 3 == 2;
    const bool left = !spatial && r.bits_at(0) % 2 == 0;
    const std::size_t b = pick(1, 1, 2), h = pick(2, 3, 12), w = spatial ? pick(3, 2, 7) : 1, c = pick(4, 1, 5),
                      f = pick(5, 1, 5), kh = pick(6, 1, 5), kw = spatial ? pick(7, 1, 3) : 1;
    const Pair stride{pick(8, 1, 2), spatial ? pick(9, 1, 2) : 1};
    const Pair dil{left ? pick(10, 1, 4) : 1 + (stride.h == 1) * (r.bits_at(10) % 3), 1};
    const Tensor x = uniform(spatial ? Shape{b, h, w, c} : Shape{b, h, c}, r.fork(1));
    const Tensor dw = uniform({kh, kw, c}, r.fork(2)), pw = uniform({c, f}, r.fork(3));
    const Tensor y = sep_conv(x, dw, pw, stride, dil, left ? Padding::left : Padding::same);
    const auto ref = reference_sep_conv(x, dw, pw, stride, dil, left);
    if (ref.size() != y.size()) return {false, fmt("case %zu: size %zu vs reference %zu", trial, y.size(), ref.size())};
    for (std::size_t i = 0; i < ref.size(); ++i) worst_conv = std::max(worst_conv, std::abs(ref[i] - y[i]));
  }

  double worst_moe = 0.0;
  for (std::size_t trial = 0; trial < 10; ++trial) {
    const RngStream r = RngStream(trial).fork("acceptance-moe");
    const std::size_t c = 2 + trial % 4, e = 2 + trial % 5, hid = 3 + trial % 3, rows = 3 + trial % 4;
    MoEParams p = MoEParams::init(c, hid, e, e, 0.01, r.fork(1));
    p.gate = uniform(p.gate.shape(), r.fork(2), -2.0, 2.0);
    p.noise = uniform(p.noise.shape(), r.fork(3));
    p.b1 = uniform(p.b1.shape(), r.fork(4));
    p.b2 = uniform(p.b2.shape(), r.fork(5));
    const Tensor x = uniform({1, rows, c}, r.fork(6));
    const Tensor y = moe_layer(p, x, false, RngStream(0)).output;
    for (std::size_t row = 0; row < rows; ++row) {
      std::vector<double> logits(e, 0.0);
      for (std::size_t j = 0; j < e; ++j)
        for (std::size_t i = 0; i < c; ++i) logits[j] += x[row * c + i] * p.gate[i * e + j];
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t o = 0; o < c; ++o) {
        double mixture = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
          double out = p.b2[j * c + o];
          for (std::size_t k = 0; k < hid; ++k) {
            double pre = p.b1[j * hid + k];
            for (std::size_t i = 0; i < c; ++i) pre += x[row * c + i] * p.w1[(j * c + i) * hid + k];
            out += std::max(pre, 0.0) * p.w2[(j * hid + k) * c + o];
          }
          mixture += logits[j] / z * out;
        }
        const double got = y[row * c + o];
        worst_moe = std::max(worst_moe, std::abs(got - mixture) / std::max(std::abs(mixture), 1e-6));
      }
    }
  }
  return {worst_conv < kSepConvAbs && worst_moe <= kMoEDenseRtol,
          fmt("sep_conv max abs diff %.3e over %zu cases; dense mixture max rel diff %.3e", worst_conv, kSepConvCases,
              worst_moe)};
}

// ---------------------------------------------------------------- 4

Outcome sparsity_and_balance() {
  std::size_t rows = 0, bad_rows = 0;
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const RngStream r = RngStream(trial).fork("acceptance-gate");
    const std::size_t e = 2 + trial % 15, k = 1 + r.bits_at(0) % e, c = 3 + trial % 5;
    MoEParams p = MoEParams::init(c, 4, e, k, 0.01, r.fork(1));
    p.gate = uniform(p.gate.shape(), r.fork(2));
    p.noise = uniform(p.noise.shape(), r.fork(3));
    const bool train = trial % 2 == 0;
    const GateOutput g = moe_gate(p, uniform({2, 7, c}, r.fork(4)), train, r.fork(5));
    for (std::size_t row = 0; row < 14; ++row, ++rows) {
      std::size_t nonzero = 0;
      double total = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        nonzero += g.weights[row * e + j] != 0.0;
        total += g.weights[row * e + j];
      }
      bad_rows += nonzero != k || std::abs(total - 1.0) > kGateSumTol;
    }
  }

  // Two experts, identity gate, top-1: one-hot rows route each token to
  // a chosen expert with weight exactly 1.
  const double w = 0.37;
  MoEParams p = MoEParams::init(2, 3, 2, 1, w, RngStream(9));
  p.gate = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
  auto cost_for = [&](const std::vector<int>& experts) {
    std::vector<double> x(experts.size() * 2, 0.0);
    for (std::size_t i = 0; i < experts.size(); ++i) x[i * 2 + static_cast<std::size_t>(experts[i])] = 1.0;
    return moe_layer(p, Tensor({1, experts.size(), 2}, std::move(x)), false, RngStream(0)).balance_cost.item();
  };
  const double uniform_cost = cost_for({0, 1, 1, 0});
  const double hand_cost = cost_for({0, 0, 1, 0});  // importance [3, 1]
  const double direct_uniform = cv_squared(Tensor({5}, {0.7, 0.7, 0.7, 0.7, 0.7})).item();
  const bool ok = bad_rows == 0 && uniform_cost == 0.0 && direct_uniform == 0.0 &&
                  std::abs(hand_cost - 0.25 * w) <= kBalanceTol;
  return {ok, fmt("%zu/%zu gating rows wrong; uniform cost %.3g; [3,1] cost %.15g vs %.15g", bad_rows, rows,
                  uniform_cost, hand_cost, 0.25 * w)};
}

// ---------------------------------------------------------------- 5

Outcome timing() {
  bool first_row = true;
  for (std::size_t depth : {2u, 4u, 8u, 64u}) {
    const Tensor t = timing_signal(3, depth);
    for (std::size_t i = 0; i < depth; ++i) first_row = first_row && t[i] == (i % 2 ? 1.0 : 0.0);
  }
  const Tensor t = timing_signal(101, 4);
  const double s = t[100 * 4 + 2], co = t[100 * 4 + 3];
  const double rate = std::pow(1e4, -2.0 / 4.0);
  const bool spot = std::abs(s - std::sin(1.0)) <= kTimingTol && std::abs(co - std::cos(1.0)) <= kTimingTol &&
                    std::abs(s - std::sin(100 * rate)) <= kTimingTol && std::abs(co - std::cos(100 * rate)) <= kTimingTol;
  return {first_row && spot, fmt("t=0 rows %s; (t=100, pair 2) = [%.15f, %.15f]", first_row ? "exact" : "WRONG", s, co)};
}

// ---------------------------------------------------------------- 6

TrainConfig desk_config() {
  TrainConfig c;
  c.model.dropout = 0.0;
  c.adam.lr = kJointLr;
  c.batch = 16;
  c.seed = 1;
  c.world_seed = 1;
  c.threads = worker_count();
  return c;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

Outcome joint_training() {
  const TaskSuite suite;
  TrainConfig c = desk_config();
  c.tasks = standard_task_names();
  c.steps = kJointSteps;
  c.eval_every = kJointEvalEvery;
  c.log_path = (out_dir() / "joint_metrics.tsv").string();
  std::filesystem::remove(c.log_path);

  const ModelParams untrained = ModelParams::init(suite_model_config(c.model, suite), c.seed);
  const std::size_t copy = suite.index_of("copy");
  const double baseline = evaluate(untrained, suite, copy, dev_set(suite, c, copy)).logppl;
  const bool baseline_ok = untrained.language.vocab() == 512 && std::abs(baseline - std::log(512.0)) <= kUniformTol;

  const double cpu0 = cpu_seconds();
  const auto wall0 = std::chrono::steady_clock::now();
  Progress progress;
  progress.on_eval = [](const EvalRecord& r) { std::fprintf(stderr, "  %s\n", format_log_line(r).c_str()); };
  const TrainResult r = train(suite, c, progress);
  const double cpu_min = (cpu_seconds() - cpu0) / 60.0;
  const double wall_min = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count() / 60.0;

  TrainConfig final_dev = c;
  final_dev.dev_size = kJointDev;
  struct Threshold {
    const char* task;
    double min;
    bool exact;
  };
  const std::vector<Threshold> thresholds{
      {"copy", 0.99, false},          {"reverse", 0.95, false},        {"translate-ab", 0.90, false},
      {"translate-ba", 0.90, false},  {"translate-ac", 0.90, false},   {"translate-ca", 0.90, false},
      {"image-classify", 0.90, false}, {"audio-classify", 0.85, false}, {"parse", 0.85, true},
  };
  bool ok = baseline_ok && cpu_min <= kCpuBudgetMinutes;
  std::string detail = fmt("uniform baseline logppl %.9f (ln 512 = %.9f); %zu steps, best step %zu; %.1f CPU-min "
                           "(budget %.0f), %.1f wall-min on %zu core(s)",
                           baseline, std::log(512.0), c.steps, r.best_step, cpu_min, kCpuBudgetMinutes, wall_min,
                           static_cast<std::size_t>(worker_count()));
  for (const auto& t : thresholds) {
    const std::size_t id = suite.index_of(t.task);
    const auto dev = dev_set(suite, final_dev, id);
    const Metrics m = evaluate(r.best_params, suite, id, dev);
    const double value = t.exact ? m.exact : m.accuracy;
    ok = ok && value >= t.min;
    detail += fmt("\n    %-15s %s %.4f (need >= %.2f)%s", t.task, t.exact ? "exact" : "acc  ", value, t.min,
                  value >= t.min ? "" : "  MISSED");
    if (t.exact) {
      std::size_t balanced = 0;
      for (const auto& ex : dev) {
        std::istringstream words(decode_tokens(generate(r.best_params, suite.route(id), ex, 4 * kLongMax + 8),
                                               suite.vocab()));
        std::vector<std::string> tokens{std::istream_iterator<std::string>(words), {}};
        balanced += brackets_balanced(tokens);
      }
      detail += fmt("; balanced outputs %.4f", static_cast<double>(balanced) / static_cast<double>(dev.size()));
    }
  }
  const std::size_t caption = suite.index_of("image-caption");
  const Metrics mc = evaluate(r.best_params, suite, caption, dev_set(suite, final_dev, caption));
  detail += fmt("\n    %-15s acc   %.4f (reported only)", "image-caption", mc.accuracy);
  return {ok, detail};
}

// ---------------------------------------------------------------- 7, 8

const BatteryReport& battery() {
  static const BatteryReport report = [] {
    const TaskSuite suite;
    BatteryConfig b;
    b.base = desk_config();
    b.steps = kBatterySteps;
    b.base.eval_every = kBatterySteps / 3;
    Progress progress;
    progress.on_eval = [](const EvalRecord& r) { std::fprintf(stderr, "  %s\n", format_log_line(r).c_str()); };
    BatteryReport r = experiment_battery(suite, b, progress);
    std::ofstream(out_dir() / "battery_report.txt") << r.text;
    std::fprintf(stderr, "%s", r.text.c_str());
    return r;
  }();
  return report;
}

Outcome joint_vs_single() {
  const BatteryReport& r = battery();
  std::size_t tasks = 0;
  for (const auto& row : r.rows)
    if (row.table == "joint-vs-single" && row.condition == "joint" &&
        r.find("joint-vs-single", row.task, "alone") != nullptr)
      ++tasks;
  const BatteryRow* joint = r.find("joint-vs-single", "parse", "joint");
  const BatteryRow* alone = r.find("joint-vs-single", "parse", "alone");
  if (!joint || !alone) return {false, fmt("%zu tasks in the table; parse rows missing", tasks)};
  const double j = 100.0 * joint->metrics.exact, a = 100.0 * alone->metrics.exact;
  return {tasks >= 4 && j >= a - kParseMarginPoints,
          fmt("%zu tasks in the table; parse exact joint %.2f%% vs alone %.2f%% (need joint >= alone - %.0f pp)", tasks,
              j, a, kParseMarginPoints)};
}

Outcome ablation() {
  const BatteryReport& r = battery();
  const BatteryConfig defaults;
  std::size_t present = 0;
  for (const char* cond : {"full", "no-moe", "no-attention"})
    for (const auto& task : {defaults.translation_task, defaults.image_task})
      present += r.find("ablation", task, cond) != nullptr;
  const BatteryRow* full = r.find("ablation", defaults.translation_task, "full");
  const BatteryRow* no_att = r.find("ablation", defaults.translation_task, "no-attention");
  if (!full || !no_att) return {false, fmt("%zu of 6 ablation rows present", present)};
  return {present == 6 && full->split == "dev-long" && no_att->metrics.accuracy <= full->metrics.accuracy,
          fmt("%zu of 6 ablation rows; %s on %s: no-attention acc %.4f vs full %.4f", present,
              defaults.translation_task.c_str(), full->split.c_str(), no_att->metrics.accuracy,
              full->metrics.accuracy)};
}

// ---------------------------------------------------------------- 9

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome persistence() {
  const TaskSuite suite;
  TrainConfig c = desk_config();
  c.tasks = standard_task_names();
  c.steps = 60;
  c.eval_every = 20;
  c.dev_size = 16;
  const auto dir = out_dir();
  std::vector<std::string> logs;
  TrainResult first;
  for (int run = 0; run < 2; ++run) {
    c.log_path = (dir / ("determinism_run" + std::to_string(run) + ".tsv")).string();
    std::filesystem::remove(c.log_path);
    TrainResult r = train(suite, c);
    logs.push_back(read_file(c.log_path));
    if (run == 0) first = std::move(r);
  }
  const bool same_logs = !logs[0].empty() && logs[0] == logs[1];

  const auto path = dir / "roundtrip.ckpt";
  save_checkpoint(first.final_params, path.string());
  ModelParams loaded = ModelParams::init(suite_model_config(c.model, suite), 999);
  assign_tensors(loaded, load_checkpoint(path.string()));
  const auto a = named_tensors(first.final_params), b = named_tensors(loaded);
  bool same_params = a.size() == b.size();
  for (std::size_t i = 0; same_params && i < a.size(); ++i)
    same_params = a[i].name == b[i].name && a[i].value.shape() == b[i].value.shape() &&
                  bit_equal(a[i].value.values(), b[i].value.values());
  std::filesystem::remove(path);
  const std::size_t copy = suite.index_of("copy");
  const auto dev = dev_set(suite, c, copy);
  const bool same_outputs = generate(first.final_params, suite.route(copy), dev[0], 20) ==
                            generate(loaded, suite.route(copy), dev[0], 20);
  return {same_logs && same_params && same_outputs,
          fmt("checkpoint of %zu tensors %s; decoding after reload %s; two %zu-step runs: logs %s (%zu bytes)",
              a.size(), same_params ? "bit-identical" : "DIFFERS", same_outputs ? "identical" : "DIFFERS", c.steps,
              same_logs ? "identical" : "DIFFER", logs[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient correctness", gradients}},
      {2, {"causality", causality}},
      {3, {"oracle equivalence", oracles}},
      {4, {"moe sparsity and balance", sparsity_and_balance}},
      {5, {"timing signal", timing}},
      {6, {"joint-training thresholds", joint_training}},
      {7, {"joint vs single", joint_vs_single}},
      {8, {"ablation", ablation}},
      {9, {"persistence and determinism", persistence}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "all") {
      for (const auto& [id, _] : criteria) selected.push_back(id);
      continue;
    }
    const int id = std::atoi(a.c_str());
    if (!criteria.contains(id)) {
      std::fprintf(stderr, "unknown criterion '%s' (1-9 or all)\n", a.c_str());
      return 2;
    }
    selected.push_back(id);
  }
  if (selected.empty()) {
    std::fprintf(stderr, "usage: %s <criterion>... | all\n", argv[0]);
    return 2;
  }
  int failed = 0;
  for (int id : selected) {
    const auto& [name, run] = criteria.at(id);
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.passed;
    std::printf("criterion %d %s  %s: %s\n", id, o.passed ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
