#include "multimodel/selftest.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "multimodel/checkpoint.hpp"
#include "multimodel/grad_check.hpp"
#include "multimodel/model.hpp"
#include "multimodel/taskgen.hpp"
#include "multimodel/tokenizer.hpp"

namespace mm {

namespace {

Tensor rnd(const Shape& shape, const RngStream& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = lo + (hi - lo) * rng.uniform_at(i);
  return Tensor(shape, std::move(v));
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

template <class P>
std::vector<NamedInput> named(const P& p) {
  std::vector<NamedInput> out;
  visit(p, "", [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

template <class P>
P rebuilt(const P& p, const std::vector<Tensor>& in, std::size_t first) {
  P q = p;
  visit(q, "", [&](const std::string&, Tensor& t) { t = in[first++]; });
  return q;
}

SelfTestResult from_report(std::string name, const GradCheckReport& r) {
  return {std::move(name), r.passed, r.summary()};
}

ModelConfig small_model() {
  ModelConfig m;
  m.depth = 8;
  m.heads = 2;
  m.experts = 4;
  m.k = 2;
  m.encoder_blocks = 2;
  m.encoder_moe_after = 1;
  m.mixer_blocks = 1;
  m.decoder_units = 2;
  m.decoder_moe_after = 1;
  m.vocab = 12;
  m.n_tasks = 2;
  m.dropout = 0.0;
  return m;
}

}  // namespace

std::vector<SelfTestResult> run_selftest(std::uint64_t seed, const std::function<void(const SelfTestResult&)>& on_result) {
  std::vector<SelfTestResult> results;
  const RngStream root(seed);
  auto report = [&](SelfTestResult r) {
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  };
  auto guarded = [&](const std::string& name, const std::function<SelfTestResult()>& check) {
    try {
      report(check());
    } catch (const std::exception& e) {
      report({name, false, std::string("threw: ") + e.what()});
    }
  };

  guarded("grad sep_conv", [&] {
    auto f = [](const std::vector<Tensor>& in) { return sep_conv(in[0], in[1], in[2], {1, 1}, {2, 1}, Padding::left); };
    return from_report("grad sep_conv", grad_check(probe_sum(f, seed), {{"x", rnd({1, 7, 3}, root.fork(1))},
                                                                     {"dw", rnd({3, 1, 3}, root.fork(2))},
                                                                     {"pw", rnd({3, 4}, root.fork(3))}}, {}));
  });
  guarded("grad layer_norm", [&] {
    auto f = [](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2], 1e-6); };
    return from_report("grad layer_norm", grad_check(probe_sum(f, seed), {{"x", rnd({2, 3, 5}, root.fork(4))},
                                                                       {"g", rnd({5}, root.fork(5))},
                                                                       {"b", rnd({5}, root.fork(6))}}, {}));
  });
  guarded("grad softmax_cross_entropy", [&] {
    auto f = [](const std::vector<Tensor>& in) {
      const std::vector<int> t{1, 0, 3};
      const std::vector<double> w{1.0, 0.5, 1.0};
      return softmax_cross_entropy(in[0], t, w);
    };
    return from_report("grad softmax_cross_entropy", grad_check(f, {{"logits", rnd({1, 3, 4}, root.fork(7))}}, {}));
  });

  GradCheckOptions block_opt;
  block_opt.rtol = 1e-3;
  guarded("grad conv_block", [&] {
    ConvBlockParams p = ConvBlockParams::init(3, 0.0, root.fork(8));
    auto inputs = named(p);
    inputs.insert(inputs.begin(), {"x", rnd({1, 5, 3}, root.fork(9))});
    auto f = [&](const std::vector<Tensor>& in) {
      return conv_block(rebuilt(p, in, 1), in[0], Padding::left, false, RngStream(0));
    };
    GradCheckOptions o = block_opt;
    o.max_coords = 24;
    return from_report("grad conv_block", grad_check(probe_sum(f, seed), inputs, o));
  });
  guarded("grad attention_block", [&] {
    AttentionParams p = AttentionParams::init(4, 2, 0.0, root.fork(10));
    auto inputs = named(p);
    inputs.insert(inputs.begin(), {"target", rnd({1, 3, 4}, root.fork(11))});
    inputs.insert(inputs.begin(), {"source", rnd({1, 4, 4}, root.fork(12))});
    auto f = [&](const std::vector<Tensor>& in) {
      return attention_block(rebuilt(p, in, 2), in[0], in[1], false, RngStream(0));
    };
    GradCheckOptions o = block_opt;
    o.max_coords = 16;
    return from_report("grad attention_block", grad_check(probe_sum(f, seed), inputs, o));
  });
  guarded("grad moe_layer", [&] {
    MoEParams p = MoEParams::init(4, 6, 4, 2, 0.1, root.fork(13));
    p.gate = rnd(p.gate.shape(), root.fork(14));
    auto inputs = named(p);
    inputs.insert(inputs.begin(), {"x", rnd({1, 5, 4}, root.fork(15))});
    auto f = [&](const std::vector<Tensor>& in) {
      MoEOutput o = moe_layer(rebuilt(p, in, 1), in[0], false, RngStream(0));
      return add(sum(mul(o.output, rnd(o.output.shape(), RngStream(seed).fork(99)))), o.balance_cost);
    };
    return from_report("grad moe_layer", grad_check(f, inputs, block_opt));
  });

  guarded("sep_conv naive oracle", [&] {
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      const RngStream r = root.fork("sepconv").fork(trial);
      const std::size_t l = 3 + r.bits_at(0) % 8, c = 1 + r.bits_at(1) % 4, h = 1 + r.bits_at(2) % 4,
                        f = 1 + r.bits_at(3) % 4, dil = 1 + r.bits_at(4) % 3;
      const bool left = r.bits_at(5) % 2 == 0;
      Tensor x = rnd({1, l, c}, r.fork(1)), dw = rnd({h, 1, c}, r.fork(2)), pw = rnd({c, f}, r.fork(3));
      Tensor y = sep_conv(x, dw, pw, {1, 1}, {dil, 1}, left ? Padding::left : Padding::same);
      const long span = static_cast<long>((h - 1) * dil), before = left ? span : span / 2;
      for (std::size_t t = 0; t < l; ++t)
        for (std::size_t o = 0; o < f; ++o) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            double d = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
              const long src = static_cast<long>(t) - before + static_cast<long>(j * dil);
              if (src >= 0 && src < static_cast<long>(l)) d += x[static_cast<std::size_t>(src) * c + ch] * dw[j * c + ch];
            }
            acc += d * pw[ch * f + o];
          }
          worst = std::max(worst, std::abs(acc - y[t * f + o]));
        }
    }
    return SelfTestResult{"sep_conv naive oracle", worst < 1e-9, "max abs diff " + std::to_string(worst)};
  });

  guarded("moe dense equivalence", [&] {
    MoEParams p = MoEParams::init(4, 5, 3, 3, 0.0, root.fork(16));
    p.gate = rnd(p.gate.shape(), root.fork(17));
    Tensor x = rnd({1, 4, 4}, root.fork(18));
    Tensor y = moe_layer(p, x, false, RngStream(0)).output;
    double worst = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
      double logits[3], z = 0.0;
      for (std::size_t e = 0; e < 3; ++e) {
        logits[e] = 0.0;
        for (std::size_t c = 0; c < 4; ++c) logits[e] += x[r * 4 + c] * p.gate[c * 3 + e];
      }
      const double mx = std::max({logits[0], logits[1], logits[2]});
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t o = 0; o < 4; ++o) {
        double out = 0.0;
        for (std::size_t e = 0; e < 3; ++e) {
          double eo = p.b2[e * 4 + o];
          for (std::size_t hd = 0; hd < 5; ++hd) {
            double hv = p.b1[e * 5 + hd];
            for (std::size_t c = 0; c < 4; ++c) hv += x[r * 4 + c] * p.w1[(e * 4 + c) * 5 + hd];
            eo += std::max(hv, 0.0) * p.w2[(e * 5 + hd) * 4 + o];
          }
          out += logits[e] / z * eo;
        }
        worst = std::max(worst, std::abs(out - y[r * 4 + o]) / std::max(1.0, std::abs(out)));
      }
    }
    return SelfTestResult{"moe dense equivalence", worst < 1e-9, "max rel diff " + std::to_string(worst)};
  });

  guarded("gating sparsity and balance", [&] {
    MoEParams p = MoEParams::init(6, 4, 8, 3, 1.0, root.fork(19));
    p.gate = rnd(p.gate.shape(), root.fork(20));
    p.noise = rnd(p.noise.shape(), root.fork(21));
    GateOutput g = moe_gate(p, rnd({2, 5, 6}, root.fork(22)), true, root.fork(23));
    bool ok = true;
    for (std::size_t r = 0; r < 10; ++r) {
      std::size_t nz = 0;
      double s = 0.0;
      for (std::size_t e = 0; e < 8; ++e) {
        nz += g.weights[r * 8 + e] != 0.0;
        s += g.weights[r * 8 + e];
      }
      ok = ok && nz == 3 && std::abs(s - 1.0) <= 1e-12;
    }
    ok = ok && cv_squared(Tensor({4}, {2, 2, 2, 2})).item() == 0.0;
    ok = ok && std::abs(cv_squared(Tensor({2}, {3, 1})).item() - 0.25) <= 1e-12;
    return SelfTestResult{"gating sparsity and balance", ok, ok ? "" : "row or balance check failed"};
  });

  guarded("timing signal", [&] {
    Tensor t0 = timing_signal(1, 6);
    bool ok = true;
    for (std::size_t i = 0; i < 6; ++i) ok = ok && t0[i] == (i % 2 ? 1.0 : 0.0);
    Tensor t = timing_signal(101, 4);
    ok = ok && std::abs(t[100 * 4 + 2] - std::sin(1.0)) <= 1e-12 && std::abs(t[100 * 4 + 3] - std::cos(1.0)) <= 1e-12;
    return SelfTestResult{"timing signal", ok, ""};
  });

  ModelParams model = ModelParams::init(small_model(), seed);
  model.language.softmax = rnd(model.language.softmax.shape(), root.fork(24));
  model.commands = rnd(model.commands.shape(), root.fork(25));

  guarded("mixer and decoder causality", [&] {
    std::size_t broken = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      const RngStream r = root.fork("causal").fork(trial);
      Tensor enc = rnd({1, 5, 8}, r.fork(1));
      Tensor tgt = rnd({1, 6, 8}, r.fork(2));
      const std::size_t t = r.bits_at(3) % 5;
      std::vector<double> v(tgt.values().begin(), tgt.values().end());
      for (std::size_t i = (t + 1) * 8; i < v.size(); ++i) v[i] += 1.0 + r.uniform_at(10 + i);
      Tensor tgt2({1, 6, 8}, std::move(v));
      Tensor m1 = mix(model, enc, tgt, false, r), m2 = mix(model, enc, tgt2, false, r);
      Tensor d1 = decode_body(model, enc, m1, false, r).output, d2 = decode_body(model, enc, m2, false, r).output;
      const std::size_t n = (t + 1) * 8;
      if (!same_bits(m1.values().first(n), m2.values().first(n)) || !same_bits(d1.values().first(n), d2.values().first(n)))
        ++broken;
    }
    return SelfTestResult{"mixer and decoder causality", broken == 0, std::to_string(broken) + " of 20 trials leaked"};
  });

  guarded("grad reduced decoder", [&] {
    ModelConfig c = small_model();
    c.depth = 4;
    c.mixer_blocks = 0;
    c.decoder_units = 1;
    c.decoder_moe_after = 1;
    c.encoder_blocks = 1;
    ModelParams p = ModelParams::init(c, seed + 1);
    std::vector<NamedInput> inputs;
    for (auto& a : p.decoder_attention)
      visit(a, "attention", [&](const std::string& n, const Tensor& t) { inputs.push_back({n, t}); });
    inputs.insert(inputs.begin(), {"state", rnd({1, 3, 4}, root.fork(26))});
    inputs.insert(inputs.begin(), {"encoded", rnd({1, 3, 4}, root.fork(27))});
    auto f = [&](const std::vector<Tensor>& in) {
      ModelParams q = p;
      std::size_t i = 2;
      for (auto& a : q.decoder_attention) visit(a, "", [&](const std::string&, Tensor& t) { t = in[i++]; });
      return decode_body(q, in[0], in[1], false, RngStream(0)).output;
    };
    GradCheckOptions o = block_opt;
    o.max_coords = 12;
    return from_report("grad reduced decoder", grad_check(probe_sum(f, seed), inputs, o));
  });

  guarded("incremental decoding consistency", [&] {
    const TaskRoute route{1, Modality::language, Modality::language, 4};
    Example ex;
    ex.task = 1;
    ex.input_ids = {5, 7, 9, 1};
    const auto out = generate(model, route, ex, 6);
    ex.target_ids = out;
    if (out.back() != model.language.term_id) ex.target_ids.push_back(model.language.term_id);
    ExampleForward f = forward_example(model, route, ex, false, RngStream(0));
    const std::size_t v = model.language.vocab();
    bool ok = true;
    for (std::size_t t = 0; t < out.size(); ++t) {
      auto row = f.logits.values().subspan(t * v, v);
      ok = ok && static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == out[t];
    }
    return SelfTestResult{"incremental decoding consistency", ok, ""};
  });

  guarded("checkpoint round trip", [&] {
    const auto path = std::filesystem::temp_directory_path() / ("mm_selftest_" + std::to_string(seed) + ".ckpt");
    save_checkpoint(model, path.string());
    ModelParams q = ModelParams::init(small_model(), seed + 7);
    assign_tensors(q, load_checkpoint(path.string()));
    std::filesystem::remove(path);
    auto a = named_tensors(model), b = named_tensors(q);
    bool ok = a.size() == b.size();
    for (std::size_t i = 0; ok && i < a.size(); ++i) ok = same_bits(a[i].value.values(), b[i].value.values());
    return SelfTestResult{"checkpoint round trip", ok, ""};
  });

  guarded("tokenizer and task splits", [&] {
    TaskSuite suite(seed, 32);
    bool ok = suite.vocab().size() == kDeskVocab;
    for (const auto& w : suite.all_words())
      ok = ok && encode_text(w, suite.vocab()).size() == 2 && decode_tokens(encode_text(w, suite.vocab()), suite.vocab()) == w;
    const std::size_t copy = suite.index_of("copy");
    for (std::uint64_t i = 0; i < 50; ++i) {
      ok = ok && !TaskSuite::is_dev_content(suite.example(copy, Split::train, seed, i));
      ok = ok && TaskSuite::is_dev_content(suite.example(copy, Split::dev, seed, i));
    }
    return SelfTestResult{"tokenizer and task splits", ok, ""};
  });

  return results;
}

}  // namespace mm
