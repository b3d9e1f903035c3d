#include "multimodel/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "multimodel/tape.hpp"

namespace mm {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, const RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (2.0 * rng.uniform_at(i) - 1.0) * limit;
  return Tensor(std::move(shape), std::move(v));
}

ConvStepParams ConvStepParams::init(Pair kernel, std::size_t in_depth, std::size_t filters, Pair stride,
                                    Pair dilation, const RngStream& rng) {
  if (kernel.h % 2 == 0 || kernel.w % 2 == 0) throw std::invalid_argument("conv step kernels must have odd extents");
  const std::size_t taps = kernel.h * kernel.w;
  ConvStepParams p;
  p.depthwise = glorot({kernel.h, kernel.w, in_depth}, taps, taps, rng.fork("depthwise"));
  p.pointwise = glorot({in_depth, filters}, in_depth, filters, rng.fork("pointwise"));
  p.gain = Tensor::full({filters}, 1.0);
  p.bias = Tensor::zeros({filters});
  p.stride = stride;
  p.dilation = dilation;
  return p;
}

ConvBlockParams ConvBlockParams::init(std::size_t depth, double dropout, const RngStream& rng) {
  static constexpr std::array<std::size_t, 4> kHeights{3, 3, 15, 15};
  static constexpr std::array<std::size_t, 4> kDilations{1, 1, 1, 8};
  ConvBlockParams p;
  for (std::size_t i = 0; i < 4; ++i)
    p.steps[i] = ConvStepParams::init({kHeights[i], 1}, depth, depth, {1, 1}, {kDilations[i], 1}, rng.fork(i));
  p.dropout = dropout;
  return p;
}

AttentionParams AttentionParams::init(std::size_t depth, std::size_t heads, double dropout, const RngStream& rng) {
  if (heads == 0 || depth % heads != 0) throw std::invalid_argument("attention depth must be divisible by heads");
  AttentionParams p;
  p.mixing[0] = ConvBlockParams::init(depth, dropout, rng.fork("mix0"));
  p.mixing[1] = ConvBlockParams::init(depth, dropout, rng.fork("mix1"));
  p.query = glorot({depth, depth}, depth, depth, rng.fork("query"));
  p.key = glorot({depth, depth}, depth, depth, rng.fork("key"));
  p.value = glorot({depth, depth}, depth, depth, rng.fork("value"));
  p.heads = heads;
  return p;
}

MoEParams MoEParams::init(std::size_t depth, std::size_t hidden, std::size_t experts, std::size_t k,
                          double balance_weight, const RngStream& rng) {
  if (k < 1 || k > experts) throw std::invalid_argument("MoE needs 1 <= k <= experts");
  MoEParams p;
  p.gate = Tensor::zeros({depth, experts});
  p.noise = Tensor::zeros({depth, experts});
  p.w1 = glorot({experts, depth, hidden}, depth, hidden, rng.fork("w1"));
  p.b1 = Tensor::zeros({experts, hidden});
  p.w2 = glorot({experts, hidden, depth}, hidden, depth, rng.fork("w2"));
  p.b2 = Tensor::zeros({experts, depth});
  p.k = k;
  p.balance_weight = balance_weight;
  return p;
}

Tensor conv_step(const ConvStepParams& p, const Tensor& x, Padding padding) {
  return layer_norm(sep_conv(relu(x), p.depthwise, p.pointwise, p.stride, p.dilation, padding), p.gain, p.bias, p.eps);
}

Tensor conv_block(const ConvBlockParams& p, const Tensor& x, Padding padding, bool train, const RngStream& rng) {
  if (x.shape().back() != p.depth())
    throw ShapeError("conv_block: input depth " + std::to_string(x.shape().back()) + " but block depth " +
                     std::to_string(p.depth()));
  Tensor h1 = conv_step(p.steps[0], x, padding);
  Tensor h2 = add(x, conv_step(p.steps[1], h1, padding));
  Tensor h3 = conv_step(p.steps[2], h2, padding);
  Tensor h4 = add(x, conv_step(p.steps[3], h3, padding));
  return dropout(h4, p.dropout, rng, train);
}

Tensor timing_signal(std::size_t length, std::size_t depth) {
  if (depth % 2 != 0) throw std::invalid_argument("timing_signal: depth must be even");
  std::vector<double> v(length * depth);
  for (std::size_t pair = 0; pair < depth / 2; ++pair) {
    const double delta = std::pow(1e4, -static_cast<double>(2 * pair) / static_cast<double>(depth));
    for (std::size_t t = 0; t < length; ++t) {
      const double angle = static_cast<double>(t) * delta;
      v[t * depth + 2 * pair] = std::sin(angle);
      v[t * depth + 2 * pair + 1] = std::cos(angle);
    }
  }
  return Tensor({length, depth}, std::move(v));
}

namespace {

struct AttnDims {
  std::size_t b, lt, ls, c, heads, d;
};

AttnDims attn_dims(const Tensor& q, const Tensor& k, std::size_t heads) {
  if (q.rank() != 3 || k.rank() != 3 || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2))
    throw ShapeError("attention: q " + shape_str(q.shape()) + " and k " + shape_str(k.shape()) + " disagree");
  if (heads == 0 || q.dim(2) % heads != 0)
    throw ShapeError("attention: depth " + std::to_string(q.dim(2)) + " not divisible by " + std::to_string(heads) +
                     " heads");
  return {q.dim(0), q.dim(1), k.dim(1), q.dim(2), heads, q.dim(2) / heads};
}

std::vector<double> attention_probs(const AttnDims& a, std::span<const double> qv, std::span<const double> kv) {
  const double sc = 1.0 / std::sqrt(static_cast<double>(a.d));
  std::vector<double> probs(a.b * a.heads * a.lt * a.ls);
  for (std::size_t b = 0; b < a.b; ++b)
    for (std::size_t h = 0; h < a.heads; ++h)
      for (std::size_t i = 0; i < a.lt; ++i) {
        double* row = probs.data() + ((b * a.heads + h) * a.lt + i) * a.ls;
        const double* qi = qv.data() + (b * a.lt + i) * a.c + h * a.d;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < a.ls; ++j) {
          const double* kj = kv.data() + (b * a.ls + j) * a.c + h * a.d;
          double s = 0.0;
          for (std::size_t x = 0; x < a.d; ++x) s += qi[x] * kj[x];
          row[j] = s * sc;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < a.ls; ++j) z += row[j] = std::exp(row[j] - mx);
        for (std::size_t j = 0; j < a.ls; ++j) row[j] /= z;
      }
  return probs;
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t heads) {
  const AttnDims a = attn_dims(q, k, heads);
  return Tensor({a.b, a.heads, a.lt, a.ls}, attention_probs(a, q.values(), k.values()));
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  const AttnDims a = attn_dims(q, k, heads);
  if (v.shape() != k.shape()) throw ShapeError("attention: values must match keys in shape");
  auto probs = std::make_shared<std::vector<double>>(attention_probs(a, q.values(), k.values()));
  std::vector<double> out(a.b * a.lt * a.c, 0.0);
  auto vv = v.values();
  for (std::size_t b = 0; b < a.b; ++b)
    for (std::size_t h = 0; h < a.heads; ++h)
      for (std::size_t i = 0; i < a.lt; ++i) {
        const double* p = probs->data() + ((b * a.heads + h) * a.lt + i) * a.ls;
        double* oi = out.data() + (b * a.lt + i) * a.c + h * a.d;
        for (std::size_t j = 0; j < a.ls; ++j) {
          const double* vj = vv.data() + (b * a.ls + j) * a.c + h * a.d;
          for (std::size_t x = 0; x < a.d; ++x) oi[x] += p[j] * vj[x];
        }
      }
  return Tape::record(
      Tensor({a.b, a.lt, a.c}, std::move(out)), {&q, &k, &v},
      [a, probs, sq = q.storage(), sk = k.storage(), sv = v.storage()](std::span<const double> g, GradSink& in) {
        auto gq = in(0);
        auto gk = in(1);
        auto gv = in(2);
        const double sc = 1.0 / std::sqrt(static_cast<double>(a.d));
        std::vector<double> dp(a.ls);
        for (std::size_t b = 0; b < a.b; ++b)
          for (std::size_t h = 0; h < a.heads; ++h)
            for (std::size_t i = 0; i < a.lt; ++i) {
              const double* p = probs->data() + ((b * a.heads + h) * a.lt + i) * a.ls;
              const double* gi = g.data() + (b * a.lt + i) * a.c + h * a.d;
              double dot = 0.0;
              for (std::size_t j = 0; j < a.ls; ++j) {
                const double* vj = sv->data() + (b * a.ls + j) * a.c + h * a.d;
                double s = 0.0;
                for (std::size_t x = 0; x < a.d; ++x) s += gi[x] * vj[x];
                dp[j] = s;
                dot += p[j] * s;
                if (!gv.empty()) {
                  double* gvj = gv.data() + (b * a.ls + j) * a.c + h * a.d;
                  for (std::size_t x = 0; x < a.d; ++x) gvj[x] += p[j] * gi[x];
                }
              }
              const double* qi = sq->data() + (b * a.lt + i) * a.c + h * a.d;
              for (std::size_t j = 0; j < a.ls; ++j) {
                const double ds = p[j] * (dp[j] - dot) * sc;
                const std::size_t ko = (b * a.ls + j) * a.c + h * a.d;
                if (!gq.empty()) {
                  double* gqi = gq.data() + (b * a.lt + i) * a.c + h * a.d;
                  for (std::size_t x = 0; x < a.d; ++x) gqi[x] += ds * (*sk)[ko + x];
                }
                if (!gk.empty())
                  for (std::size_t x = 0; x < a.d; ++x) gk[ko + x] += ds * qi[x];
              }
            }
      });
}

Tensor attention_target_mix(const AttentionParams& p, const Tensor& target, bool train, const RngStream& rng) {
  if (target.rank() != 3) throw ShapeError("attention_block: target must be [B,L,C]");
  Tensor t = add(target, timing_signal(target.dim(1), target.dim(2)));
  t = conv_block(p.mixing[0], t, Padding::left, train, rng.fork(0));
  return conv_block(p.mixing[1], t, Padding::left, train, rng.fork(1));
}

Tensor attention_block(const AttentionParams& p, const Tensor& source, const Tensor& target, bool train,
                       const RngStream& rng) {
  if (source.rank() != 3 || source.dim(2) != target.dim(2))
    throw ShapeError("attention_block: source " + shape_str(source.shape()) + " and target " +
                     shape_str(target.shape()) + " must share depth");
  if (p.heads == 0 || p.depth() % p.heads != 0) throw ShapeError("attention_block: depth not divisible by heads");
  Tensor mixed = attention_target_mix(p, target, train, rng);
  Tensor q = pointwise_conv(mixed, p.query);
  Tensor k = pointwise_conv(source, p.key);
  Tensor v = pointwise_conv(source, p.value);
  return multihead_attention(q, k, v, p.heads);
}

Tensor topk_softmax(const Tensor& logits, std::size_t k) {
  const std::size_t e = logits.shape().back();
  if (k < 1 || k > e) throw std::invalid_argument("topk_softmax: k must lie in [1, experts]");
  const std::size_t rows = logits.size() / e;
  auto lv = logits.values();
  std::vector<double> out(logits.size(), 0.0);
  std::vector<std::size_t> order(e);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = lv.data() + r * e;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    const double mx = row[order[0]];
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += out[r * e + order[i]] = std::exp(row[order[i]] - mx);
    for (std::size_t i = 0; i < k; ++i) out[r * e + order[i]] /= z;
  }
  Tensor w(logits.shape(), std::move(out));
  return Tape::record(w, {&logits}, [e, sw = w.storage()](std::span<const double> g, GradSink& in) {
    auto gl = in(0);
    const auto& wv = *sw;
    for (std::size_t r = 0; r < g.size(); r += e) {
      double dot = 0.0;
      for (std::size_t j = 0; j < e; ++j) dot += wv[r + j] * g[r + j];
      for (std::size_t j = 0; j < e; ++j)
        if (wv[r + j] != 0.0) gl[r + j] += wv[r + j] * (g[r + j] - dot);
    }
  });
}

GateOutput moe_gate(const MoEParams& p, const Tensor& x, bool train, const RngStream& rng) {
  const std::size_t c = p.depth();
  if (x.shape().back() != c) throw ShapeError("moe_gate: input depth mismatch");
  Tensor flat = reshape(x, {x.size() / c, c});
  Tensor logits = matmul(flat, p.gate);
  if (train) {
    std::vector<double> eps(logits.size());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal_at(i);
    Tensor scale_by = softplus(matmul(flat, p.noise));
    logits = add(logits, mul(scale_by, Tensor(logits.shape(), std::move(eps))));
  }
  Tensor weights = topk_softmax(logits, p.k);
  Tensor importance = sum_rows(weights);
  Shape shape = x.shape();
  shape.back() = p.experts();
  return {reshape(weights, shape), importance};
}

Tensor moe_experts(const Tensor& x, const Tensor& weights, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                   const Tensor& b2) {
  if (x.rank() != 2 || weights.rank() != 2 || weights.dim(0) != x.dim(0))
    throw ShapeError("moe_experts: expected x[N,C] and weights[N,E]");
  const std::size_t n = x.dim(0), c = x.dim(1), e = weights.dim(1), hid = w1.dim(2);
  if (w1.shape() != Shape{e, c, hid} || b1.shape() != Shape{e, hid} || w2.shape() != Shape{e, hid, c} ||
      b2.shape() != Shape{e, c})
    throw ShapeError("moe_experts: expert weight shapes disagree");

  struct Routed {
    std::vector<std::size_t> rows;
    std::vector<double> input;   // [n_e, C]
    std::vector<double> hidden;  // relu output [n_e, H]
    std::vector<double> output;  // [n_e, C]
  };
  auto routed = std::make_shared<std::vector<Routed>>(e);
  auto xv = x.values();
  auto wv = weights.values();
  std::vector<double> out(n * c, 0.0);
  for (std::size_t ex = 0; ex < e; ++ex) {
    Routed& r = (*routed)[ex];
    for (std::size_t row = 0; row < n; ++row)
      if (wv[row * e + ex] != 0.0) r.rows.push_back(row);
    if (r.rows.empty()) continue;
    const std::size_t m = r.rows.size();
    r.input.resize(m * c);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r.rows[i] * c), c, r.input.begin() + static_cast<std::ptrdiff_t>(i * c));
    r.hidden.assign(m * hid, 0.0);
    kernels::gemm_acc(r.input.data(), w1.values().data() + ex * c * hid, r.hidden.data(), m, c, hid);
    const double* bias1 = b1.values().data() + ex * hid;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < hid; ++j) {
        double& h = r.hidden[i * hid + j];
        h = std::max(h + bias1[j], 0.0);
      }
    r.output.assign(m * c, 0.0);
    kernels::gemm_acc(r.hidden.data(), w2.values().data() + ex * hid * c, r.output.data(), m, hid, c);
    const double* bias2 = b2.values().data() + ex * c;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) r.output[i * c + j] += bias2[j];
    for (std::size_t i = 0; i < m; ++i) {
      const double w = wv[r.rows[i] * e + ex];
      for (std::size_t j = 0; j < c; ++j) out[r.rows[i] * c + j] += w * r.output[i * c + j];
    }
  }
  return Tape::record(
      Tensor({n, c}, std::move(out)), {&x, &weights, &w1, &b1, &w2, &b2},
      [routed, n, c, e, hid, sw = weights.storage(), sw1 = w1.storage(), sw2 = w2.storage()](
          std::span<const double> g, GradSink& in) {
        auto gx = in(0);
        auto gw = in(1);
        auto gw1 = in(2);
        auto gb1 = in(3);
        auto gw2 = in(4);
        auto gb2 = in(5);
        const auto& wv = *sw;
        for (std::size_t ex = 0; ex < e; ++ex) {
          const Routed& r = (*routed)[ex];
          if (r.rows.empty()) continue;
          const std::size_t m = r.rows.size();
          std::vector<double> gout(m * c);
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t row = r.rows[i];
            const double w = wv[row * e + ex];
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              gout[i * c + j] = w * g[row * c + j];
              dot += g[row * c + j] * r.output[i * c + j];
            }
            if (!gw.empty()) gw[row * e + ex] += dot;
          }
          if (!gb2.empty())
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < c; ++j) gb2[ex * c + j] += gout[i * c + j];
          if (!gw2.empty()) {
            std::vector<double> ht(hid * m);
            kernels::transpose(r.hidden.data(), ht.data(), m, hid);
            kernels::gemm_acc(ht.data(), gout.data(), gw2.data() + ex * hid * c, hid, m, c);
          }
          // d hidden = gout * W2^T, masked by the ReLU.
          std::vector<double> w2t(c * hid);
          kernels::transpose(sw2->data() + ex * hid * c, w2t.data(), hid, c);
          std::vector<double> gh(m * hid, 0.0);
          kernels::gemm_acc(gout.data(), w2t.data(), gh.data(), m, c, hid);
          for (std::size_t i = 0; i < m * hid; ++i)
            if (r.hidden[i] <= 0.0) gh[i] = 0.0;
          if (!gb1.empty())
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < hid; ++j) gb1[ex * hid + j] += gh[i * hid + j];
          if (!gw1.empty()) {
            std::vector<double> xt(c * m);
            kernels::transpose(r.input.data(), xt.data(), m, c);
            kernels::gemm_acc(xt.data(), gh.data(), gw1.data() + ex * c * hid, c, m, hid);
          }
          if (!gx.empty()) {
            std::vector<double> w1t(hid * c);
            kernels::transpose(sw1->data() + ex * c * hid, w1t.data(), c, hid);
            std::vector<double> gin(m * c, 0.0);
            kernels::gemm_acc(gh.data(), w1t.data(), gin.data(), m, hid, c);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < c; ++j) gx[r.rows[i] * c + j] += gin[i * c + j];
          }
        }
        (void)n;
      });
}

Tensor cv_squared(const Tensor& v) {
  const std::size_t n = v.size();
  auto vv = v.values();
  double mu = 0.0;
  for (double x : vv) mu += x;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double x : vv) var += (x - mu) * (x - mu);
  var /= static_cast<double>(n);
  const double cv2 = mu == 0.0 ? 0.0 : var / (mu * mu);
  return Tape::record(Tensor::scalar(cv2), {&v}, [n, mu, var, sv = v.storage()](std::span<const double> g, GradSink& in) {
    if (mu == 0.0) return;
    auto gv = in(0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = 2.0 * ((*sv)[i] - mu) * inv_n / (mu * mu) - 2.0 * var / (mu * mu * mu) * inv_n;
      gv[i] += g[0] * d;
    }
  });
}

MoEOutput moe_layer(const MoEParams& p, const Tensor& x, bool train, const RngStream& rng) {
  const std::size_t c = p.depth();
  GateOutput gate = moe_gate(p, x, train, rng);
  Tensor flat = reshape(x, {x.size() / c, c});
  Tensor weights = reshape(gate.weights, {x.size() / c, p.experts()});
  Tensor y = moe_experts(flat, weights, p.w1, p.b1, p.w2, p.b2);
  Tensor cost = scale(cv_squared(gate.importance), p.balance_weight);
  return {reshape(y, x.shape()), gate.importance, cost};
}

}  // namespace mm
