#include "multimodel/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "multimodel/tape.hpp"

namespace mm {

namespace kernels {

namespace {

template <std::size_t W>
inline void row_panel(const double* arow, const double* b, double* crow, std::size_t k, std::size_t n,
                      std::size_t j0) {
  double acc[W];
  for (std::size_t j = 0; j < W; ++j) acc[j] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * n + j0;
    for (std::size_t j = 0; j < W; ++j) acc[j] += av * brow[j];
  }
  for (std::size_t j = 0; j < W; ++j) crow[j0 + j] += acc[j];
}

}  // namespace

void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 64 <= n; j += 64) row_panel<64>(arow, b, crow, k, n, j);
    for (; j + 16 <= n; j += 16) row_panel<16>(arow, b, crow, k, n, j);
    for (; j + 8 <= n; j += 8) row_panel<8>(arow, b, crow, k, n, j);
    for (; j < n; ++j) row_panel<1>(arow, b, crow, k, n, j);
  }
}

void transpose(const double* in, double* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
}

}  // namespace kernels

namespace {

using Storage = std::shared_ptr<const std::vector<double>>;

Tensor make(Shape shape, std::vector<double> values) { return Tensor(std::move(shape), std::move(values)); }

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

/// True when `b` equals `a` or matches a suffix of it.
bool suffix_of(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined operand");
  require(suffix_of(a.shape(), b.shape()),
          std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
}

struct AxisGeometry {
  std::size_t in = 1, out = 1, kernel = 1, stride = 1, dilation = 1;
  std::ptrdiff_t pad = 0;
};

AxisGeometry axis_geometry(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation, bool left) {
  AxisGeometry g{in, (in + stride - 1) / stride, kernel, stride, dilation, 0};
  std::ptrdiff_t span = static_cast<std::ptrdiff_t>((kernel - 1) * dilation + 1);
  if (left) {
    g.pad = span - 1;
  } else {
    std::ptrdiff_t total = static_cast<std::ptrdiff_t>((g.out - 1) * stride) + span - static_cast<std::ptrdiff_t>(in);
    g.pad = std::max<std::ptrdiff_t>(total, 0) / 2;
  }
  return g;
}

/// Views rank-3 [B,L,C] as [B,L,1,C].
struct Spatial {
  std::size_t b, h, w, c;
};

Spatial spatial_of(const Tensor& x, const char* op) {
  if (x.rank() == 3) return {x.dim(0), x.dim(1), 1, x.dim(2)};
  require(x.rank() == 4, std::string(op) + ": expected [B,L,C] or [B,H,W,C], got " + shape_str(x.shape()));
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

Shape spatial_shape(const Tensor& like, std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
  if (like.rank() == 3) return {b, h, c};
  return {b, h, w, c};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "add");
  const std::size_t n = a.size(), inner = b.size();
  std::vector<double> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; i += inner)
    for (std::size_t j = 0; j < inner; ++j) out[i + j] = av[i + j] + bv[j];
  return Tape::record(make(a.shape(), std::move(out)), {&a, &b}, [inner](std::span<const double> g, GradSink& in) {
    if (auto ga = in(0); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = in(1); !gb.empty())
      for (std::size_t i = 0; i < g.size(); i += inner)
        for (std::size_t j = 0; j < inner; ++j) gb[j] += g[i + j];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "sub");
  const std::size_t n = a.size(), inner = b.size();
  std::vector<double> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; i += inner)
    for (std::size_t j = 0; j < inner; ++j) out[i + j] = av[i + j] - bv[j];
  return Tape::record(make(a.shape(), std::move(out)), {&a, &b}, [inner](std::span<const double> g, GradSink& in) {
    if (auto ga = in(0); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = in(1); !gb.empty())
      for (std::size_t i = 0; i < g.size(); i += inner)
        for (std::size_t j = 0; j < inner; ++j) gb[j] -= g[i + j];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "mul");
  const std::size_t n = a.size(), inner = b.size();
  std::vector<double> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; i += inner)
    for (std::size_t j = 0; j < inner; ++j) out[i + j] = av[i + j] * bv[j];
  return Tape::record(make(a.shape(), std::move(out)), {&a, &b},
                      [inner, sa = a.storage(), sb = b.storage()](std::span<const double> g, GradSink& in) {
                        const auto& av = *sa;
                        const auto& bv = *sb;
                        if (auto ga = in(0); !ga.empty())
                          for (std::size_t i = 0; i < g.size(); i += inner)
                            for (std::size_t j = 0; j < inner; ++j) ga[i + j] += g[i + j] * bv[j];
                        if (auto gb = in(1); !gb.empty())
                          for (std::size_t i = 0; i < g.size(); i += inner)
                            for (std::size_t j = 0; j < inner; ++j) gb[j] += g[i + j] * av[i + j];
                      });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return Tape::record(make(a.shape(), std::move(out)), {&a}, [factor](std::span<const double> g, GradSink& in) {
    auto ga = in(0);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return Tape::record(make(x.shape(), std::move(out)), {&x}, [sx = x.storage()](std::span<const double> g, GradSink& in) {
    auto gx = in(0);
    const auto& xv = *sx;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Tensor softplus(const Tensor& x) {
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(xv[i], 0.0) + std::log1p(std::exp(-std::abs(xv[i])));
  return Tape::record(make(x.shape(), std::move(out)), {&x}, [sx = x.storage()](std::span<const double> g, GradSink& in) {
    auto gx = in(0);
    const auto& xv = *sx;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (1.0 + std::exp(-xv[i]));
  });
}

Tensor softmax(const Tensor& x) {
  require(x.rank() >= 1, "softmax: needs at least one axis");
  const std::size_t c = x.shape().back();
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t r = 0; r < x.size(); r += c) {
    double mx = *std::max_element(xv.begin() + static_cast<std::ptrdiff_t>(r), xv.begin() + static_cast<std::ptrdiff_t>(r + c));
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += out[r + j] = std::exp(xv[r + j] - mx);
    for (std::size_t j = 0; j < c; ++j) out[r + j] /= total;
  }
  Tensor y = make(x.shape(), std::move(out));
  return Tape::record(y, {&x}, [c, sy = y.storage()](std::span<const double> g, GradSink& in) {
    auto gx = in(0);
    const auto& yv = *sy;
    for (std::size_t r = 0; r < g.size(); r += c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r + j] * yv[r + j];
      for (std::size_t j = 0; j < c; ++j) gx[r + j] += yv[r + j] * (g[r + j] - dot);
    }
  });
}

Tensor dropout(const Tensor& x, double rate, const RngStream& rng, bool train) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform_at(i) >= rate ? keep_scale : 0.0;
    out[i] = xv[i] * (*mask)[i];
  }
  return Tape::record(make(x.shape(), std::move(out)), {&x}, [mask](std::span<const double> g, GradSink& in) {
    auto gx = in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

Tensor depthwise_conv(const Tensor& x, const Tensor& kernel, Pair stride, Pair dilation, Padding padding) {
  const Spatial s = spatial_of(x, "depthwise_conv");
  require(kernel.rank() == 3, "depthwise_conv: kernel must be [h,w,C], got " + shape_str(kernel.shape()));
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1);
  require(kernel.dim(2) == s.c, "depthwise_conv: kernel has " + std::to_string(kernel.dim(2)) + " channels, input has " +
                                    std::to_string(s.c));
  require(x.rank() == 4 || kw == 1, "depthwise_conv: sequence input needs a [h,1,C] kernel");
  if (stride.h < 1 || stride.w < 1 || dilation.h < 1 || dilation.w < 1)
    throw std::invalid_argument("depthwise_conv: stride and dilation must be positive");

  const AxisGeometry gh = axis_geometry(s.h, kh, stride.h, dilation.h, padding == Padding::left);
  const AxisGeometry gw = axis_geometry(s.w, kw, stride.w, dilation.w, false);
  const std::size_t c = s.c;
  std::vector<double> out(s.b * gh.out * gw.out * c, 0.0);
  auto xv = x.values();
  auto kv = kernel.values();

  auto for_each_tap = [=](auto&& body) {
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t oh = 0; oh < gh.out; ++oh)
        for (std::size_t ow = 0; ow < gw.out; ++ow) {
          const std::size_t yo = ((b * gh.out + oh) * gw.out + ow) * c;
          for (std::size_t i = 0; i < kh; ++i) {
            std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * gh.stride + i * gh.dilation) - gh.pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t j = 0; j < kw; ++j) {
              std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * gw.stride + j * gw.dilation) - gw.pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const std::size_t xo = ((b * s.h + static_cast<std::size_t>(ih)) * s.w + static_cast<std::size_t>(iw)) * c;
              body(yo, xo, (i * kw + j) * c);
            }
          }
        }
  };

  double* y = out.data();
  for_each_tap([&](std::size_t yo, std::size_t xo, std::size_t ko) {
    for (std::size_t ch = 0; ch < c; ++ch) y[yo + ch] += xv[xo + ch] * kv[ko + ch];
  });

  Shape shape = spatial_shape(x, s.b, gh.out, gw.out, c);
  return Tape::record(make(std::move(shape), std::move(out)), {&x, &kernel},
                      [for_each_tap, c, sx = x.storage(), sk = kernel.storage()](std::span<const double> g, GradSink& in) {
                        auto gx = in(0);
                        auto gk = in(1);
                        const double* xv = sx->data();
                        const double* kv = sk->data();
                        if (!gx.empty())
                          for_each_tap([&](std::size_t yo, std::size_t xo, std::size_t ko) {
                            for (std::size_t ch = 0; ch < c; ++ch) gx[xo + ch] += g[yo + ch] * kv[ko + ch];
                          });
                        if (!gk.empty())
                          for_each_tap([&](std::size_t yo, std::size_t xo, std::size_t ko) {
                            for (std::size_t ch = 0; ch < c; ++ch) gk[ko + ch] += g[yo + ch] * xv[xo + ch];
                          });
                      });
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w) {
  require(x.rank() >= 1 && w.rank() == 2, "pointwise_conv: expected x[...,Cin] and w[Cin,Cout]");
  const std::size_t cin = w.dim(0), cout = w.dim(1);
  require(x.shape().back() == cin, "pointwise_conv: input depth " + std::to_string(x.shape().back()) +
                                       " does not match kernel " + shape_str(w.shape()));
  const std::size_t m = x.size() / cin;
  std::vector<double> out(m * cout, 0.0);
  kernels::gemm_acc(x.values().data(), w.values().data(), out.data(), m, cin, cout);
  Shape shape = x.shape();
  shape.back() = cout;
  return Tape::record(make(std::move(shape), std::move(out)), {&x, &w},
                      [m, cin, cout, sx = x.storage(), sw = w.storage()](std::span<const double> g, GradSink& in) {
                        if (auto gx = in(0); !gx.empty()) {
                          std::vector<double> wt(cin * cout);
                          kernels::transpose(sw->data(), wt.data(), cin, cout);
                          kernels::gemm_acc(g.data(), wt.data(), gx.data(), m, cout, cin);
                        }
                        if (auto gw = in(1); !gw.empty()) {
                          std::vector<double> xt(m * cin);
                          kernels::transpose(sx->data(), xt.data(), m, cin);
                          kernels::gemm_acc(xt.data(), g.data(), gw.data(), cin, m, cout);
                        }
                      });
}

Tensor sep_conv(const Tensor& x, const Tensor& depthwise, const Tensor& pointwise, Pair stride, Pair dilation,
                Padding padding) {
  return pointwise_conv(depthwise_conv(x, depthwise, stride, dilation, padding), pointwise);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  require(x.rank() >= 1, "layer_norm: needs at least one axis");
  const std::size_t c = x.shape().back();
  require(gain.rank() == 1 && gain.dim(0) == c && bias.rank() == 1 && bias.dim(0) == c,
          "layer_norm: gain and bias must be [" + std::to_string(c) + "]");
  const std::size_t rows = x.size() / c;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * inv;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  }
  return Tape::record(make(x.shape(), std::move(out)), {&x, &gain, &bias},
                      [c, rows, xhat, inv_std, sg = gain.storage()](std::span<const double> g, GradSink& in) {
                        const auto& h = *xhat;
                        const auto& gv = *sg;
                        if (auto gx = in(0); !gx.empty()) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t j = 0; j < c; ++j) {
                              const double gh = g[r * c + j] * gv[j];
                              m1 += gh;
                              m2 += gh * h[r * c + j];
                            }
                            m1 /= static_cast<double>(c);
                            m2 /= static_cast<double>(c);
                            const double inv = (*inv_std)[r];
                            for (std::size_t j = 0; j < c; ++j)
                              gx[r * c + j] += inv * (g[r * c + j] * gv[j] - m1 - h[r * c + j] * m2);
                          }
                        }
                        if (auto gg = in(1); !gg.empty())
                          for (std::size_t i = 0; i < g.size(); ++i) gg[i % c] += g[i] * h[i];
                        if (auto gb = in(2); !gb.empty())
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
                      });
}

Tensor max_pool(const Tensor& x, Pair window, Pair stride) {
  require(x.rank() == 4, "max_pool: expected [B,H,W,C], got " + shape_str(x.shape()));
  if (stride.h < 1 || stride.w < 1 || window.h < 1 || window.w < 1)
    throw std::invalid_argument("max_pool: window and stride must be positive");
  const Spatial s = spatial_of(x, "max_pool");
  const AxisGeometry gh = axis_geometry(s.h, window.h, stride.h, 1, false);
  const AxisGeometry gw = axis_geometry(s.w, window.w, stride.w, 1, false);
  const std::size_t c = s.c;
  const std::size_t n_out = s.b * gh.out * gw.out * c;
  std::vector<double> out(n_out, -std::numeric_limits<double>::infinity());
  auto argmax = std::make_shared<std::vector<std::size_t>>(n_out, 0);
  auto xv = x.values();
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t oh = 0; oh < gh.out; ++oh)
      for (std::size_t ow = 0; ow < gw.out; ++ow) {
        const std::size_t yo = ((b * gh.out + oh) * gw.out + ow) * c;
        for (std::size_t i = 0; i < window.h; ++i) {
          std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride.h + i) - gh.pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t j = 0; j < window.w; ++j) {
            std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride.w + j) - gw.pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.w)) continue;
            const std::size_t xo = ((b * s.h + static_cast<std::size_t>(ih)) * s.w + static_cast<std::size_t>(iw)) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              if (xv[xo + ch] > out[yo + ch]) {
                out[yo + ch] = xv[xo + ch];
                (*argmax)[yo + ch] = xo + ch;
              }
            }
          }
        }
      }
  return Tape::record(make({s.b, gh.out, gw.out, c}, std::move(out)), {&x},
                      [argmax](std::span<const double> g, GradSink& in) {
                        auto gx = in(0);
                        for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
                      });
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.rank() >= 2, "global_avg_pool: expected [B,...,C]");
  const std::size_t b = x.dim(0), c = x.shape().back();
  const std::size_t cells = x.size() / (b * c);
  const double inv = 1.0 / static_cast<double>(cells);
  std::vector<double> out(b * c, 0.0);
  auto xv = x.values();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t p = 0; p < cells; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) out[n * c + ch] += xv[(n * cells + p) * c + ch];
  for (double& v : out) v *= inv;
  return Tape::record(make({b, c}, std::move(out)), {&x}, [b, c, cells, inv](std::span<const double> g, GradSink& in) {
    auto gx = in(0);
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t p = 0; p < cells; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) gx[(n * cells + p) * c + ch] += g[n * c + ch] * inv;
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, const Shape& ids_shape) {
  require(table.rank() == 2, "embedding_lookup: table must be [V,C]");
  require(shape_size(ids_shape) == ids.size(), "embedding_lookup: ids do not match their shape");
  const std::size_t v = table.dim(0), c = table.dim(1);
  auto index = std::make_shared<std::vector<std::size_t>>(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(v));
    (*index)[i] = static_cast<std::size_t>(ids[i]);
  }
  std::vector<double> out(ids.size() * c);
  auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>((*index)[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  Shape shape = ids_shape;
  shape.push_back(c);
  return Tape::record(make(std::move(shape), std::move(out)), {&table}, [index, c](std::span<const double> g, GradSink& in) {
    auto gt = in(0);
    for (std::size_t i = 0; i < index->size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gt[(*index)[i] * c + j] += g[i * c + j];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  return pointwise_conv(a, b);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  require(!parts.empty(), "concat: nothing to concatenate");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      require(i == axis || s[i] == first[i], "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
    extents.push_back(s[axis]);
    total += s[axis];
  }
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    const std::size_t block = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset * inner));
    offset += extents[p];
  }
  Shape shape = first;
  shape[axis] = total;
  std::vector<const Tensor*> inputs;
  for (const Tensor& p : parts) inputs.push_back(&p);
  return Tape::record(make(std::move(shape), std::move(out)), inputs,
                      [extents, outer, inner, total](std::span<const double> g, GradSink& in) {
                        std::size_t offset = 0;
                        for (std::size_t p = 0; p < extents.size(); ++p) {
                          const std::size_t block = extents[p] * inner;
                          if (auto gp = in(p); !gp.empty())
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t i = 0; i < block; ++i)
                                gp[o * block + i] += g[o * total * inner + offset * inner + i];
                          offset += extents[p];
                        }
                      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_size(shape) == x.size(), "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor y(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  return Tape::record(std::move(y), {&x}, [](std::span<const double> g, GradSink& in) {
    auto gx = in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < x.rank() && begin < end && end <= x.dim(axis),
          "slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") on " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t extent = x.dim(axis), len = end - begin;
  std::vector<double> out(outer * len * inner);
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * extent + begin) * inner), len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  Shape shape = x.shape();
  shape[axis] = len;
  return Tape::record(make(std::move(shape), std::move(out)), {&x},
                      [outer, inner, extent, begin, len](std::span<const double> g, GradSink& in) {
                        auto gx = in(0);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < len * inner; ++i) gx[(o * extent + begin) * inner + i] += g[o * len * inner + i];
                      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return Tape::record(Tensor::scalar(total), {&x}, [](std::span<const double> g, GradSink& in) {
    auto gx = in(0);
    for (double& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_rows(const Tensor& x) {
  require(x.rank() >= 1, "sum_rows: needs at least one axis");
  const std::size_t c = x.shape().back();
  std::vector<double> out(c, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < x.size(); ++i) out[i % c] += xv[i];
  return Tape::record(make({c}, std::move(out)), {&x}, [c](std::span<const double> g, GradSink& in) {
    auto gx = in(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i % c];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const double> weights) {
  require(logits.rank() >= 1, "softmax_cross_entropy: needs at least one axis");
  const std::size_t v = logits.shape().back();
  const std::size_t rows = logits.size() / v;
  require(targets.size() == rows, "softmax_cross_entropy: need one target per row");
  require(weights.empty() || weights.size() == rows, "softmax_cross_entropy: need one weight per row");
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  auto lv = logits.values();
  std::vector<double> w(rows, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(targets[r]) + " out of range");
    const double* row = lv.data() + r * v;
    double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (*probs)[r * v + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] /= z;
    if (w[r] != 0.0) total += w[r] * (std::log(z) + mx - row[targets[r]]);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return Tape::record(Tensor::scalar(total), {&logits},
                      [probs, tgt = std::move(tgt), w = std::move(w), v](std::span<const double> g, GradSink& in) {
                        auto gl = in(0);
                        for (std::size_t r = 0; r < tgt.size(); ++r) {
                          if (w[r] == 0.0) continue;
                          const double s = g[0] * w[r];
                          for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += s * (*probs)[r * v + j];
                          gl[r * v + static_cast<std::size_t>(tgt[r])] -= s;
                        }
                      });
}

}  // namespace mm
