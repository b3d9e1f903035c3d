#include "multimodel/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "multimodel/ops.hpp"
#include "multimodel/rng.hpp"
#include "multimodel/tape.hpp"

namespace mm {

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  out << (passed ? "pass" : "FAIL") << " max_rel=" << max_rel_error;
  for (const auto& p : params) {
    out << "\n  " << p.name << ": " << p.max_rel_error << " over " << p.checked;
    if (p.kinks) out << " (" << p.kinks << " at kinks)";
  }
  return out.str();
}

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, RngStream& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (max_coords == 0 || max_coords >= n) return all;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < max_coords; ++i) std::swap(all[i], all[i + rng.next_below(n - i)]);
  all.resize(max_coords);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<NamedInput>& inputs, const GradCheckOptions& options) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in.value, in.name));
  Tensor loss = f(leaves);
  Gradients grads = tape.backward(loss);

  std::vector<Tensor> plain;
  plain.reserve(inputs.size());
  for (const auto& in : inputs) plain.push_back(in.value.detach());

  const double base_value = options.kink_tol > 0.0 ? f(plain).item() : 0.0;
  auto rel = [&](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), options.floor}); };

  GradCheckReport report;
  RngStream rng(options.seed);
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    ParamCheck check{inputs[p].name, 0.0, 0};
    const Tensor base = plain[p];
    auto analytic = grads[p].values();
    for (std::size_t i : pick_coords(base.size(), options.max_coords, rng)) {
      std::vector<double> values(base.values().begin(), base.values().end());
      double err = std::numeric_limits<double>::infinity();
      bool kink = false;
      double step = options.step;
      for (std::size_t level = 0; level <= options.refinements && err >= options.rtol; ++level, step /= 10.0) {
        values[i] = base[i] + step;
        plain[p] = Tensor(base.shape(), values);
        const double up = f(plain).item();
        values[i] = base[i] - step;
        plain[p] = Tensor(base.shape(), values);
        const double down = f(plain).item();
        values[i] = base[i];
        double e = rel(analytic[i], (up - down) / (2.0 * step));
        if (options.kink_tol > 0.0 && e >= options.rtol) {
          const double fwd = (up - base_value) / step;
          const double bwd = (base_value - down) / step;
          if (rel(fwd, bwd) > options.kink_tol) {
            e = std::min({e, rel(analytic[i], fwd), rel(analytic[i], bwd)});
            kink = true;
          }
        }
        err = std::min(err, e);
      }
      check.kinks += kink && err < options.rtol;
      check.max_rel_error = std::max(check.max_rel_error, err);
      ++check.checked;
    }
    plain[p] = base;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  report.passed = report.max_rel_error < options.rtol;
  return report;
}

ScalarFn probe_sum(std::function<Tensor(const std::vector<Tensor>&)> f, std::uint64_t seed) {
  return [f = std::move(f), seed](const std::vector<Tensor>& in) {
    Tensor y = f(in);
    RngStream rng(seed);
    std::vector<double> probe(y.size());
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = rng.uniform_at(i) * 2.0 - 1.0;
    return sum(mul(y, Tensor(y.shape(), std::move(probe))));
  };
}

}  // namespace mm
