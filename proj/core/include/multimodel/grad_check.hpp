#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "multimodel/tensor.hpp"

namespace mm {

struct GradCheckOptions {
  double rtol = 1e-4;
  double step = 1e-5;
  /// A coordinate that disagrees is retried with the step divided by 10,
  /// up to this many times; high curvature (layer norm over a nearly
  /// constant row) can defeat a single step.
  std::size_t refinements = 2;
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  /// Coordinates checked per parameter; 0 means all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// A coordinate whose forward and backward one-sided slopes differ by more
  /// than this (relative) straddles a kink (ReLU, max pool, top-k switch).
  /// When the central difference disagrees at such a coordinate, the analytic
  /// value must match one of the one-sided slopes instead.
  /// Zero disables the test.
  double kink_tol = 1e-2;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = false;
  std::string summary() const;
};

/// A function of named inputs to a scalar. Inputs arrive tracked on a tape
/// during the analytic pass and untracked during finite differences.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct NamedInput {
  std::string name;
  Tensor value;
};

/// Compares reverse-mode gradients against central differences for every input.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<NamedInput>& inputs, const GradCheckOptions& options);

/// Wraps a tensor-valued function into a scalar one: sum(f(x) * probe) with a
/// fixed random probe, so every output element contributes.
ScalarFn probe_sum(std::function<Tensor(const std::vector<Tensor>&)> f, std::uint64_t seed);

}  // namespace mm
