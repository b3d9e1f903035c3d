#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mm {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Invariant suite on small random instances: gradient checks, causality,
/// oracle equivalences, gating invariants, decoding consistency and file
/// round trips. `on_result` sees each check as it finishes.
std::vector<SelfTestResult> run_selftest(std::uint64_t seed,
                                         const std::function<void(const SelfTestResult&)>& on_result = {});

}  // namespace mm
