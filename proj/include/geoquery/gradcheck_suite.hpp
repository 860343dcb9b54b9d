#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geoquery {

struct SuiteOptions {
  std::uint64_t seed = 0;
  int seeds = 20;          // random instances per operation
  double tolerance = 1e-4;
  /// Name of an operation whose analytic gradient is deliberately corrupted
  /// (negative control). Empty for a normal run.
  std::string broken_op;
};

struct OpCheck {
  std::string name;
  int seeds = 0;
  std::size_t checked = 0;  // gradient entries compared
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Names of every operation covered by the suite, in run order.
std::vector<std::string> gradcheck_ops();

/// Central-difference checks in 64-bit for every differentiable operation.
/// Deterministic given the options. Throws ConfigError for an unknown broken_op.
std::vector<OpCheck> run_gradcheck_suite(const SuiteOptions& options = {});

}  // namespace geoquery
