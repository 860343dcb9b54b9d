#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace geoquery {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat index across all checked tensors
  std::size_t checked = 0;
};

/// Central-difference verification of an analytical gradient.
///
/// Each entry of `params` is perturbed in place by +/- eps, `objective` is
/// re-evaluated, and the numeric derivative is compared to the matching
/// entry of `analytic`. The error per entry is
/// |analytic - numeric| / max(|numeric|, 1e-6); the maximum is returned.
/// Parameters are restored before returning.
GradCheckResult finite_difference_check(const std::function<double()>& objective,
                                        const std::vector<std::span<double>>& params,
                                        const std::vector<std::span<const double>>& analytic, double eps);

/// Convenience overload for a function of one flat vector.
GradCheckResult finite_difference_check(const std::function<double(std::span<const double>)>& objective,
                                        std::vector<double> x, std::span<const double> analytic, double eps);

}  // namespace geoquery
