#include "geoquery/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "geoquery/error.hpp"

namespace geoquery {

GradCheckResult finite_difference_check(const std::function<double()>& objective,
                                        const std::vector<std::span<double>>& params,
                                        const std::vector<std::span<const double>>& analytic, double eps) {
  if (params.size() != analytic.size()) throw ShapeError("finite_difference_check: tensor count mismatch");
  GradCheckResult result;
  std::size_t flat = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != analytic[t].size()) throw ShapeError("finite_difference_check: tensor size mismatch");
    for (std::size_t i = 0; i < params[t].size(); ++i, ++flat) {
      double& x = params[t][i];
      const double saved = x;
      x = saved + eps;
      const double up = objective();
      x = saved - eps;
      const double down = objective();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      double err = std::abs(analytic[t][i] - numeric) / std::max(std::abs(numeric), 1e-6);
      if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_index = flat;
      }
      ++result.checked;
    }
  }
  return result;
}

GradCheckResult finite_difference_check(const std::function<double(std::span<const double>)>& objective,
                                        std::vector<double> x, std::span<const double> analytic, double eps) {
  std::vector<std::span<double>> params{std::span<double>(x)};
  std::vector<std::span<const double>> grads{analytic};
  return finite_difference_check([&] { return objective(std::span<const double>(x)); }, params, grads, eps);
}

}  // namespace geoquery
