#ifndef FEDLITE_TESTS_GRADIENT_CHECK_H_
#define FEDLITE_TESTS_GRADIENT_CHECK_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace fedlite::testing_util {

// Central finite differences of `loss` with respect to every entry of
// `params`. Only needs the loss, never a gradient.
inline std::vector<double> numeric_gradient(
    std::vector<double>& params, const std::function<double()>& loss,
    double step = 1e-6) {
  std::vector<double> grad(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss();
    params[i] = saved - step;
    const double down = loss();
    params[i] = saved;
    grad[i] = (up - down) / (2 * step);
  }
  return grad;
}

// |a - n| / max(|a|, |n|). The scale is floored at 1e-6 so components that
// are numerically zero are judged against difference noise, not 0/0.
inline double relative_error(double analytic, double numeric) {
  const double scale =
      std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

inline double max_relative_error(const std::vector<double>& analytic,
                                 const std::vector<double>& numeric) {
  double worst = 0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

}  // namespace fedlite::testing_util

#endif  // FEDLITE_TESTS_GRADIENT_CHECK_H_
