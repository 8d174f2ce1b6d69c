#include "m4/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "m4/errors.hpp"

namespace m4::ad {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor probe = x.clone();
  return finite_diff_grad_inplace([&] { return f(probe); }, probe, h);
}

Tensor finite_diff_grad_inplace(const std::function<double()>& f, Tensor& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
  auto values = x.mutable_values();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + h;
    const double up = f();
    values[i] = original - h;
    const double down = f();
    values[i] = original;
    grad[i] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError("gradient comparison between arrays of different length");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace m4::ad
