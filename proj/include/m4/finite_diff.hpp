#pragma once

#include <functional>
#include <span>

#include "m4/tensor.hpp"

namespace m4::ad {

// Central differences (f(x + h·e_i) − f(x − h·e_i)) / 2h for every
// coordinate of x. f receives a perturbed copy; x is left untouched.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

// Same, but perturbs x in place (restoring each coordinate afterwards) so f
// can close over parameters held by a model.
Tensor finite_diff_grad_inplace(const std::function<double()>& f, Tensor& x, double h = 1e-5);

// max_i |a_i − n_i| / max(|a_i|, |n_i|, floor). The floor keeps coordinates
// whose true gradient is ~0 from dominating through round-off.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-6);

}  // namespace m4::ad
