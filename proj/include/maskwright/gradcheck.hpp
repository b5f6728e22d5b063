#pragma once

#include <functional>
#include <vector>

#include "maskwright/tensor.hpp"

namespace maskwright {

// Compares reverse-mode gradients against central differences.
//
// Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|), or NaN when
// the function (or its gradient) produces a NaN anywhere.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

// Same check over every coordinate of several leaf tensors that `loss`
// closes over. Existing gradients on `params` are overwritten.
double finite_diff_check_params(const std::function<Tensor()>& loss, const std::vector<Tensor>& params,
                                double h = 1e-5);

}  // namespace maskwright
