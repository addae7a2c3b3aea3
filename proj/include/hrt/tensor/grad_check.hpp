#pragma once

#include <functional>

#include "hrt/tensor/tensor.hpp"

namespace hrt::tensor {

// Compares the recorded gradient of a scalar function against central
// differences. `x` is perturbed in place (so `f` may ignore its argument and
// read x through a closure, e.g. when x is a model parameter) and restored.
// Returns max over coordinates of |a - c| / (|a| + |c| + 1e-8).
// Throws std::invalid_argument if f does not return a single value.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x, T eps);

}  // namespace hrt::tensor
