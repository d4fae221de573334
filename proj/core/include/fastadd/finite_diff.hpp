#pragma once

#include <functional>

#include "fastadd/tensor.hpp"

namespace fastadd {

/// Central-difference gradient (f(p + h e_i) - f(p - h e_i)) / 2h per
/// coordinate. Double precision only; this is the oracle the hand-derived
/// backward passes are checked against.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& params, double step);

}  // namespace fastadd
