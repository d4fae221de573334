#include "fastadd/finite_diff.hpp"

#include <cmath>
#include <string>

namespace fastadd {

Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                const Tensor<double>& params, double step) {
  if (!(step > 0.0)) throw InputError("finite_diff_grad: step must be positive");
  Tensor<double> grad(params.shape());
  Tensor<double> probe = params;
  for (std::size_t i = 0; i < params.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(probe);
    probe[i] = orig - step;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace fastadd
