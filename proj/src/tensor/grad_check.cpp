#include "hrt/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hrt::tensor {

template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("grad_check: eps must be positive");
  const bool had_flag = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<T> analytic;
  {
    Graph<T> graph;
    GraphScope<T> scope(graph);
    Tensor<T> y = f(x);
    if (y.size() != 1) {
      x.set_requires_grad(had_flag);
      throw std::invalid_argument("grad_check: f must return a scalar, got " + shape_string(y.shape()));
    }
    graph.backward(y);
  }
  if (x.has_grad()) {
    analytic.assign(x.grad().begin(), x.grad().end());
  } else {
    analytic.assign(x.size(), T(0));
  }
  x.zero_grad();

  double worst = 0.0;
  auto values = x.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + eps;
    const double up = static_cast<double>(f(x).item());
    values[i] = saved - eps;
    const double down = static_cast<double>(f(x).item());
    values[i] = saved;
    const double central = (up - down) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-8);
    worst = std::max(worst, err);
  }
  x.set_requires_grad(had_flag);
  return worst;
}

template double grad_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&, Tensor<float>, float);
template double grad_check<double>(const std::function<Tensor<double>(const Tensor<double>&)>&, Tensor<double>,
                                   double);

}  // namespace hrt::tensor
