#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "stcat/tensor/tape.hpp"

namespace stcat {

/// Scalar function of one tensor, evaluated on a fresh tape.
using TapeFunction = std::function<Var<double>(Tape<double>&, Var<double>)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const TapeFunction& f, const Tensor<double>& x, double eps = 1e-6) {
  Tensor<double> analytic;
  {
    Tape<double> tape(false);
    auto xv = tape.variable(x);
    auto loss = f(tape, xv);
    tape.backward(loss);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape(false);
    return f(tape, tape.constant(at)).value().item();
  };
  double worst = 0.0;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double fd = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace stcat
