#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rcvqa/tensor.hpp"

namespace rcvqa {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

// Relative error with a small floor on the denominator: gradients that are
// analytically zero (sum of a layer-normalized row, say) would otherwise
// turn round-off into a huge ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares the reverse-mode gradient of a scalar function against central
// finite differences (f(x+h) - f(x-h)) / 2h for every element of every leaf.
// `f` must rebuild its graph from the leaves on each call.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> leaves, double h = 1e-5,
                                  double tol = 1e-4) {
  auto eval = [&]() {
    Tensor<double> y = f();
    if (y.size() != 1) throw OracleError("grad_check: function is not scalar-valued");
    const double v = y.item();
    if (!std::isfinite(v)) throw OracleError("grad_check: function value is not finite");
    return y;
  };

  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor<double> y = eval();
  backward(y);
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

  GradCheckReport report;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = eval().item();
      values[i] = saved - h;
      const double down = eval().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = relative_error(analytic[l][i], numeric);
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic[l][i] - numeric));
      if (rel > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_leaf = l;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

// Single-input form: f maps x to a scalar.
inline GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  Tensor<double> x, double h = 1e-5, double tol = 1e-4) {
  return grad_check([&]() { return f(x); }, std::vector<Tensor<double>>{x}, h, tol);
}

}  // namespace rcvqa
