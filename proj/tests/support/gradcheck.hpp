#pragma once

// Central finite-difference gradient checking for the autodiff engine.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dyroad/autodiff.hpp"

namespace dyroad::testkit {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

// `loss` must rebuild the graph from the current parameter values on every call.
inline GradCheck gradient_check(std::vector<ad::Tensor> params,
                                const std::function<ad::Tensor()>& loss, double step = 1e-5,
                                std::size_t max_entries_per_param = 0) {
  for (auto& p : params) p.zero_grad();
  ad::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (p.has_grad())
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    else
      analytic.emplace_back(p.size(), 0.0);
  }
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    std::size_t n = values.size();
    std::size_t stride = (max_entries_per_param == 0 || n <= max_entries_per_param)
                             ? 1
                             : n / max_entries_per_param;
    for (std::size_t j = 0; j < n; j += stride) {
      const double orig = values[j];
      values[j] = orig + step;
      const double up = loss().item();
      values[j] = orig - step;
      const double down = loss().item();
      values[j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i][j], numeric));
      ++out.checked;
    }
  }
  for (auto& p : params) p.zero_grad();
  return out;
}

}  // namespace dyroad::testkit
