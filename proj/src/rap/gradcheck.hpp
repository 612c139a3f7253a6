#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rap/tensor.hpp"

namespace rap {

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at the worst location
  double numeric = 0.0;
  std::string message;
};

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  // Gradient magnitudes below this are compared on an absolute scale.
  double magnitude_floor = 1e-3;
  // Check at most this many coordinates per leaf (evenly strided); 0 = all.
  std::size_t max_coords_per_leaf = 0;
};

// Compares reverse-mode gradients of `loss` w.r.t. each leaf against central
// differences. `loss` must read the leaves' current values on every call; the
// leaves are perturbed in place and restored.
GradCheckReport grad_check_leaves(const std::function<TensorD()>& loss, std::vector<TensorD> leaves,
                                  const GradCheckOptions& options = {});

// Single-point form: f evaluated at `point`.
GradCheckReport grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& point,
                           double tol = 1e-3);

}  // namespace rap
