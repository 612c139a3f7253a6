#include "rap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rap {

GradCheckReport grad_check_leaves(const std::function<TensorD()>& loss, std::vector<TensorD> leaves,
                                  const GradCheckOptions& options) {
  GradCheckReport report;
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(&tape);
    TensorD value = loss();
    if (value.numel() != 1) {
      report.passed = false;
      report.message = "loss is not scalar: " + shape_str(value.shape());
      return report;
    }
    if (!std::isfinite(value.item())) {
      report.passed = false;
      report.max_rel_error = INFINITY;
      std::ostringstream os;
      os << "non-finite loss at the base point";
      for (std::size_t l = 0; l < leaves.size(); ++l) {
        const auto v = leaves[l].data();
        const auto bad = std::find_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); });
        if (bad != v.end()) {
          report.worst_leaf = l;
          report.worst_index = static_cast<std::size_t>(bad - v.begin());
          os << "; leaf " << l << " index " << report.worst_index << " holds " << *bad;
          break;
        }
      }
      report.message = os.str();
      return report;
    }
    if (value.requires_grad()) tape.backward(value);
  }

  NoGradScope<double> no_grad;
  auto eval = [&] { return loss().item(); };
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& leaf = leaves[l];
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto values = leaf.data();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (options.max_coords_per_leaf && n > options.max_coords_per_leaf) {
      stride = (n + options.max_coords_per_leaf - 1) / options.max_coords_per_leaf;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = values[i];
      values[i] = orig + options.step;
      const double fp = eval();
      values[i] = orig - options.step;
      const double fm = eval();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double a = analytic[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        std::ostringstream os;
        os << "non-finite gradient at leaf " << l << " index " << i << " (analytic " << a << ", numeric "
           << numeric << ")";
        report.passed = false;
        report.worst_leaf = l;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
        report.max_rel_error = INFINITY;
        report.message = os.str();
        return report;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_leaf = l;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  std::ostringstream os;
  os << "max rel. error " << report.max_rel_error << " at leaf " << report.worst_leaf << " index "
     << report.worst_index << " (analytic " << report.analytic << ", numeric " << report.numeric << ")";
  report.message = os.str();
  return report;
}

GradCheckReport grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& point, double tol) {
  TensorD x = point.detach();
  GradCheckOptions options;
  options.tolerance = tol;
  return grad_check_leaves([&] { return f(x); }, {x}, options);
}

}  // namespace rap
