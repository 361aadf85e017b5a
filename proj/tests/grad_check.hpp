#pragma once

// Central finite-difference gradient checking shared by the unit and
// acceptance suites. The scalar under test is rebuilt from scratch for every
// probe, so the check is independent of the tape's backward pass.

#include <cmath>
#include <functional>
#include <vector>

#include "sfs/ad/tape.hpp"
#include "sfs/rng.hpp"

namespace sfs::test {

// Builds a scalar from leaf values; the checker owns the tape.
using ScalarBuilder =
    std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCheckResult {
  int checked = 0;
  int passed = 0;
  double worst_rel = 0.0;

  double pass_fraction() const {
    return checked == 0 ? 1.0
                        : static_cast<double>(passed) /
                              static_cast<double>(checked);
  }
};

// Compares analytic gradients against central differences on up to
// max_coords_per_leaf randomly chosen coordinates of every leaf. Coordinates
// whose numeric and analytic magnitudes both fall below abs_floor are counted
// as passing (the comparison is meaningless at that scale).
inline GradCheckResult check_gradients(const ScalarBuilder& build,
                                       const std::vector<ad::Mat>& leaf_values,
                                       double h = 1e-5, double rel_tol = 1e-3,
                                       double abs_floor = 1e-8,
                                       int max_coords_per_leaf = 50,
                                       std::uint64_t seed = 0) {
  std::vector<ad::Mat> analytic;
  double base_value = 0.0;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& v : leaf_values) leaves.push_back(tape.leaf(v));
    const ad::Var root = build(tape, leaves);
    base_value = tape.val(root)(0, 0);
    tape.backward(root);
    for (const auto& leaf : leaves) analytic.push_back(tape.grad(leaf));
  }
  (void)base_value;

  auto eval_at = [&](const std::vector<ad::Mat>& values) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& v : values) leaves.push_back(tape.leaf(v));
    return tape.val(build(tape, leaves))(0, 0);
  };

  GradCheckResult result;
  Rng rng(derive_seed(seed, {0x9fadULL}));
  std::vector<ad::Mat> probe = leaf_values;
  for (std::size_t li = 0; li < leaf_values.size(); ++li) {
    const auto size = leaf_values[li].size();
    std::vector<Eigen::Index> coords;
    if (size <= max_coords_per_leaf) {
      for (Eigen::Index i = 0; i < size; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < max_coords_per_leaf; ++i)
        coords.push_back(static_cast<Eigen::Index>(
            rng.below(static_cast<std::uint64_t>(size))));
    }
    for (const Eigen::Index c : coords) {
      const double original = probe[li].data()[c];
      probe[li].data()[c] = original + h;
      const double up = eval_at(probe);
      probe[li].data()[c] = original - h;
      const double down = eval_at(probe);
      probe[li].data()[c] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = analytic[li].data()[c];
      const double denom = std::max(std::abs(numeric), std::abs(exact));
      ++result.checked;
      if (denom < abs_floor) {
        ++result.passed;
        continue;
      }
      const double rel = std::abs(numeric - exact) / denom;
      result.worst_rel = std::max(result.worst_rel, rel);
      if (rel < rel_tol) ++result.passed;
    }
  }
  return result;
}

}  // namespace sfs::test
