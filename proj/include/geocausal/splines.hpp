#pragma once

#include <span>
#include <vector>

namespace geocausal {

// Natural cubic spline basis without intercept: z_1(x) = x followed by
// df - 1 truncated-power terms that are linear beyond the boundary knots.
class NaturalCubicBasis {
 public:
  // Boundary knots at min/max and df - 1 interior knots at quantiles. Needs at
  // least df + 1 distinct values.
  static NaturalCubicBasis from_values(std::span<const double> values, int df);
  explicit NaturalCubicBasis(std::vector<double> knots);

  int dimension() const { return static_cast<int>(knots_.size()) - 1; }
  const std::vector<double>& knots() const { return knots_; }
  std::vector<double> evaluate(double x) const;
  void evaluate_into(double x, std::span<double> out) const;

 private:
  std::vector<double> knots_;
};

// Type-7 sample quantile of sorted data.
double sorted_quantile(std::span<const double> sorted, double q);

}  // namespace geocausal
