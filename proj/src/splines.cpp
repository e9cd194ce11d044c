#include "geocausal/splines.hpp"

#include <algorithm>
#include <cmath>

#include "geocausal/errors.hpp"

namespace geocausal {

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InvalidArgument("sorted_quantile: empty input");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

NaturalCubicBasis NaturalCubicBasis::from_values(std::span<const double> values, int df) {
  if (df < 1) throw InvalidArgument("natural_cubic_basis: df must be >= 1");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> uniq(sorted);
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (static_cast<int>(uniq.size()) < df + 1) {
    throw InvalidArgument("natural_cubic_basis: need at least df + 1 = " + std::to_string(df + 1) +
                          " distinct values, got " + std::to_string(uniq.size()));
  }
  std::vector<double> knots;
  knots.push_back(sorted.front());
  for (int k = 1; k < df; ++k) knots.push_back(sorted_quantile(sorted, static_cast<double>(k) / df));
  knots.push_back(sorted.back());
  for (std::size_t k = 1; k < knots.size(); ++k) {
    if (!(knots[k] > knots[k - 1])) throw InvalidArgument("natural_cubic_basis: quantile knots coincide; lower df");
  }
  return NaturalCubicBasis(std::move(knots));
}

NaturalCubicBasis::NaturalCubicBasis(std::vector<double> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 2) throw InvalidArgument("NaturalCubicBasis: need two boundary knots");
  for (std::size_t k = 1; k < knots_.size(); ++k) {
    if (!(knots_[k] > knots_[k - 1])) throw InvalidArgument("NaturalCubicBasis: knots must increase strictly");
  }
}

void NaturalCubicBasis::evaluate_into(double x, std::span<double> out) const {
  if (static_cast<int>(out.size()) != dimension()) throw InvalidArgument("NaturalCubicBasis: output size mismatch");
  out[0] = x;
  const std::size_t K = knots_.size();
  if (K == 2) return;
  const double lo = knots_.front();
  const double span = knots_.back() - lo;
  const double u = (x - lo) / span;
  auto cube = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
  auto d = [&](std::size_t k) {
    const double xk = (knots_[k] - lo) / span;
    return (cube(u - xk) - cube(u - 1.0)) / (1.0 - xk);
  };
  const double last = d(K - 2);
  for (std::size_t k = 0; k + 2 < K; ++k) out[k + 1] = d(k) - last;
}

std::vector<double> NaturalCubicBasis::evaluate(double x) const {
  std::vector<double> out(static_cast<std::size_t>(dimension()));
  evaluate_into(x, out);
  return out;
}

}  // namespace geocausal
