#pragma once

#include <cstddef>
#include <span>

namespace geocausal {

// Pairwise (cascade) summation with a fixed split rule. The order depends
// only on the length, which is what makes reductions reproducible.
double pairwise_sum(std::span<const double> values);

}  // namespace geocausal
