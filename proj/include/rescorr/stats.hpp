#pragma once

#include "rescorr/common.hpp"

#include <span>
#include <vector>

namespace rescorr {

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;  // sum of positive ranks
  std::size_t n = 0;    // non-zero differences
  bool exact = true;
};

/// Paired two-sided signed-rank test on a - b. Zero differences are dropped, ties get
/// midranks. Exact null distribution for n <= 25, normal approximation with continuity
/// correction (and tie-corrected variance) above.
WilcoxonResult wilcoxon_paired(std::span<const double> a, std::span<const double> b);

/// Exact two-sided p from doubled ranks (integers), by dynamic programming over subsets.
double wilcoxon_exact_p(std::span<const long> doubled_ranks, long doubled_w_plus);

/// q_(i) = min_{j >= i} min(1, m / j * p_(j)), returned in input order. m defaults to p.size().
std::vector<double> bh_correct(std::span<const double> p_values, std::size_t m = 0);

/// Half-up decimal rounding that is robust to binary representation error.
double round_decimals(double v, int decimals);

}  // namespace rescorr
