#include "rescorr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rescorr {

double wilcoxon_exact_p(std::span<const long> doubled_ranks, long doubled_w_plus) {
  const long total = std::accumulate(doubled_ranks.begin(), doubled_ranks.end(), 0L);
  // counts[s] = number of sign assignments whose positive doubled-rank sum is s
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : doubled_ranks) {
    for (long s = reach; s >= 0; --s)
      if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
    reach += r;
  }
  const double all = std::ldexp(1.0, static_cast<int>(doubled_ranks.size()));
  double lower = 0, upper = 0;
  for (long s = 0; s <= total; ++s) {
    if (s <= doubled_w_plus) lower += counts[static_cast<std::size_t>(s)];
    if (s >= doubled_w_plus) upper += counts[static_cast<std::size_t>(s)];
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / all);
}

WilcoxonResult wilcoxon_paired(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("wilcoxon_paired: samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  WilcoxonResult out;
  out.n = d.size();
  if (d.empty()) return out;

  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<long> doubled(d.size());
  double tie_term = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    // ranks i+1..j+1 share the midrank (i+j+2)/2; doubled that is i+j+2
    for (std::size_t k = i; k <= j; ++k) doubled[order[k]] = static_cast<long>(i + j + 2);
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) w2 += doubled[i];
  out.w_plus = 0.5 * static_cast<double>(w2);

  if (d.size() <= 25) {
    out.p_value = wilcoxon_exact_p(doubled, w2);
    return out;
  }
  out.exact = false;
  const double n = static_cast<double>(d.size());
  const double mean = n * (n + 1) / 4.0;
  const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
  const double z = std::max(0.0, std::abs(out.w_plus - mean) - 0.5) / std::sqrt(var);
  out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

std::vector<double> bh_correct(std::span<const double> p_values, std::size_t m) {
  const std::size_t n = p_values.size();
  if (m == 0) m = n;
  if (m < n) throw ConfigError("bh_correct: m must be at least the number of p-values");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return p_values[i] < p_values[j]; });
  std::vector<double> q(n);
  double running = 1.0;
  for (std::size_t r = n; r-- > 0;) {
    const double scaled = static_cast<double>(m) / static_cast<double>(r + 1) * p_values[order[r]];
    running = std::min(running, std::min(1.0, scaled));
    q[order[r]] = running;
  }
  return q;
}

double round_decimals(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double x = v * scale;
  // Nudge by a few ulps so that values like 0.0585 stored as 0.058499999... round up.
  return std::floor(x + 0.5 + 1e-9 * std::max(1.0, std::abs(x))) / scale;
}

}  // namespace rescorr
