#include "../support/fixtures.hpp"
#include "rescorr/stats.hpp"

#include <doctest.h>

#include <numeric>
#include <set>

using namespace rescorr;
using rescorr::testing::Gen;

namespace {

// Exhaustive two-sided signed-rank p over all 2^n sign assignments (midranks for ties).
double brute_wilcoxon(const std::vector<double>& d) {
  std::vector<double> nz;
  for (double v : d)
    if (v != 0.0) nz.push_back(v);
  const std::size_t n = nz.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(nz[j]) < std::abs(nz[i]);
      equal += std::abs(nz[j]) == std::abs(nz[i]);
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double w = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (nz[i] > 0) w += rank[i];
  double lo = 0, hi = 0;
  const std::size_t total = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < total; ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += rank[i];
    lo += s <= w + 1e-9;
    hi += s >= w - 1e-9;
  }
  return std::min(1.0, 2.0 * std::min(lo, hi) / static_cast<double>(total));
}

std::vector<double> brute_bh(const std::vector<double>& p, std::size_t m) {
  std::vector<double> q(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    // rank of p[i] among p (1-based, ties by index); then min over ranks >= it.
    std::size_t ri = 1;
    for (std::size_t j = 0; j < p.size(); ++j) ri += p[j] < p[i] || (p[j] == p[i] && j < i);
    double best = 1.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      std::size_t rj = 1;
      for (std::size_t k = 0; k < p.size(); ++k) rj += p[k] < p[j] || (p[k] == p[j] && k < j);
      if (rj >= ri) best = std::min(best, std::min(1.0, static_cast<double>(m) / static_cast<double>(rj) * p[j]));
    }
    q[i] = best;
  }
  return q;
}

}  // namespace

TEST_CASE("synthetic generator: zero input and uniform feature means") {
  SyntheticSpec s;
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 8);
  CHECK(synthetic_truth(s, zero)(0) == doctest::Approx(2.5 / (1.0 + std::exp(1.2))).epsilon(1e-12));
  CHECK(synthetic_truth(s, zero)(0) == doctest::Approx(0.57869).epsilon(1e-4));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SyntheticData d = generate_synthetic(s, seed);
    REQUIRE(d.data.rows() == 1000);
    CHECK(d.split.train.size() == 600);
    CHECK(d.split.val.size() == 200);
    CHECK(d.split.test.size() == 200);
    for (Index j = 0; j < 8; ++j) {
      const double m = d.data.features.col(j).mean();
      CHECK(m >= 0.45);
      CHECK(m <= 0.55);
    }
    // Truth is the sum of its terms.
    const Eigen::VectorXd sum = synthetic_linear_term(s, d.data.features) + synthetic_sigmoid_term(s, d.data.features) +
                                synthetic_sin_term(s, d.data.features);
    CHECK((sum - d.noiseless).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("oracle-correction residuals are pure noise") {
  SyntheticSpec s;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SyntheticBaseline b = synthetic_baseline(s, seed);
    const double ratio = b.oracle_residual_var / (s.noise_std * s.noise_std);
    CHECK(ratio >= 0.7);
    CHECK(ratio <= 1.4);
    CHECK(b.oracle_r2 > b.linear_r2);
  }
}

TEST_CASE("variance budget: noise is exact and components match a direct Monte Carlo") {
  SyntheticSpec s;
  const VarianceBudget v = variance_budget(s, 200000, 99);
  CHECK(v.noise == s.noise_std * s.noise_std);
  CHECK(v.ceiling == doctest::Approx(v.signal / (v.signal + v.noise)));
  // Independent estimate with a different generator stream.
  Gen g(1234);
  const Index n = 200000;
  double m1 = 0, m2 = 0;
  for (Index i = 0; i < n; ++i) {
    const double x1 = g.uniform(), x3 = g.uniform();
    const double t = 2.5 / (1.0 + std::exp(-(1.8 * x1 * x3 - 1.2)));
    m1 += t;
    m2 += t * t;
  }
  m1 /= n;
  const double var = m2 / n - m1 * m1;
  CHECK(v.sigmoid == doctest::Approx(var).epsilon(0.03));
}

TEST_CASE("BH q-values for nine tests at 3 decimals") {
  const std::vector<double> p{0.008, 0.012, 0.016, 0.020, 0.031, 0.039, 0.078, 0.094, 0.156};
  const std::vector<double> want{0.045, 0.045, 0.045, 0.045, 0.056, 0.059, 0.100, 0.106, 0.156};
  const auto q = bh_correct(p, 9);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(round_decimals(q[i], 3) == doctest::Approx(want[i]).epsilon(1e-12));
  CHECK(bh_correct(std::vector<double>{0.03})[0] == 0.03);
  const auto same = bh_correct(std::vector<double>{0.2, 0.2, 0.2});
  for (double v : same) CHECK(v == doctest::Approx(0.2));
  CHECK_THROWS_AS(bh_correct(std::vector<double>{0.1, 0.2}, 1), ConfigError);
}

TEST_CASE("round_decimals is half-up despite binary representation") {
  CHECK(round_decimals(0.0585, 3) == doctest::Approx(0.059));
  CHECK(round_decimals(0.0445, 3) == doctest::Approx(0.045));
  CHECK(round_decimals(0.1055, 3) == doctest::Approx(0.106));
  CHECK(round_decimals(0.12345, 2) == doctest::Approx(0.12));
}

TEST_CASE("Wilcoxon reference values") {
  std::vector<double> a(25), b(25, 0.0);
  for (int i = 0; i < 25; ++i) a[static_cast<std::size_t>(i)] = 0.1 * (i + 1);
  const WilcoxonResult all = wilcoxon_paired(a, b);
  CHECK(all.exact);
  CHECK(all.p_value == std::ldexp(1.0, -24));
  CHECK(all.p_value == doctest::Approx(6e-8).epsilon(0.01));
  CHECK(wilcoxon_paired(a, a).p_value == 1.0);
  const std::vector<double> d{1, 2, 3, 4, -5}, z(5, 0.0);
  CHECK(wilcoxon_paired(d, z).p_value == doctest::Approx(0.625));
  CHECK(wilcoxon_paired(d, z).p_value == doctest::Approx(brute_wilcoxon(d)));
}

TEST_CASE("property: exact Wilcoxon matches enumeration, ties included") {
  Gen g(51);
  for (int c = 0; c < 1000; ++c) {
    const int n = g.integer(1, 12);
    std::vector<double> d(static_cast<std::size_t>(n)), z(static_cast<std::size_t>(n), 0.0);
    for (auto& v : d) v = g.coin(0.3) ? static_cast<double>(g.integer(-3, 3)) : g.uniform(-2, 2);
    REQUIRE(wilcoxon_paired(d, z).p_value == doctest::Approx(brute_wilcoxon(d)).epsilon(1e-12));
  }
}

TEST_CASE("normal approximation above 25 pairs is close to the exact tail") {
  Gen g(52);
  std::vector<double> d(30), z(30, 0.0);
  for (auto& v : d) v = g.normal(0.3, 1.0);
  const WilcoxonResult r = wilcoxon_paired(d, z);
  CHECK_FALSE(r.exact);
  std::vector<long> ranks;
  std::vector<std::size_t> order(30);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<long> doubled(30);
  for (std::size_t k = 0; k < 30; ++k) doubled[order[k]] = 2 * static_cast<long>(k + 1);
  long w2 = 0;
  for (std::size_t i = 0; i < 30; ++i)
    if (d[i] > 0) w2 += doubled[i];
  CHECK(r.p_value == doctest::Approx(wilcoxon_exact_p(doubled, w2)).epsilon(0.05));
}

TEST_CASE("property: BH equals its definition, is monotone in p and never lowers p") {
  Gen g(53);
  for (int c = 0; c < 1000; ++c) {
    const int n = g.integer(1, 12);
    std::vector<double> p(static_cast<std::size_t>(n));
    for (auto& v : p) v = g.coin(0.2) ? 0.05 : g.uniform(0, 1);
    const std::size_t m = static_cast<std::size_t>(n + g.integer(0, 3));
    const auto q = bh_correct(p, m);
    const auto want = brute_bh(p, m);
    for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(q[i] == doctest::Approx(want[i]).epsilon(1e-12));
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    for (std::size_t i = 1; i < order.size(); ++i) REQUIRE(q[order[i - 1]] <= q[order[i]] + 1e-15);
    for (std::size_t i = 0; i < q.size(); ++i) REQUIRE(q[i] >= p[i] - 1e-15);
  }
}

TEST_CASE("transfer: self-transfer of an oracle-quality formula beats the linear ML") {
  CohortPlateSpec spec;
  spec.runs_per_source = 1;
  spec.coefficient_jitter = 0.0;
  TransferConfig cfg;
  cfg.include_self = true;
  cfg.filter = SourceFilter::unfiltered;
  const CohortPlates cp = make_cohort_plates(spec, cfg);
  const TransferReport r = transfer_eval(cp.plates, cp.sources, cfg);
  int self = 0;
  for (const auto& rec : r.records) {
    if (rec.source_plate != rec.target_plate) continue;
    ++self;
    CHECK(rec.delta_mae > 0);
  }
  CHECK(self == static_cast<int>(cp.sources.size()));
}

TEST_CASE("transfer: zero formulas pull the blend toward zero and lose to the ML") {
  CohortPlateSpec spec;
  TransferConfig cfg;
  cfg.filter = SourceFilter::unfiltered;
  CohortPlates cp = make_cohort_plates(spec, cfg);
  SourceRun zero;
  zero.id = "zero";
  zero.plate = cp.plates[0].id;
  zero.formulas = {parse("0", cp.plates[0].data.feature_names)};
  const std::vector<SourceRun> runs{zero};
  const TransferReport r = transfer_eval(cp.plates, runs, cfg);
  REQUIRE(!r.records.empty());
  for (const auto& rec : r.records) CHECK(rec.delta_mae < 0);
}

TEST_CASE("transfer: unfiltered pairs are a superset of filtered pairs; within beats across") {
  CohortPlateSpec spec;
  TransferConfig f;
  const CohortPlates cp = make_cohort_plates(spec, f);
  const TransferReport filtered = transfer_eval(cp.plates, cp.sources, f);
  TransferConfig u = f;
  u.filter = SourceFilter::unfiltered;
  const TransferReport unfiltered = transfer_eval(cp.plates, cp.sources, u);
  std::set<std::tuple<std::string, std::string, int>> all;
  for (const auto& r : unfiltered.records) all.insert({r.source_run, r.target_plate, r.formula});
  for (const auto& r : filtered.records) CHECK(all.count({r.source_run, r.target_plate, r.formula}) == 1);
  CHECK(unfiltered.records.size() >= filtered.records.size());
  CHECK(filtered.within.pct_improving > filtered.across.pct_improving);
  for (const auto& rec : filtered.records) CHECK(rec.relation != "unknown");
}

TEST_CASE("transfer: an unknown source plate cannot choose the source ML") {
  CohortPlateSpec spec;
  spec.plates_per_cohort = 1;
  spec.source_plates = {0};
  spec.runs_per_source = 1;
  TransferConfig cfg;
  cfg.filter = SourceFilter::unfiltered;
  CohortPlates cp = make_cohort_plates(spec, cfg);
  cp.sources[0].plate.clear();
  cfg.ml_source = MlSource::transfer;
  CHECK_THROWS_AS(transfer_eval(cp.plates, cp.sources, cfg), ConfigError);
  cfg.ml_source = MlSource::automatic;
  const TransferReport r = transfer_eval(cp.plates, cp.sources, cfg);
  for (const auto& rec : r.records) CHECK(rec.relation == "unknown");
}
