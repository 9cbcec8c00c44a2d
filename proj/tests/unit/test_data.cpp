#include "../support/fixtures.hpp"

#include <doctest.h>

#include <map>
#include <numeric>
#include <set>

using namespace rescorr;
using rescorr::testing::Gen;

namespace {

Dataset ramp(Index n, double slope = 1.0) {
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i);
    y(i) = slope * static_cast<double>(i);
  }
  return make_dataset(x, {"x"}, y);
}

// Hand-rolled oracles, written without Eigen reductions.
double oracle_r2(const Eigen::VectorXd& y, const Eigen::VectorXd& p) {
  double mean = 0;
  for (Index i = 0; i < y.size(); ++i) mean += y(i);
  mean /= static_cast<double>(y.size());
  double res = 0, tot = 0;
  for (Index i = 0; i < y.size(); ++i) {
    res += (y(i) - p(i)) * (y(i) - p(i));
    tot += (y(i) - mean) * (y(i) - mean);
  }
  return 1.0 - res / tot;
}

// Mean over classes seen in truth or predictions (absent classes are not averaged in).
double oracle_macro_f1(const std::vector<int>& t, const std::vector<int>& p, int C) {
  double sum = 0;
  int seen = 0;
  for (int c = 1; c <= C; ++c) {
    if (std::count(t.begin(), t.end(), c) + std::count(p.begin(), p.end(), c) == 0) continue;
    ++seen;
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (p[i] == c && t[i] == c) ++tp;
      if (p[i] == c && t[i] != c) ++fp;
      if (p[i] != c && t[i] == c) ++fn;
    }
    sum += tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
  }
  return sum / seen;
}

}  // namespace

TEST_CASE("random split: 10 rows at 80/20 gives 8 train and 2 test, disjoint") {
  const Dataset d = ramp(10);
  SplitSpec s;
  s.train = 0.8;
  s.test = 0.2;
  s.seed = 7;
  const Split sp = make_split(d, s);
  CHECK(sp.train.size() == 8);
  CHECK(sp.test.size() == 2);
  CHECK(sp.val.empty());
  std::set<Index> all(sp.train.begin(), sp.train.end());
  for (Index i : sp.test) CHECK(all.insert(i).second);
  CHECK(all.size() == 10);
}

TEST_CASE("stratified split of constant targets equals the random split") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(40, 2);
  const Dataset d = make_dataset(x, {"a", "b"}, Eigen::VectorXd::Constant(40, 3.0));
  SplitSpec s;
  s.train = 0.8;
  s.test = 0.2;
  s.seed = 11;
  const Split r = make_split(d, s);
  s.strategy = SplitStrategy::quantile_stratified;
  const Split q = make_split(d, s);
  CHECK(r.train == q.train);
  CHECK(r.test == q.test);
}

TEST_CASE("stratified split: 100 uniform targets in 5 bins give 16 train and 4 test per bin") {
  Gen g(3);
  Eigen::VectorXd y = g.vector(100, 0, 1);
  const Dataset d = make_dataset(g.matrix(100, 2), {"a", "b"}, y);
  SplitSpec s;
  s.train = 0.8;
  s.test = 0.2;
  s.strategy = SplitStrategy::quantile_stratified;
  s.q_bins = 5;
  const Split sp = make_split(d, s);
  // Brute-force bin membership: rank each target among all targets.
  std::map<int, std::pair<int, int>> per_bin;
  auto bin_of = [&](Index i) {
    int rank = 0;
    for (Index j = 0; j < 100; ++j) rank += y(j) < y(i);
    return rank / 20;
  };
  for (Index i : sp.train) ++per_bin[bin_of(i)].first;
  for (Index i : sp.test) ++per_bin[bin_of(i)].second;
  REQUIRE(per_bin.size() == 5);
  for (const auto& [b, counts] : per_bin) {
    CHECK(counts.first == 16);
    CHECK(counts.second == 4);
  }
}

TEST_CASE("property: split determinism and partition over 1000 random specs") {
  Gen g(101);
  for (int c = 0; c < 1000; ++c) {
    const Index n = g.integer(5, 60);
    Eigen::VectorXd y = g.vector(n);
    const Dataset d = make_dataset(g.matrix(n, 2), {"a", "b"}, y);
    SplitSpec s;
    s.train = g.uniform(0.3, 0.8);
    s.val = g.uniform(0.0, 1.0 - s.train) * 0.5;
    s.test = 1.0 - s.train - s.val;
    s.seed = static_cast<std::uint64_t>(g.integer(0, 1 << 20));
    s.strategy = g.coin() ? SplitStrategy::random : SplitStrategy::quantile_stratified;
    s.q_bins = g.integer(2, 6);
    const Split a = make_split(d, s);
    const Split b = make_split(d, s);
    REQUIRE(a.train == b.train);
    REQUIRE(a.val == b.val);
    REQUIRE(a.test == b.test);
    std::vector<int> seen(static_cast<std::size_t>(n), 0);
    for (const auto* part : {&a.train, &a.val, &a.test})
      for (Index i : *part) ++seen[static_cast<std::size_t>(i)];
    for (int v : seen) REQUIRE(v == 1);
  }
}

TEST_CASE("scalers: endpoints, degenerate columns and population std") {
  Eigen::MatrixXd x(2, 1);
  x << 0, 1;
  const IndexList rows{0, 1};
  const Eigen::MatrixXd m = apply_scaler(fit_scaler(x, rows, ScalerKind::minmax010), x);
  CHECK(m(0, 0) == doctest::Approx(0.01));
  CHECK(m(1, 0) == doctest::Approx(0.99));

  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(3, 1, 2.0);
  const IndexList r3{0, 1, 2};
  CHECK(apply_scaler(fit_scaler(c, r3, ScalerKind::standardize), c).cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd s(3, 1);
  s << 1, 2, 3;
  const Eigen::MatrixXd z = apply_scaler(fit_scaler(s, r3, ScalerKind::standardize), s);
  // Population std of (1,2,3) is sqrt(2/3).
  const double sd = std::sqrt(2.0 / 3.0);
  CHECK(z(0, 0) == doctest::Approx(-1.0 / sd));
  CHECK(z(1, 0) == doctest::Approx(0.0));
  CHECK(z(2, 0) == doctest::Approx(1.0 / sd));
}

TEST_CASE("scalers are fitted on the given rows only") {
  Eigen::MatrixXd x(4, 1);
  x << 0, 1, 2, 100;
  const IndexList train{0, 1, 2};
  const ScalerStats st = fit_scaler(x, train, ScalerKind::minmax01);
  CHECK(st.location(0) == 0.0);
  CHECK(st.scale(0) == 2.0);
  x(3, 0) = -5000;
  const ScalerStats st2 = fit_scaler(x, train, ScalerKind::minmax01);
  CHECK(st2.scale(0) == 2.0);
}

TEST_CASE("property: minmax scalers round-trip within 1e-9 over 1000 matrices") {
  Gen g(202);
  for (int c = 0; c < 1000; ++c) {
    const Index n = g.integer(2, 30), d = g.integer(1, 5);
    Eigen::MatrixXd x = g.matrix(n, d, -50, 50);
    if (g.coin(0.1)) x.col(0).setConstant(g.uniform());
    IndexList rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Index{0});
    const auto kind = g.coin() ? ScalerKind::minmax01 : ScalerKind::minmax010;
    const ScalerStats st = fit_scaler(x, rows, kind);
    const Eigen::MatrixXd back = invert_scaler(st, apply_scaler(st, x));
    REQUIRE((back - x).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("metrics: identity, mean predictor and the 4-sample binary case") {
  Eigen::VectorXd y(4);
  y << 1, 2, 3, 5;
  const MetricReport same = regression_metrics(y, y);
  CHECK(*same.r2 == 1.0);
  CHECK(*same.mae == 0.0);
  CHECK(*regression_metrics(y, Eigen::VectorXd::Constant(4, y.mean())).r2 == doctest::Approx(0.0).epsilon(1e-12));

  const std::vector<int> truth{2, 1, 2, 1}, pred{2, 2, 1, 1};
  const MetricReport m = classification_metrics(truth, pred, 2);
  CHECK(*m.accuracy == doctest::Approx(0.5));
  CHECK(*m.macro_f1 == doctest::Approx(0.5));
}

TEST_CASE("property: metrics agree with loop oracles and ignore joint permutation") {
  Gen g(303);
  for (int c = 0; c < 1000; ++c) {
    const Index n = g.integer(3, 40);
    Eigen::VectorXd y = g.vector(n), p = g.vector(n);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g.engine());
    Eigen::VectorXd yp(n), pp(n);
    for (Index i = 0; i < n; ++i) {
      yp(i) = y(perm[static_cast<std::size_t>(i)]);
      pp(i) = p(perm[static_cast<std::size_t>(i)]);
    }
    const MetricReport a = regression_metrics(y, p), b = regression_metrics(yp, pp);
    REQUIRE(*a.r2 == doctest::Approx(oracle_r2(y, p)).epsilon(1e-10));
    REQUIRE(*a.r2 == doctest::Approx(*b.r2).epsilon(1e-12));
    REQUIRE(*a.mae == doctest::Approx(*b.mae).epsilon(1e-12));

    const int C = g.integer(2, 4);
    std::vector<int> t(static_cast<std::size_t>(n)), q(static_cast<std::size_t>(n));
    for (auto& v : t) v = g.integer(1, C);
    for (auto& v : q) v = g.integer(1, C);
    REQUIRE(macro_f1(t, q, C) == doctest::Approx(oracle_macro_f1(t, q, C)).epsilon(1e-12));
    std::vector<int> tp(t.size()), qp(q.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp[i] = t[static_cast<std::size_t>(perm[i])];
      qp[i] = q[static_cast<std::size_t>(perm[i])];
    }
    REQUIRE(macro_f1(tp, qp, C) == doctest::Approx(macro_f1(t, q, C)).epsilon(1e-12));
  }
}

TEST_CASE("property: R2 is invariant to a shared affine rescaling") {
  Gen g(404);
  for (int c = 0; c < 1000; ++c) {
    const Index n = g.integer(3, 30);
    Eigen::VectorXd y = g.vector(n), p = g.vector(n);
    const double a = g.coin() ? g.uniform(0.01, 100) : -g.uniform(0.01, 100), b = g.uniform(-10, 10);
    const Eigen::VectorXd ys = (a * y.array() + b).matrix(), ps = (a * p.array() + b).matrix();
    REQUIRE(r2_score(ys, ps) == doctest::Approx(r2_score(y, p)).epsilon(1e-9));
  }
}

TEST_CASE("ECE of a perfectly calibrated two-bin set is zero and of a confident miss is its confidence") {
  Eigen::MatrixXd probs(2, 2);
  probs << 1.0, 0.0, 0.0, 1.0;
  const std::vector<int> right{1, 2}, wrong{2, 1};
  CHECK(expected_calibration_error(right, probs) == doctest::Approx(0.0));
  CHECK(expected_calibration_error(wrong, probs) == doctest::Approx(1.0));
}

TEST_CASE("CSV loading: last column is the target, sidecar declares classification and row ids") {
  const auto dir = rescorr::testing::temp_dir("csv");
  {
    std::ofstream f(dir / "d.csv");
    f << "id,a,b,label\n10,0.5,1,1\n11,0.25,2,2\n12,1e-3,3,3\n";
    std::ofstream s(dir / "d.json");
    s << R"({"task": "classification", "row_id_column": "id"})";
  }
  const Dataset d = load_dataset_csv(dir / "d.csv", dir / "d.json");
  CHECK(d.feature_names == rescorr::testing::names({"a", "b"}));
  CHECK(d.task == Task::classification);
  CHECK(d.num_classes == 3);
  CHECK(d.row_ids == std::vector<std::int64_t>{10, 11, 12});
  CHECK(d.features(2, 0) == doctest::Approx(1e-3));
  {
    std::ofstream f(dir / "bad.csv");
    f << "a,y\n1,2\nx,3\n";
  }
  CHECK_THROWS_AS(load_dataset_csv(dir / "bad.csv"), DataError);
}
