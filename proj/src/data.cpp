#include "rescorr/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

namespace rescorr {

std::string to_string(Task task) { return task == Task::regression ? "regression" : "classification"; }

Task task_from_string(std::string_view text) {
  if (text == "regression") return Task::regression;
  if (text == "classification") return Task::classification;
  throw ConfigError("unknown task kind '" + std::string(text) + "'");
}

void Dataset::validate() const {
  if (features.rows() < 1) throw DataError("dataset has no rows");
  if (features.cols() < 1) throw DataError("dataset has no feature columns");
  if (static_cast<Index>(feature_names.size()) != features.cols())
    throw DataError("feature name count does not match column count");
  if (targets.size() != features.rows()) throw DataError("target length does not match row count");
  if (!row_ids.empty() && static_cast<Index>(row_ids.size()) != features.rows())
    throw DataError("row id count does not match row count");
  if (!features.allFinite()) throw DataError("feature matrix contains NaN or Inf");
  if (!targets.allFinite()) throw DataError("targets contain NaN or Inf");
  std::unordered_set<std::string> seen;
  for (const auto& name : feature_names) {
    if (name.empty()) throw DataError("empty feature name");
    if (!seen.insert(name).second) throw DataError("duplicate feature name '" + name + "'");
  }
  if (task == Task::classification) {
    if (num_classes < 2) throw DataError("classification needs num_classes >= 2");
    for (Index i = 0; i < targets.size(); ++i) {
      const double t = targets(i);
      if (t != std::floor(t) || t < 1 || t > num_classes)
        throw DataError("class label out of range 1.." + std::to_string(num_classes) + " at row " + std::to_string(i));
    }
  }
}

std::vector<int> Dataset::labels(std::span<const Index> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(label(i));
  return out;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out(static_cast<std::size_t>(rows()));
  for (Index i = 0; i < rows(); ++i) out[static_cast<std::size_t>(i)] = label(i);
  return out;
}

Eigen::MatrixXd Dataset::feature_rows(std::span<const Index> idx) const {
  Eigen::MatrixXd out(static_cast<Index>(idx.size()), cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = features.row(idx[r]);
  return out;
}

Eigen::VectorXd Dataset::target_rows(std::span<const Index> idx) const {
  Eigen::VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) out(static_cast<Index>(r)) = targets(idx[r]);
  return out;
}

std::vector<std::int64_t> Dataset::row_ids_of(std::span<const Index> idx) const {
  std::vector<std::int64_t> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(row_ids.empty() ? static_cast<std::int64_t>(i) : row_ids[static_cast<std::size_t>(i)]);
  return out;
}

Dataset Dataset::subset(std::span<const Index> idx) const {
  Dataset out;
  out.features = feature_rows(idx);
  out.feature_names = feature_names;
  out.targets = target_rows(idx);
  out.task = task;
  out.num_classes = num_classes;
  out.row_ids = row_ids_of(idx);
  return out;
}

Index Dataset::feature_index(std::string_view name) const {
  for (std::size_t j = 0; j < feature_names.size(); ++j)
    if (feature_names[j] == name) return static_cast<Index>(j);
  return -1;
}

Dataset make_dataset(Eigen::MatrixXd features, std::vector<std::string> names, Eigen::VectorXd targets, Task task,
                     int num_classes) {
  Dataset d;
  d.features = std::move(features);
  d.feature_names = std::move(names);
  d.targets = std::move(targets);
  d.task = task;
  d.num_classes = num_classes;
  d.row_ids.resize(static_cast<std::size_t>(d.features.rows()));
  std::iota(d.row_ids.begin(), d.row_ids.end(), std::int64_t{0});
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return fields;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV '" + path.string() + "'");
  CsvTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      throw DataError("CSV '" + path.string() + "': row " + std::to_string(table.rows.size() + 1) + " has " +
                      std::to_string(fields.size()) + " fields, header has " + std::to_string(table.header.size()));
    table.rows.push_back(std::move(fields));
  }
  if (!have_header) throw DataError("CSV '" + path.string() + "' is empty");
  return table;
}

namespace {

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

double parse_number(const std::string& text, const std::string& where) {
  if (text.empty()) throw DataError("missing value at " + where);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw DataError("non-numeric value '" + text + "' at " + where);
  }
  if (used != text.size()) throw DataError("non-numeric value '" + text + "' at " + where);
  if (!std::isfinite(v)) throw DataError("non-finite value at " + where);
  return v;
}

}  // namespace

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write CSV '" + path.string() + "'");
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << csv_escape(row[j]);
    out << '\n';
  };
  write_row(table.header);
  for (const auto& row : table.rows) write_row(row);
}

Dataset load_dataset_csv(const std::filesystem::path& csv, const std::optional<std::filesystem::path>& sidecar) {
  Task task = Task::regression;
  int num_classes = 0;
  std::string row_id_column;
  if (sidecar) {
    std::ifstream in(*sidecar);
    if (!in) throw DataError("cannot open sidecar '" + sidecar->string() + "'");
    nlohmann::json meta;
    try {
      in >> meta;
    } catch (const std::exception& e) {
      throw DataError("sidecar '" + sidecar->string() + "': " + e.what());
    }
    task = task_from_string(meta.value("task", std::string("regression")));
    num_classes = meta.value("num_classes", 0);
    row_id_column = meta.value("row_id_column", std::string{});
  }
  const CsvTable table = read_csv(csv);
  if (table.header.size() < 2) throw DataError("CSV needs at least one feature column and a target column");
  if (table.rows.empty()) throw DataError("CSV has no data rows");

  Index id_col = -1;
  if (!row_id_column.empty()) {
    const auto it = std::find(table.header.begin(), table.header.end(), row_id_column);
    if (it == table.header.end()) throw DataError("row id column '" + row_id_column + "' not found");
    id_col = it - table.header.begin();
  }
  const Index target_col = static_cast<Index>(table.header.size()) - 1;
  std::vector<Index> feature_cols;
  for (Index j = 0; j < target_col; ++j)
    if (j != id_col) feature_cols.push_back(j);

  Dataset d;
  d.task = task;
  d.num_classes = num_classes;
  const Index n = static_cast<Index>(table.rows.size());
  d.features.resize(n, static_cast<Index>(feature_cols.size()));
  d.targets.resize(n);
  for (Index j : feature_cols) d.feature_names.push_back(table.header[static_cast<std::size_t>(j)]);
  for (Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < feature_cols.size(); ++c) {
      const auto col = static_cast<std::size_t>(feature_cols[c]);
      d.features(i, static_cast<Index>(c)) =
          parse_number(row[col], "row " + std::to_string(i + 1) + ", column '" + table.header[col] + "'");
    }
    d.targets(i) = parse_number(row[static_cast<std::size_t>(target_col)], "row " + std::to_string(i + 1) + ", target");
    d.row_ids.push_back(id_col >= 0 ? static_cast<std::int64_t>(parse_number(row[static_cast<std::size_t>(id_col)], "row id"))
                                    : static_cast<std::int64_t>(i));
  }
  if (task == Task::classification && num_classes == 0) d.num_classes = static_cast<int>(d.targets.maxCoeff());
  d.validate();
  return d;
}

void save_dataset_csv(const Dataset& data, const std::filesystem::path& csv, std::string_view target_name) {
  CsvTable table;
  table.header = data.feature_names;
  table.header.emplace_back(target_name);
  std::ostringstream s;
  s.precision(17);
  for (Index i = 0; i < data.rows(); ++i) {
    std::vector<std::string> row;
    for (Index j = 0; j < data.cols(); ++j) {
      s.str("");
      s << data.features(i, j);
      row.push_back(s.str());
    }
    s.str("");
    s << data.targets(i);
    row.push_back(s.str());
    table.rows.push_back(std::move(row));
  }
  write_csv(csv, table);
}

// ---------------------------------------------------------------------------
// Splits

void deterministic_shuffle(IndexList& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    // Unbiased bounded draw by rejection.
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw = rng();
    while (draw >= limit) draw = rng();
    std::swap(items[i - 1], items[static_cast<std::size_t>(draw % bound)]);
  }
}

namespace {

struct Allocation {
  Index train, val, test;
};

Allocation allocate(Index n, const SplitSpec& spec) {
  const Index test = static_cast<Index>(std::llround(static_cast<double>(n) * spec.test));
  const Index val = std::min(n - test, static_cast<Index>(std::llround(static_cast<double>(n) * spec.val)));
  return {n - test - val, val, test};
}

void assign_group(const IndexList& shuffled, const SplitSpec& spec, Split& out) {
  const Allocation a = allocate(static_cast<Index>(shuffled.size()), spec);
  auto it = shuffled.begin();
  out.train.insert(out.train.end(), it, it + a.train);
  it += a.train;
  out.val.insert(out.val.end(), it, it + a.val);
  it += a.val;
  out.test.insert(out.test.end(), it, shuffled.end());
}

int active_splits(const SplitSpec& spec) { return (spec.train > 0) + (spec.val > 0) + (spec.test > 0); }

}  // namespace

Split make_split(const Dataset& data, const SplitSpec& spec) {
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 || std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be non-negative and sum to 1");
  Split out;
  out.spec = spec;
  const Index n = data.rows();
  if (spec.strategy == SplitStrategy::random) {
    IndexList all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index{0});
    deterministic_shuffle(all, spec.seed);
    assign_group(all, spec, out);
  } else {
    if (data.task != Task::regression) throw ConfigError("quantile-stratified split requires a regression task");
    if (spec.q_bins < 2) throw ConfigError("q_bins must be >= 2");
    std::vector<double> sorted(data.targets.data(), data.targets.data() + n);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    for (int b = 1; b < spec.q_bins; ++b)
      edges.push_back(sorted[static_cast<std::size_t>(b * n / spec.q_bins)]);
    std::vector<IndexList> bins(static_cast<std::size_t>(spec.q_bins));
    for (Index i = 0; i < n; ++i) {
      const auto bin = std::upper_bound(edges.begin(), edges.end(), data.targets(i)) - edges.begin();
      bins[static_cast<std::size_t>(bin)].push_back(i);
    }
    std::uint64_t bin_seed = spec.seed;
    std::mt19937_64 fallback_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& members : bins) {
      if (members.empty()) continue;
      deterministic_shuffle(members, bin_seed++);
      if (static_cast<int>(members.size()) < active_splits(spec)) {
        log_warn("make_split: quantile bin with " + std::to_string(members.size()) +
                 " samples is smaller than the split count; assigning its members at random");
        for (Index m : members) {
          const double u = unit(fallback_rng);
          (u < spec.train ? out.train : u < spec.train + spec.val ? out.val : out.test).push_back(m);
        }
        continue;
      }
      assign_group(members, spec, out);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// Scalers

std::string to_string(ScalerKind kind) {
  switch (kind) {
    case ScalerKind::identity: return "identity";
    case ScalerKind::standardize: return "standardize";
    case ScalerKind::minmax01: return "minmax01";
    case ScalerKind::minmax010: return "minmax010";
  }
  return "identity";
}

ScalerKind scaler_kind_from_string(std::string_view text) {
  if (text == "identity" || text == "none") return ScalerKind::identity;
  if (text == "standardize") return ScalerKind::standardize;
  if (text == "minmax01") return ScalerKind::minmax01;
  if (text == "minmax010") return ScalerKind::minmax010;
  throw ConfigError("unknown scaler kind '" + std::string(text) + "'");
}

ScalerStats identity_scaler(Index columns) {
  ScalerStats s;
  s.kind = ScalerKind::identity;
  s.location = Eigen::VectorXd::Zero(columns);
  s.scale = Eigen::VectorXd::Ones(columns);
  s.degenerate.assign(static_cast<std::size_t>(columns), false);
  return s;
}

ScalerStats fit_scaler(const Eigen::MatrixXd& x, std::span<const Index> rows, ScalerKind kind, std::string fitted_on) {
  if (rows.empty()) throw DataError("fit_scaler: no rows to fit on");
  ScalerStats s = identity_scaler(x.cols());
  s.kind = kind;
  s.fitted_on = std::move(fitted_on);
  if (kind == ScalerKind::identity) return s;
  const double n = static_cast<double>(rows.size());
  for (Index j = 0; j < x.cols(); ++j) {
    double lo = x(rows[0], j), hi = lo, sum = 0;
    for (Index r : rows) {
      lo = std::min(lo, x(r, j));
      hi = std::max(hi, x(r, j));
      sum += x(r, j);
    }
    const auto jj = static_cast<std::size_t>(j);
    if (kind == ScalerKind::standardize) {
      const double mean = sum / n;
      double ss = 0;
      for (Index r : rows) ss += (x(r, j) - mean) * (x(r, j) - mean);
      const double sd = std::sqrt(ss / n);
      s.location(j) = mean;
      if (sd > 0) {
        s.scale(j) = sd;
      } else {
        s.location(j) = x(rows[0], j);
        s.degenerate[jj] = true;
      }
    } else {
      s.location(j) = lo;
      if (hi > lo) {
        s.scale(j) = hi - lo;
      } else {
        s.degenerate[jj] = true;
      }
    }
  }
  return s;
}

ScalerStats fit_scaler(const Dataset& data, const Split& split, ScalerKind kind) {
  return fit_scaler(data.features, split.train, kind, "train");
}

namespace {

double forward(const ScalerStats& s, Index j, double v) {
  const bool degenerate = s.degenerate[static_cast<std::size_t>(j)];
  switch (s.kind) {
    case ScalerKind::identity: return v;
    case ScalerKind::standardize: return degenerate ? 0.0 : (v - s.location(j)) / s.scale(j);
    case ScalerKind::minmax01: return degenerate ? 0.5 : (v - s.location(j)) / s.scale(j);
    case ScalerKind::minmax010: return degenerate ? 0.5 : 0.01 + 0.98 * (v - s.location(j)) / s.scale(j);
  }
  return v;
}

double backward(const ScalerStats& s, Index j, double v) {
  if (s.degenerate[static_cast<std::size_t>(j)]) return s.kind == ScalerKind::identity ? v : s.location(j);
  switch (s.kind) {
    case ScalerKind::identity: return v;
    case ScalerKind::standardize: return v * s.scale(j) + s.location(j);
    case ScalerKind::minmax01: return v * s.scale(j) + s.location(j);
    case ScalerKind::minmax010: return (v - 0.01) / 0.98 * s.scale(j) + s.location(j);
  }
  return v;
}

template <typename F>
Eigen::MatrixXd map_columns(const ScalerStats& s, const Eigen::MatrixXd& x, F f) {
  if (x.cols() != s.size())
    throw DataError("scaler expects " + std::to_string(s.size()) + " columns, got " + std::to_string(x.cols()));
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) out(i, j) = f(s, j, x(i, j));
  return out;
}

}  // namespace

Eigen::MatrixXd apply_scaler(const ScalerStats& stats, const Eigen::MatrixXd& x) { return map_columns(stats, x, forward); }
Eigen::MatrixXd invert_scaler(const ScalerStats& stats, const Eigen::MatrixXd& x) { return map_columns(stats, x, backward); }

Eigen::VectorXd apply_scaler(const ScalerStats& stats, const Eigen::VectorXd& y) {
  return map_columns(stats, Eigen::MatrixXd(y), forward).col(0);
}

Eigen::VectorXd invert_scaler(const ScalerStats& stats, const Eigen::VectorXd& y) {
  return map_columns(stats, Eigen::MatrixXd(y), backward).col(0);
}

// ---------------------------------------------------------------------------
// Metrics

MetricReport regression_metrics(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred) {
  if (y_true.size() != y_pred.size()) throw DataError("metrics: length mismatch");
  if (y_true.size() == 0) throw DataError("metrics: empty input");
  MetricReport m;
  m.r2 = r2_score(y_true, y_pred);
  m.mae = mean_absolute_error(y_true, y_pred);
  return m;
}

std::vector<int> argmax_labels(const Eigen::MatrixXd& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    Index best = 0;
    probs.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best) + 1;
  }
  return out;
}

namespace {

double class_f1(std::span<const int> y_true, std::span<const int> y_pred, int c) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool t = y_true[i] == c, p = y_pred[i] == c;
    tp += t && p;
    fp += !t && p;
    fn += t && !p;
  }
  const double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 0.0;
}

}  // namespace

double macro_f1(std::span<const int> y_true, std::span<const int> y_pred, int num_classes) {
  // Average over classes that appear in either the truth or the predictions.
  std::set<int> present(y_true.begin(), y_true.end());
  present.insert(y_pred.begin(), y_pred.end());
  double sum = 0;
  int count = 0;
  for (int c : present) {
    if (c < 1 || c > num_classes) continue;
    sum += class_f1(y_true, y_pred, c);
    ++count;
  }
  return count ? sum / count : 0.0;
}

double expected_calibration_error(std::span<const int> y_true, const Eigen::MatrixXd& probs, int bins) {
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0), acc_sum(static_cast<std::size_t>(bins), 0);
  std::vector<int> count(static_cast<std::size_t>(bins), 0);
  const auto pred = argmax_labels(probs);
  for (Index i = 0; i < probs.rows(); ++i) {
    const double conf = probs.row(i).maxCoeff();
    // Bins are (k/B, (k+1)/B]; confidence 0 falls in the first bin.
    int b = static_cast<int>(std::ceil(conf * bins)) - 1;
    b = std::clamp(b, 0, bins - 1);
    const auto bb = static_cast<std::size_t>(b);
    conf_sum[bb] += conf;
    acc_sum[bb] += pred[static_cast<std::size_t>(i)] == y_true[static_cast<std::size_t>(i)];
    ++count[bb];
  }
  double ece = 0;
  for (std::size_t b = 0; b < conf_sum.size(); ++b)
    if (count[b]) ece += std::abs(acc_sum[b] - conf_sum[b]) / static_cast<double>(probs.rows());
  return ece;
}

MetricReport classification_metrics(std::span<const int> y_true, std::span<const int> y_pred, int num_classes) {
  if (y_true.size() != y_pred.size()) throw DataError("metrics: length mismatch");
  if (y_true.empty()) throw DataError("metrics: empty input");
  MetricReport m;
  double correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) correct += y_true[i] == y_pred[i];
  m.accuracy = correct / static_cast<double>(y_true.size());
  m.macro_f1 = macro_f1(y_true, y_pred, num_classes);
  std::vector<int> support(static_cast<std::size_t>(num_classes) + 1, 0);
  for (int y : y_true)
    if (y >= 1 && y <= num_classes) ++support[static_cast<std::size_t>(y)];
  int minority = 0;
  for (int c = 1; c <= num_classes; ++c)
    if (support[static_cast<std::size_t>(c)] > 0 &&
        (minority == 0 || support[static_cast<std::size_t>(c)] < support[static_cast<std::size_t>(minority)]))
      minority = c;
  if (minority) m.minority_f1 = class_f1(y_true, y_pred, minority);
  return m;
}

MetricReport classification_metrics(std::span<const int> y_true, const Eigen::MatrixXd& probs) {
  if (static_cast<Index>(y_true.size()) != probs.rows()) throw DataError("metrics: length mismatch");
  for (Index i = 0; i < probs.rows(); ++i)
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-6) throw DataError("metrics: probability row does not sum to 1");
  const auto pred = argmax_labels(probs);
  MetricReport m = classification_metrics(y_true, pred, static_cast<int>(probs.cols()));
  m.ece = expected_calibration_error(y_true, probs);
  return m;
}

}  // namespace rescorr
