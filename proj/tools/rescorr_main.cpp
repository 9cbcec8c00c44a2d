// rescorr command-line front end. Exit codes: 0 ok, 2 config, 3 provider, 4 data.
#include "rescorr/bench.hpp"
#include "rescorr/pipeline.hpp"
#include "rescorr/stats.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

using namespace rescorr;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitProvider = 3;
constexpr int kExitData = 4;

std::vector<double> read_numbers(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    for (char& c : tok)
      if (c == ',') c = ' ';
    std::istringstream ss(tok);
    double v;
    while (ss >> v) out.push_back(v);
  }
  return out;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string dataset, provider, output;
  std::optional<std::uint64_t> seed;
  std::optional<int> K, T;
  bool anonymize = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  // Precedence: defaults < config file < --set pairs < dedicated flags.
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.dataset.empty()) c.dataset = a.dataset;
  if (!a.provider.empty()) c.provider = a.provider;
  if (!a.output.empty()) c.output_dir = a.output;
  if (a.seed) c.seed = *a.seed;
  if (a.K) c.K = *a.K;
  if (a.T) c.T = *a.T;
  if (a.anonymize) c.anonymize_features = true;
  const TrainOutcome o = run_train(c);
  const json r = json::parse(o.final_results);
  std::cout << "artifact: " << c.output_dir << "\n";
  std::cout << "mechanisms retained: " << o.result.model.mechanisms.size() << "\n";
  std::cout << "provider calls: " << r["calls"]["total"] << " (expected " << r["calls"]["expected"] << ")\n";
  if (r.contains("delta_r2_vs_ml")) std::cout << "test delta R2 vs base: " << r["delta_r2_vs_ml"] << "\n";
  if (r.contains("delta_macro_f1_vs_ml")) std::cout << "test delta macro-F1 vs base: " << r["delta_macro_f1_vs_ml"] << "\n";
  return 0;
}

struct TransferArgs {
  bool synthetic = false;
  std::string plates_csv, plate_column = "plate", cohort_column;
  std::vector<std::string> sources;
  std::string ablation = "averaged_blend";
  std::string ml_source = "auto";
  bool unfiltered = false, below_filter = false, include_self = false, residual_pilot = false;
  double beta = 0.5;
  std::uint64_t seed = 0;
  std::string out = "transfer";
};

int cmd_transfer(const TransferArgs& a) {
  TransferConfig tc;
  tc.beta_transfer = a.beta;
  tc.ablation = transfer_ablation_from_string(a.ablation);
  tc.ml_source = ml_source_from_string(a.ml_source);
  tc.filter = a.below_filter ? SourceFilter::below_filter : a.unfiltered ? SourceFilter::unfiltered : SourceFilter::filtered;
  tc.include_self = a.include_self;
  tc.residual_pilot = a.residual_pilot;
  tc.split_seed = a.seed;
  std::vector<Plate> plates;
  std::vector<SourceRun> sources;
  if (a.synthetic) {
    CohortPlates cp = make_cohort_plates(CohortPlateSpec{}, tc);
    plates = std::move(cp.plates);
    sources = std::move(cp.sources);
  } else {
    if (a.plates_csv.empty()) throw ConfigError("transfer: give --synthetic-cohorts or --plates");
    plates = plates_from_csv(a.plates_csv, a.plate_column, a.cohort_column);
  }
  for (const auto& dir : a.sources) sources.push_back(source_run_from_artifact(dir));
  if (sources.empty()) throw ConfigError("transfer: no source runs");
  const TransferReport rep = transfer_eval(plates, sources, tc);
  std::filesystem::create_directories(a.out);
  write_transfer_csv(rep, std::filesystem::path(a.out) / "transfer.csv");
  write_file(std::filesystem::path(a.out) / "aggregate.json", transfer_aggregate_json(rep, tc) + "\n");
  std::cout << "sources used: " << rep.sources_used << "/" << rep.sources_total << "\n";
  std::cout << "within-cohort improving: " << rep.within.pct_improving << "% of " << rep.within.evaluated << "\n";
  std::cout << "across-cohort improving: " << rep.across.pct_improving << "% of " << rep.across.evaluated << "\n";
  return 0;
}

struct SynthArgs {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  bool check_budget = false;
  long draws = 1'000'000;
  std::string out = "synth";
  bool write_data = false;
};

int cmd_synth(const SynthArgs& a) {
  const SyntheticSpec spec;
  std::filesystem::create_directories(a.out);
  json j = json::object();
  std::ostringstream csv;
  csv << "seed,linear_r2,oracle_r2,oracle_residual_var\n";
  double lin = 0, orc = 0;
  for (auto seed : a.seeds) {
    const SyntheticBaseline b = synthetic_baseline(spec, seed);
    csv << seed << "," << b.linear_r2 << "," << b.oracle_r2 << "," << b.oracle_residual_var << "\n";
    lin += b.linear_r2;
    orc += b.oracle_r2;
    if (a.write_data) {
      const SyntheticData s = generate_synthetic(spec, seed);
      save_dataset_csv(s.data, std::filesystem::path(a.out) / ("synthetic_seed" + std::to_string(seed) + ".csv"), "Y");
    }
  }
  if (!a.seeds.empty()) {
    lin /= static_cast<double>(a.seeds.size());
    orc /= static_cast<double>(a.seeds.size());
    j["mean_linear_r2"] = lin;
    j["mean_oracle_r2"] = orc;
    std::cout << "mean linear R2: " << lin << "\nmean oracle R2: " << orc << "\n";
  }
  if (a.check_budget) {
    const VarianceBudget v = variance_budget(spec, a.draws);
    j["budget"] = {{"linear", v.linear}, {"sigmoid", v.sigmoid}, {"sin", v.sin},
                   {"noise", v.noise},   {"signal", v.signal},   {"ceiling", v.ceiling}};
    std::cout << "variance: linear " << v.linear << ", sigmoid " << v.sigmoid << ", sin " << v.sin << ", noise "
              << v.noise << ", ceiling " << v.ceiling << "\n";
  }
  write_file(std::filesystem::path(a.out) / "baselines.csv", csv.str());
  write_file(std::filesystem::path(a.out) / "summary.json", j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rescorr: residual-driven symbolic corrections for tabular models"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run the agent loop and write a run artifact");
  train->add_option("-c,--config", ta.config, "Flat JSON config file");
  train->add_option("--set", ta.sets, "Override a config key (key=value), repeatable");
  train->add_option("--dataset", ta.dataset, "Dataset CSV (last column is the target)");
  train->add_option("--provider", ta.provider, "scripted:<transcript> or an http(s) endpoint");
  train->add_option("-o,--output", ta.output, "Artifact directory");
  train->add_option("--seed", ta.seed, "Split seed");
  train->add_option("-K", ta.K, "Number of agents");
  train->add_option("-T", ta.T, "Refinement iterations");
  train->add_flag("--anonymize", ta.anonymize, "Show features to the provider as feat_i");

  std::string bundle, input, output, row_id_column;
  bool explain = false;
  auto* predict = app.add_subcommand("predict", "Apply a trained bundle to a CSV (no provider calls)");
  predict->add_option("--bundle", bundle, "Bundle directory (artifact/bundle)")->required();
  predict->add_option("-i,--input", input, "Input CSV with the training feature columns")->required();
  predict->add_option("-o,--output", output, "Predictions CSV")->required();
  predict->add_option("--row-id-column", row_id_column);
  predict->add_flag("--explain", explain, "Emit per-mechanism alpha and delta columns");

  TransferArgs tr;
  auto* transfer = app.add_subcommand("transfer", "Evaluate frozen formulas across plates");
  transfer->add_flag("--synthetic-cohorts", tr.synthetic, "Use the built-in two-cohort plates and sources");
  transfer->add_option("--plates", tr.plates_csv, "CSV with one row per well and a plate column");
  transfer->add_option("--plate-column", tr.plate_column);
  transfer->add_option("--cohort-column", tr.cohort_column);
  transfer->add_option("--source", tr.sources, "Train artifact directory, repeatable");
  transfer->add_option("--ablation", tr.ablation, "averaged_blend | per_formula | formula_only | joint");
  transfer->add_option("--ml-source", tr.ml_source, "transfer | retrain | auto");
  transfer->add_flag("--unfiltered", tr.unfiltered, "Keep sources with non-positive source delta R2");
  transfer->add_flag("--below-filter", tr.below_filter, "Use only the sources the filter would drop");
  transfer->add_flag("--include-self", tr.include_self);
  transfer->add_flag("--residual-pilot", tr.residual_pilot);
  transfer->add_option("--beta", tr.beta);
  transfer->add_option("--seed", tr.seed, "Target-plate split seed");
  transfer->add_option("-o,--output", tr.out);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Planted-ground-truth synthetic benchmark");
  synth->add_option("--seeds", sa.seeds, "comma-separated generator seeds")->delimiter(',');
  synth->add_flag("--check-budget", sa.check_budget, "Monte Carlo variance budget");
  synth->add_option("--draws", sa.draws);
  synth->add_flag("--write-data", sa.write_data, "Also write the generated datasets");
  synth->add_option("-o,--output", sa.out);

  auto* stats = app.add_subcommand("stats", "Paired tests and multiple-comparison correction");
  stats->require_subcommand(1);
  std::vector<double> pvals;
  std::string pfile;
  std::size_t m = 0;
  auto* bh = stats->add_subcommand("bh", "Benjamini-Hochberg q-values");
  bh->add_option("p", pvals, "p-values");
  bh->add_option("--file", pfile, "File of p-values (whitespace or comma separated)");
  bh->add_option("-m", m, "Family size (defaults to the number of p-values)");
  std::vector<double> wa, wb;
  std::string fa, fb;
  auto* wil = stats->add_subcommand("wilcoxon", "Paired signed-rank test of a vs b");
  wil->add_option("--a", wa)->delimiter(',');
  wil->add_option("--b", wb)->delimiter(',');
  wil->add_option("--a-file", fa);
  wil->add_option("--b-file", fb);

  std::string an_in, an_out, an_map;
  std::vector<std::string> keep;
  auto* anon = app.add_subcommand("anonymize", "Rename feature columns to feat_i");
  anon->add_option("-i,--input", an_in)->required();
  anon->add_option("-o,--output", an_out)->required();
  anon->add_option("--map", an_map, "Where to write the name map (JSON)");
  anon->add_option("--keep", keep, "Columns to leave untouched");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  set_log_level(verbose ? LogLevel::info : LogLevel::warn);

  try {
    if (*train) return cmd_train(ta);
    if (*predict) {
      PredictOptions po;
      po.explain = explain;
      po.row_id_column = row_id_column;
      run_predict(bundle, input, output, po);
      return 0;
    }
    if (*transfer) return cmd_transfer(tr);
    if (*synth) return cmd_synth(sa);
    if (*bh) {
      if (!pfile.empty()) pvals = read_numbers(pfile);
      if (pvals.empty()) throw ConfigError("bh: no p-values");
      const auto q = bh_correct(pvals, m);
      std::cout << "p,q\n";
      for (std::size_t i = 0; i < q.size(); ++i) std::cout << pvals[i] << "," << round_decimals(q[i], 3) << "\n";
      return 0;
    }
    if (*wil) {
      if (!fa.empty()) wa = read_numbers(fa);
      if (!fb.empty()) wb = read_numbers(fb);
      if (wa.size() != wb.size() || wa.empty()) throw ConfigError("wilcoxon: a and b must be non-empty and equal length");
      const WilcoxonResult w = wilcoxon_paired(wa, wb);
      std::cout << json({{"n", w.n}, {"w_plus", w.w_plus}, {"p_value", w.p_value}, {"exact", w.exact}}).dump() << "\n";
      return 0;
    }
    if (*anon) {
      const auto map = anonymize_csv(an_in, an_out, keep);
      if (!an_map.empty()) write_file(an_map, json(map).dump(2) + "\n");
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ProviderError& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return kExitProvider;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormulaError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
