// robustcov: covariance estimation from incomplete data, benchmark harness
// and imputation / classification / clustering experiments.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <thread>

#include "robustcov/bench.hpp"
#include "robustcov/impute.hpp"
#include "robustcov/io.hpp"

namespace fs = std::filesystem;
using namespace robustcov;

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "configuration file (key = value)")->required();
  cmd->add_option("--out", args.out, "output directory")->required();
  cmd->add_option("--seed", args.seed, "master seed (overrides the config)")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--threads", args.threads, "worker threads (default: hardware)");
}

std::uint64_t master_seed(const CommonArgs& args, const KvConfig& cfg) {
  return args.seed_set ? args.seed : cfg.get_u64("seed", 0);
}

int thread_count(const CommonArgs& args) {
  if (args.threads > 0) return args.threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

EstimatorKind parse_kind(const std::string& token) {
  if (token == "em_tyl") return EstimatorKind::em_tyl;
  if (token == "em_scm") return EstimatorKind::em_scm;
  if (token == "scm") return EstimatorKind::scm;
  if (token == "tyler") return EstimatorKind::tyler;
  if (token == "rmi") return EstimatorKind::rmi;
  if (token == "rsi") return EstimatorKind::rsi;
  if (token == "mean_tyl") return EstimatorKind::mean_tyl;
  throw config_error("unknown estimator: " + token);
}

int cmd_simulate(const CommonArgs& args) {
  const auto cfg = KvConfig::parse_file(args.config);
  const std::uint64_t seed = master_seed(args, cfg);
  fs::create_directories(args.out);
  const fs::path out(args.out);

  const int p = cfg.get_int("p", 15);
  const int n = cfg.get_int("n", 200);
  const std::string generator = cfg.get_str("generator", "msg");

  Matrix<double> data;
  if (generator == "msg") {
    Matrix<double> cov = toeplitz_scatter<double>(p, cfg.get_num("rho", 0.7));
    const int rank = cfg.get_int("rank", 0);
    if (rank > 0) cov = lowrank_cov(cov, rank, cfg.get_num("snr_sigma2", 10.0)).sigma;
    const auto msg = sample_msg(cov, n, cfg.get_num("alpha", 1.0), seed);
    data = msg.data;
    write_matrix_csv(out / "sigma_true.csv", cov);
    write_matrix_csv(out / "textures.csv", Matrix<double>(msg.textures.transpose()));
  } else if (generator == "haystack") {
    const auto hay = sample_haystack<double>(p, n, cfg.get_int("k", 5),
                                             cfg.get_num("sigma_s2", 10.0),
                                             cfg.get_num("sigma_o2", 15.0),
                                             cfg.get_num("outlier_ratio", 0.3), seed);
    data = hay.data;
    std::ofstream labels(out / "labels.csv");
    labels << "sample,label\n";
    for (std::size_t j = 0; j < hay.labels.size(); ++j)
      labels << j << ',' << hay.labels[j] << '\n';
  } else {
    throw config_error("generator must be 'msg' or 'haystack'");
  }

  IncompleteMatrix<double> inc;
  const std::string pattern = cfg.get_str("pattern", "none");
  if (pattern == "none") {
    inc = IncompleteMatrix<double>::complete(data);
  } else {
    PatternSpec spec;
    spec.seed = Rng::stream(seed, 91).next_u64();
    if (pattern == "monotone") {
      spec.kind = PatternKind::monotone;
      spec.block_rows = cfg.get_int("monotone_rows", 7);
      spec.block_cols = cfg.get_int("monotone_cols", 20);
    } else if (pattern == "general") {
      spec = general_spec_for(p, n, cfg.get_num("ratio", 0.2), spec.seed);
    } else if (pattern == "random") {
      spec.kind = PatternKind::random_cells;
      spec.target_ratio = cfg.get_num("ratio", 0.2);
    } else {
      throw config_error("pattern must be none|monotone|general|random");
    }
    inc = apply_pattern(data, spec);
  }
  write_incomplete_csv(out / "data.csv", inc);
  std::cout << "wrote " << (out / "data.csv").string() << " (p=" << p << ", n=" << n
            << ", missing=" << format_number(inc.missing_ratio()) << ")\n";
  return 0;
}

int cmd_estimate(const CommonArgs& args) {
  const auto cfg = KvConfig::parse_file(args.config);
  const std::uint64_t seed = master_seed(args, cfg);
  fs::create_directories(args.out);
  const fs::path out(args.out);

  const auto data = read_incomplete_csv<double>(cfg.require("input"));
  const std::string token = cfg.get_str("estimator", "em_tyl");
  EstimatorConfig<double> ec = bench_detail::estimator_settings<double>(cfg);
  ec.kind = parse_kind(token);
  ec.rank = cfg.get_int("rank", 0);
  ec.seed = seed;

  ShapeEstimate<double> est;
  switch (ec.kind) {
    case EstimatorKind::em_tyl:
    case EstimatorKind::em_scm:
      est = run_em(data, ec);
      break;
    case EstimatorKind::rmi:
    case EstimatorKind::rsi:
    case EstimatorKind::mean_tyl:
      est = impute_baselines(data, ec);
      break;
    case EstimatorKind::scm:
    case EstimatorKind::tyler: {
      if (!data.mask.all())
        throw config_error("estimator '" + token + "' requires complete data");
      est.textures = Vector<double>::Ones(data.n());
      est.sigma = ec.kind == EstimatorKind::scm
                      ? scm(data.values)
                      : tyler(data.values, ec.fp_tol, ec.em_max_iter, ec.normalization);
      if (ec.rank > 0) est.sigma = low_rank_project(est.sigma, ec.rank).sigma;
      break;
    }
  }
  save_estimate(out / "estimate", est, token);
  std::cout << "wrote " << (out / "estimate.csv").string() << " (iterations=" << est.iterations
            << ", converged=" << (est.converged ? "yes" : "no") << ")\n";
  return 0;
}

int cmd_impute(const CommonArgs& args) {
  const auto cfg = KvConfig::parse_file(args.config);
  const std::uint64_t seed = master_seed(args, cfg);
  fs::create_directories(args.out);
  const fs::path out(args.out);

  const auto data = read_incomplete_csv<double>(cfg.require("input"));
  ImputeConfig<double> ic;
  ic.k = cfg.get_int("k", 1);
  ic.max_outer_iter = cfg.get_int("max_outer_iter", 100);
  ic.outer_tol = cfg.get_num("outer_tol", 1e-8);
  ic.cv_fraction = cfg.get_num("cv_fraction", 0.01);
  ic.regression_reconstruction = cfg.get_int("regression_reconstruction", 0) != 0;
  ic.seed = seed;
  ic.em = bench_detail::estimator_settings<double>(cfg);
  const std::string final_est = cfg.get_str("final_estimator", "scm");
  if (final_est == "em_tyl_r")
    ic.final_estimator = ImputeConfig<double>::Final::em_tyl_r;
  else if (final_est != "scm")
    throw config_error("final_estimator must be 'scm' or 'em_tyl_r'");

  const auto result = em_eof_impute(data, ic);
  write_matrix_csv(out / "completed.csv", result.completed);
  nlohmann::json j;
  j["rmse"] = double(result.cv.rmse);
  j["outer_iterations"] = result.outer_iterations;
  j["converged"] = result.converged;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : result.cv.cells)
    cells.push_back({{"row", c.row},
                     {"col", c.col},
                     {"truth", double(c.truth)},
                     {"imputed", double(c.imputed)}});
  j["cv_cells"] = cells;
  std::ofstream report(out / "cv_report.json");
  report << j.dump(2) << '\n';
  std::cout << "wrote " << (out / "completed.csv").string()
            << " (cv rmse=" << format_number(double(result.cv.rmse)) << ")\n";
  return 0;
}

int cmd_benchmark(const CommonArgs& args, const std::string& forced_experiment) {
  auto cfg = KvConfig::parse_file(args.config);
  if (!forced_experiment.empty() && cfg.get_str("experiment", forced_experiment) != forced_experiment)
    throw config_error("config experiment conflicts with the subcommand");
  const std::uint64_t seed = master_seed(args, cfg);
  BenchOptions opt;
  opt.seed = seed;
  opt.threads = thread_count(args);

  KvConfig effective = cfg;
  if (!forced_experiment.empty() && !cfg.has("experiment")) {
    effective = KvConfig::parse_string(cfg.raw() + "\nexperiment = " + forced_experiment + "\n");
  }
  const auto result = run_experiment(effective, opt);
  write_results(args.out, result, effective, seed);
  std::cout << "wrote " << (fs::path(args.out) / "results.csv").string() << " ("
            << result.rows.size() << " rows, " << result.failed << " failed)\n";
  return result.failed > 0 ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust covariance estimation with missing values"};
  app.require_subcommand(1);

  CommonArgs args;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic data set");
  auto* est = app.add_subcommand("estimate", "estimate a covariance from a CSV with NA cells");
  auto* bench = app.add_subcommand("benchmark", "run a full experiment grid");
  auto* imp = app.add_subcommand("impute", "fill gaps with the iterative low-rank imputer");
  auto* cls = app.add_subcommand("classify", "run the synthetic classification experiment");
  auto* clu = app.add_subcommand("cluster", "run the synthetic clustering experiment");
  for (auto* cmd : {sim, est, bench, imp, cls, clu}) add_common(cmd, args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(args);
    if (est->parsed()) return cmd_estimate(args);
    if (imp->parsed()) return cmd_impute(args);
    if (bench->parsed()) return cmd_benchmark(args, "");
    if (cls->parsed()) return cmd_benchmark(args, "classify");
    if (clu->parsed()) return cmd_benchmark(args, "cluster");
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
