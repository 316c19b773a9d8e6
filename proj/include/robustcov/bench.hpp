#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "robustcov/impute.hpp"
#include "robustcov/io.hpp"
#include "robustcov/spd_ml.hpp"
#include "robustcov/version.hpp"

namespace robustcov {

/// Flat `key = value` configuration file; '#' starts a comment. Lists are
/// comma separated.
class KvConfig {
 public:
  static KvConfig parse_string(const std::string& text) {
    KvConfig cfg;
    cfg.raw_ = text;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw config_error("config line " + std::to_string(lineno) + ": empty key");
      cfg.kv_[key] = value;
    }
    return cfg;
  }

  static KvConfig parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw config_error("missing config key: " + key);
    return it->second;
  }

  double get_num(const std::string& key, double fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return to_num(key, it->second);
  }

  int get_int(const std::string& key, int fallback) const {
    return static_cast<int>(get_num(key, fallback));
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw config_error("config key " + key + ": not an unsigned integer");
    }
  }

  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto t = trim(item);
      if (!t.empty()) out.push_back(t);
    }
    if (out.empty()) throw config_error("config key " + key + ": empty list");
    return out;
  }

  std::vector<double> get_num_list(const std::string& key,
                                   const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : get_list(key, {})) out.push_back(to_num(key, s));
    return out;
  }

  const std::string& raw() const { return raw_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  static double to_num(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw config_error("config key " + key + ": '" + v + "' is not a number");
    }
  }
  std::map<std::string, std::string> kv_;
  std::string raw_;
};

/// Work-stealing loop over task indices. Results must be written to
/// per-task slots so the output does not depend on scheduling.
inline void parallel_for(int ntasks, int nthreads, const std::function<void(int)>& fn) {
  nthreads = std::max(1, std::min(nthreads, ntasks));
  if (nthreads <= 1) {
    for (int i = 0; i < ntasks; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(nthreads));
  for (int w = 0; w < nthreads; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= ntasks) return;
        try {
          fn(i);
        } catch (...) {
          std::scoped_lock lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

struct ResultRow {
  std::string experiment;
  std::string estimator;
  int n = 0;
  std::string pattern;
  double ratio = 0;
  int replicate = 0;
  std::string metric;
  double value = 0;
  double wall_ms = 0;
};

struct BenchResult {
  std::vector<ResultRow> rows;
  long failed = 0;
  std::string experiment;
};

struct BenchOptions {
  std::uint64_t seed = 0;
  int threads = 1;
};

/// results.csv holds the metric rows and is byte-deterministic for a fixed
/// (config, seed); wall-clock timings go to the companion timings.csv.
inline void write_results(const std::filesystem::path& dir, const BenchResult& result,
                          const KvConfig& cfg, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "results.csv");
    if (!out) throw config_error("cannot write " + (dir / "results.csv").string());
    out << "experiment,estimator,n,pattern,ratio,replicate,metric,value\n";
    for (const auto& r : result.rows)
      out << r.experiment << ',' << r.estimator << ',' << r.n << ',' << r.pattern << ','
          << format_number(r.ratio) << ',' << r.replicate << ',' << r.metric << ','
          << format_number(r.value) << '\n';
  }
  {
    std::ofstream out(dir / "timings.csv");
    out << "experiment,estimator,n,pattern,ratio,replicate,metric,wall_ms\n";
    for (const auto& r : result.rows)
      out << r.experiment << ',' << r.estimator << ',' << r.n << ',' << r.pattern << ','
          << format_number(r.ratio) << ',' << r.replicate << ',' << r.metric << ','
          << format_number(r.wall_ms) << '\n';
  }
  {
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : cfg.raw()) h = (h ^ c) * 1099511628211ULL;
    nlohmann::json j;
    j["config_hash"] = format_number(static_cast<long long>(h));
    j["experiment"] = result.experiment;
    j["failed_rows"] = result.failed;
    j["library_version"] = kVersion;
    j["rows"] = result.rows.size();
    j["seed"] = seed;
    std::ofstream out(dir / "manifest.json");
    out << j.dump(2) << '\n';
  }
}

namespace bench_detail {

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c = 0) {
  return Rng::stream(master, a, b, c).next_u64();
}

inline std::string estimator_display(const std::string& token, bool low_rank) {
  static const std::map<std::string, std::string> names = {
      {"em_tyl", "EM-Tyl"},           {"em_scm", "EM-SCM"},
      {"tyl_clair", "Tyl-clair"},     {"tyl_obs", "Tyl-obs"},
      {"scm_clair", "SCM-clair"},     {"scm_obs", "SCM-obs"},
      {"rmi", "RMI"},                 {"rsi", "RSI"},
      {"mean_tyl", "Mean-Tyl"},       {"em_tyl_pi_tau", "EM-Tyl-PiTau"}};
  const auto it = names.find(token);
  if (it == names.end()) throw config_error("unknown estimator token: " + token);
  return low_rank ? it->second + "-r" : it->second;
}

/// Obs-only estimators never take the rank projection (they have no
/// low-rank variant in the comparison set).
inline bool rank_applies(const std::string& token) {
  return token != "tyl_obs" && token != "scm_obs";
}

template <class Scalar>
Matrix<Scalar> observed_columns(const IncompleteMatrix<Scalar>& data) {
  const auto [full, partial] = split_sample_sets(data);
  if (full.empty()) throw invalid_input("no fully observed samples");
  Matrix<Scalar> out(data.p(), static_cast<Eigen::Index>(full.size()));
  for (std::size_t k = 0; k < full.size(); ++k)
    out.col(static_cast<Eigen::Index>(k)) = data.values.col(full[k]);
  return out;
}

template <class Scalar>
EstimatorConfig<Scalar> estimator_settings(const KvConfig& cfg) {
  EstimatorConfig<Scalar> ec;
  ec.em_tol = Scalar(cfg.get_num("em_tol", 1e-6));
  ec.em_max_iter = cfg.get_int("em_max_iter", 200);
  ec.fp_iters_per_em = cfg.get_int("fp_iters_per_em", 1);
  ec.fp_tol = Scalar(cfg.get_num("fp_tol", 1e-8));
  const std::string norm = cfg.get_str("normalization", "trace");
  if (norm == "trace")
    ec.normalization = Normalization::trace;
  else if (norm == "determinant")
    ec.normalization = Normalization::determinant;
  else
    throw config_error("normalization must be 'trace' or 'determinant'");
  ec.q_imputations = cfg.get_int("q_imputations", 10);
  ec.project_before_averaging = cfg.get_int("project_before_averaging", 0) != 0;
  return ec;
}

/// Squared geodesic error between trace-normalized shapes.
template <class Scalar>
Scalar shape_error(const Matrix<Scalar>& truth, const Matrix<Scalar>& estimate) {
  return geodesic_distance_sq(normalize_shape(truth, Normalization::trace),
                              normalize_shape(estimate, Normalization::trace));
}

/// Evaluate one comparison estimator on a replicate's data.
template <class Scalar>
Matrix<Scalar> eval_estimator(const std::string& token, const Matrix<Scalar>& clairvoyant,
                              const IncompleteMatrix<Scalar>& incomplete,
                              EstimatorConfig<Scalar> ec, int rank, std::uint64_t seed) {
  ec.seed = seed;
  ec.rank = rank_applies(token) ? rank : 0;
  if (token == "em_tyl" || token == "em_scm") {
    ec.kind = token == "em_tyl" ? EstimatorKind::em_tyl : EstimatorKind::em_scm;
    return run_em(incomplete, ec).sigma;
  }
  if (token == "rmi" || token == "rsi" || token == "mean_tyl") {
    ec.kind = token == "rmi"   ? EstimatorKind::rmi
              : token == "rsi" ? EstimatorKind::rsi
                               : EstimatorKind::mean_tyl;
    return impute_baselines(incomplete, ec).sigma;
  }
  Matrix<Scalar> s;
  if (token == "tyl_clair")
    s = tyler(clairvoyant, ec.fp_tol, ec.em_max_iter, ec.normalization);
  else if (token == "scm_clair")
    s = scm(clairvoyant);
  else if (token == "tyl_obs")
    s = tyler(observed_columns(incomplete), ec.fp_tol, ec.em_max_iter, ec.normalization);
  else if (token == "scm_obs")
    s = scm(observed_columns(incomplete));
  else
    throw config_error("unknown estimator token: " + token);
  if (ec.rank > 0) s = low_rank_project(s, ec.rank).sigma;
  return s;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace bench_detail

/// Covariance-error sweep over sample counts and missingness patterns.
inline BenchResult run_pattern_sweep(const KvConfig& cfg, const BenchOptions& opt) {
  using S = double;
  namespace bd = bench_detail;
  const int p = cfg.get_int("p", 15);
  const double rho = cfg.get_num("rho", 0.7);
  const double alpha = cfg.get_num("alpha", 1.0);
  const double snr_sigma2 = cfg.get_num("snr_sigma2", 10.0);
  const int rank = cfg.get_int("rank", 0);
  const int replicates = cfg.get_int("replicates", 100);
  const auto n_grid_f = cfg.get_num_list("n_grid", {63, 109, 190, 331, 575, 1000});
  const auto patterns = cfg.get_list("patterns", {"monotone", "general", "random"});
  const auto estimators = cfg.get_list(
      "estimators", {"em_tyl", "em_scm", "tyl_clair", "tyl_obs", "scm_clair", "scm_obs",
                     "rmi", "mean_tyl"});
  std::vector<int> n_grid;
  for (const double v : n_grid_f) n_grid.push_back(static_cast<int>(v));
  std::vector<double> ratios;
  if (cfg.has("ratio_grid")) {
    ratios = cfg.get_num_list("ratio_grid", {});
    if (ratios.size() != n_grid.size())
      throw config_error("ratio_grid must match n_grid length");
  } else {
    for (const int n : n_grid) ratios.push_back(scheduled_missing_ratio(n));
  }
  const auto ec_base = bd::estimator_settings<S>(cfg);

  Matrix<S> truth = toeplitz_scatter<S>(p, rho);
  if (rank > 0) truth = lowrank_cov(truth, rank, S(snr_sigma2)).sigma;

  struct Cell {
    int n_idx, pat_idx, rep;
  };
  std::vector<Cell> cells;
  for (int a = 0; a < static_cast<int>(n_grid.size()); ++a)
    for (int b = 0; b < static_cast<int>(patterns.size()); ++b)
      for (int r = 0; r < replicates; ++r) cells.push_back({a, b, r});

  std::vector<std::vector<ResultRow>> slots(cells.size());
  parallel_for(static_cast<int>(cells.size()), opt.threads, [&](int t) {
    const auto [n_idx, pat_idx, rep] = cells[static_cast<std::size_t>(t)];
    const int n = n_grid[static_cast<std::size_t>(n_idx)];
    const std::string& pattern = patterns[static_cast<std::size_t>(pat_idx)];
    const std::uint64_t cell_seed =
        bd::derive_seed(opt.seed, 101, static_cast<std::uint64_t>(t), 0);

    const auto msg = sample_msg(truth, n, S(alpha), bd::derive_seed(cell_seed, 1, 0));
    PatternSpec spec;
    double ratio = ratios[static_cast<std::size_t>(n_idx)];
    if (pattern == "monotone") {
      spec.kind = PatternKind::monotone;
      spec.block_rows = cfg.get_int("monotone_rows", 7);
      spec.block_cols = cfg.get_int("monotone_cols", 20);
      ratio = double(spec.block_rows * spec.block_cols) / (double(p) * double(n));
    } else if (pattern == "general") {
      spec = general_spec_for(p, n, ratio, bd::derive_seed(cell_seed, 2, 0));
    } else if (pattern == "random") {
      spec.kind = PatternKind::random_cells;
      spec.target_ratio = ratio;
      spec.seed = bd::derive_seed(cell_seed, 2, 0);
    } else {
      throw config_error("unknown pattern: " + pattern);
    }
    const auto incomplete = apply_pattern(msg.data, spec);

    auto& rows = slots[static_cast<std::size_t>(t)];
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const std::string& token = estimators[e];
      ResultRow row;
      row.experiment = "pattern_sweep";
      row.estimator = bd::estimator_display(token, rank > 0 && bd::rank_applies(token));
      row.n = n;
      row.pattern = pattern;
      row.ratio = ratio;
      row.replicate = rep;
      bd::Stopwatch clock;
      try {
        const auto est = bd::eval_estimator(token, msg.data, incomplete, ec_base, rank,
                                            bd::derive_seed(cell_seed, 3, e));
        row.metric = "geo_err";
        row.value = bd::shape_error(truth, est);
      } catch (const std::exception&) {
        row.metric = "failed";
        row.value = 1;
      }
      row.wall_ms = clock.ms();
      rows.push_back(std::move(row));
    }
  });

  BenchResult out;
  out.experiment = "pattern_sweep";
  for (auto& s : slots)
    for (auto& r : s) {
      out.failed += r.metric == "failed";
      out.rows.push_back(std::move(r));
    }
  return out;
}

/// Corrupt-then-mask study: Tyler on corrupted data versus the EM estimator
/// on data whose outlier samples were masked out, against the clairvoyant
/// references.
inline BenchResult run_outlier_mask(const KvConfig& cfg, const BenchOptions& opt) {
  using S = double;
  namespace bd = bench_detail;
  const int p = cfg.get_int("p", 15);
  const int n = cfg.get_int("n", 200);
  const int data_rank = cfg.get_int("data_rank", 5);
  const double alpha = cfg.get_num("alpha", 1.0);
  const double snr_sigma2 = cfg.get_num("snr_sigma2", 10.0);
  const double sigma_data = std::sqrt(snr_sigma2);
  const int replicates = cfg.get_int("replicates", 200);
  const auto ratios = cfg.get_num_list("outlier_ratios", {0, 0.1, 0.2, 0.3, 0.4, 0.5});
  const auto factors = cfg.get_num_list("wgn_factors", {0.1, 0.5, 1.0, 2.0});
  const auto ec = bd::estimator_settings<S>(cfg);

  const Matrix<S> truth = lowrank_cov(toeplitz_scatter<S>(p, cfg.get_num("rho", 0.7)),
                                      data_rank, S(snr_sigma2))
                              .sigma;

  std::vector<std::vector<ResultRow>> slots(static_cast<std::size_t>(replicates));
  parallel_for(replicates, opt.threads, [&](int rep) {
    auto& rows = slots[static_cast<std::size_t>(rep)];
    const std::uint64_t rep_seed = bd::derive_seed(opt.seed, 102, static_cast<std::uint64_t>(rep));
    const auto msg = sample_msg(truth, n, S(alpha), bd::derive_seed(rep_seed, 1, 0));

    const auto emit = [&](const std::string& name, const std::string& pattern, double ratio,
                          const std::function<Matrix<S>()>& make) {
      ResultRow row;
      row.experiment = "outlier_mask";
      row.estimator = name;
      row.n = n;
      row.pattern = pattern;
      row.ratio = ratio;
      row.replicate = rep;
      bd::Stopwatch clock;
      try {
        row.metric = "geo_err";
        row.value = bd::shape_error(truth, make());
      } catch (const std::exception&) {
        row.metric = "failed";
        row.value = 1;
      }
      row.wall_ms = clock.ms();
      rows.push_back(std::move(row));
    };

    emit("Tyl-clair", "clean", 0, [&] {
      return tyler(msg.data, ec.fp_tol, ec.em_max_iter, ec.normalization);
    });
    emit("SCM-clair", "clean", 0, [&] { return scm(msg.data); });

    for (const double ratio : ratios) {
      const std::uint64_t mask_seed = bd::derive_seed(rep_seed, 2, static_cast<std::uint64_t>(
                                                                       std::llround(ratio * 1000)));
      // same columns and underlying noise across all variance factors
      for (const double f : factors) {
        const auto corrupted = corrupt_wgn(msg.data, ratio, S(f * sigma_data), mask_seed);
        emit("Tyl-corrupted", "wgn=" + format_number(f), ratio, [&] {
          return tyler(corrupted.data, ec.fp_tol, ec.em_max_iter, ec.normalization);
        });
      }
      emit("EM-Tyl-masked", "masked", ratio, [&] {
        const auto corrupted = corrupt_wgn(msg.data, ratio, S(sigma_data), mask_seed);
        std::vector<int> keep;
        std::vector<bool> is_out(static_cast<std::size_t>(n), false);
        for (const int j : corrupted.outliers) is_out[static_cast<std::size_t>(j)] = true;
        for (int j = 0; j < n; ++j)
          if (!is_out[static_cast<std::size_t>(j)]) keep.push_back(j);
        Matrix<S> kept(p, static_cast<Eigen::Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k)
          kept.col(static_cast<Eigen::Index>(k)) = msg.data.col(keep[k]);
        EstimatorConfig<S> em = ec;
        em.kind = EstimatorKind::em_tyl;
        return run_em(IncompleteMatrix<S>::complete(kept), em).sigma;
      });
    }
  });

  BenchResult out;
  out.experiment = "outlier_mask";
  for (auto& s : slots)
    for (auto& r : s) {
      out.failed += r.metric == "failed";
      out.rows.push_back(std::move(r));
    }
  return out;
}

/// Robust low-rank imputation on Haystack data: cross-validation RMSE of
/// the gap filler with the robust plug-in, the plain plug-in, and the
/// multiple-imputation comparator.
inline BenchResult run_haystack_impute(const KvConfig& cfg, const BenchOptions& opt) {
  using S = double;
  namespace bd = bench_detail;
  const int p = cfg.get_int("p", 15);
  const int n = cfg.get_int("n", 200);
  const int k = cfg.get_int("k", 5);
  const double sigma_s2 = cfg.get_num("sigma_s2", 10.0);
  const double missing_ratio = cfg.get_num("missing_ratio", 0.3);
  const double cv_fraction = cfg.get_num("cv_fraction", 0.01);
  const int replicates = cfg.get_int("replicates", 50);
  const auto onr_grid = cfg.get_num_list("onr_grid", {0, 7.5, 15, 22.5, 30});
  const auto ratios = cfg.get_num_list("outlier_ratios", {0, 0.1, 0.2, 0.3, 0.4, 0.5});
  const auto ec = bd::estimator_settings<S>(cfg);

  struct Cell {
    int onr_idx, ratio_idx, rep;
  };
  std::vector<Cell> cells;
  for (int a = 0; a < static_cast<int>(onr_grid.size()); ++a)
    for (int b = 0; b < static_cast<int>(ratios.size()); ++b)
      for (int r = 0; r < replicates; ++r) cells.push_back({a, b, r});

  std::vector<std::vector<ResultRow>> slots(cells.size());
  parallel_for(static_cast<int>(cells.size()), opt.threads, [&](int t) {
    const auto [onr_idx, ratio_idx, rep] = cells[static_cast<std::size_t>(t)];
    const double onr = onr_grid[static_cast<std::size_t>(onr_idx)];
    const double ratio = ratios[static_cast<std::size_t>(ratio_idx)];
    const std::uint64_t cell_seed = bd::derive_seed(opt.seed, 103, static_cast<std::uint64_t>(t));

    const auto hay = sample_haystack(p, n, k, S(sigma_s2), S(onr), ratio,
                                     bd::derive_seed(cell_seed, 1, 0));
    const auto incomplete = apply_pattern(
        hay.data, general_spec_for(p, n, missing_ratio, bd::derive_seed(cell_seed, 2, 0)));

    ImputeConfig<S> ic;
    ic.k = k;
    ic.max_outer_iter = cfg.get_int("max_outer_iter", 100);
    ic.outer_tol = S(cfg.get_num("outer_tol", 1e-8));
    ic.cv_fraction = cv_fraction;
    ic.seed = bd::derive_seed(cell_seed, 3, 0);
    ic.em = ec;

    auto& rows = slots[static_cast<std::size_t>(t)];
    const auto emit = [&](const std::string& name, const std::function<double()>& make) {
      ResultRow row;
      row.experiment = "haystack_impute";
      row.estimator = name;
      row.n = n;
      row.pattern = "onr=" + format_number(onr);
      row.ratio = ratio;
      row.replicate = rep;
      bd::Stopwatch clock;
      try {
        row.metric = "cv_rmse";
        row.value = make();
      } catch (const std::exception&) {
        row.metric = "failed";
        row.value = 1;
      }
      row.wall_ms = clock.ms();
      rows.push_back(std::move(row));
    };

    emit("EM-EOF-EM-Tyl-r", [&] {
      ImputeConfig<S> c = ic;
      c.final_estimator = ImputeConfig<S>::Final::em_tyl_r;
      return double(em_eof_impute(incomplete, c).cv.rmse);
    });
    emit("EM-EOF-SCM", [&] {
      ImputeConfig<S> c = ic;
      c.final_estimator = ImputeConfig<S>::Final::scm;
      return double(em_eof_impute(incomplete, c).cv.rmse);
    });
    emit("RMI", [&] {
      auto [masked, cv_cells] = hold_out_cv_cells(incomplete, cv_fraction, ic.seed);
      return double(
          rmi_cv_rmse(masked, cv_cells, ec.q_imputations, bd::derive_seed(cell_seed, 4, 0)));
    });
  });

  BenchResult out;
  out.experiment = "haystack_impute";
  for (auto& s : slots)
    for (auto& r : s) {
      out.failed += r.metric == "failed";
      out.rows.push_back(std::move(r));
    }
  return out;
}

/// Synthetic stand-in for the band-removal classification study: per-class
/// Toeplitz shapes, whole bands masked in the test windows.
inline BenchResult run_classify(const KvConfig& cfg, const BenchOptions& opt) {
  using S = double;
  namespace bd = bench_detail;
  const int p = cfg.get_int("p", 10);
  const int window_n = cfg.get_int("window_n", 64);
  const int train_per_class = cfg.get_int("train_windows_per_class", 15);
  const int test_per_class = cfg.get_int("test_windows_per_class", 15);
  const int replicates = cfg.get_int("replicates", 5);
  const int rank = cfg.get_int("rank", 0);
  const auto rhos_f = cfg.get_num_list("class_rhos", {0.2, 0.5, 0.8});
  const auto alphas_f = cfg.get_num_list("class_alphas", {1.0, 1.0, 1.0});
  const auto bands_grid_f = cfg.get_num_list("missing_bands", {0, 1, 2, 3, 4, 5});
  const auto estimators = cfg.get_list("estimators", {"em_scm", "em_tyl_pi_tau", "rsi"});
  if (rhos_f.size() != alphas_f.size())
    throw config_error("class_rhos and class_alphas must have matching lengths");
  std::vector<S> rhos(rhos_f.begin(), rhos_f.end());
  std::vector<S> alphas(alphas_f.begin(), alphas_f.end());
  const auto ec_base = bd::estimator_settings<S>(cfg);

  const auto make_cfg = [&](const std::string& token) {
    EstimatorConfig<S> ec = ec_base;
    ec.rank = rank;
    if (token == "em_scm")
      ec.kind = EstimatorKind::em_scm;
    else if (token == "em_tyl" || token == "em_tyl_pi_tau")
      ec.kind = EstimatorKind::em_tyl;
    else if (token == "rsi")
      ec.kind = EstimatorKind::rsi;
    else if (token == "rmi")
      ec.kind = EstimatorKind::rmi;
    else if (token == "mean_tyl")
      ec.kind = EstimatorKind::mean_tyl;
    else
      throw config_error("unsupported classify estimator: " + token);
    return ec;
  };

  std::vector<std::vector<ResultRow>> slots(static_cast<std::size_t>(replicates));
  parallel_for(replicates, opt.threads, [&](int rep) {
    auto& rows = slots[static_cast<std::size_t>(rep)];
    const std::uint64_t rep_seed = bd::derive_seed(opt.seed, 104, static_cast<std::uint64_t>(rep));
    const auto train = synth_class_windows(p, window_n, train_per_class, rhos, alphas,
                                           bd::derive_seed(rep_seed, 1, 0));
    const auto test = synth_class_windows(p, window_n, test_per_class, rhos, alphas,
                                          bd::derive_seed(rep_seed, 2, 0));

    for (const double bands_f : bands_grid_f) {
      const int bands = static_cast<int>(bands_f);
      // sensor failure hits the whole acquisition: the same band run is
      // missing in every window, training and test alike
      const int start =
          bands > 0 ? static_cast<int>(bd::derive_seed(rep_seed, 4, static_cast<std::uint64_t>(bands)) %
                                       static_cast<std::uint64_t>(p - bands + 1))
                    : 0;

      for (const auto& token : estimators) {
        const auto ec = make_cfg(token);
        const bool rescale = token == "em_tyl_pi_tau";
        ResultRow row;
        row.experiment = "classify";
        row.estimator = bd::estimator_display(token, rank > 0);
        row.n = window_n;
        row.pattern = "bands=" + format_number(double(bands));
        row.ratio = double(bands) / double(p);
        row.replicate = rep;
        bd::Stopwatch clock;
        try {
          std::vector<SpdDescriptor<S>> train_desc;
          for (std::size_t w = 0; w < train.windows.size(); ++w) {
            IncompleteMatrix<S> window = train.windows[w];
            mask_band_range(window, start, bands);
            EstimatorConfig<S> wc = ec;
            wc.seed = bd::derive_seed(rep_seed, 5, w);
            auto d = descriptor_from_window(window, wc, rescale, static_cast<int>(w));
            d.label = train.labels[w];
            train_desc.push_back(std::move(d));
          }
          const auto model = mdrm_train(train_desc);

          std::vector<int> predicted, truth_labels;
          for (std::size_t w = 0; w < test.windows.size(); ++w) {
            IncompleteMatrix<S> window = test.windows[w];
            mask_band_range(window, start, bands);
            EstimatorConfig<S> wc = ec;
            wc.seed = bd::derive_seed(rep_seed, 6, w);
            const auto d = descriptor_from_window(window, wc, rescale, static_cast<int>(w));
            predicted.push_back(mdrm_predict(model, d));
            truth_labels.push_back(test.labels[w]);
          }
          row.metric = "oa";
          row.value = overall_accuracy(predicted, truth_labels);
        } catch (const std::exception&) {
          row.metric = "failed";
          row.value = 1;
        }
        row.wall_ms = clock.ms();
        rows.push_back(std::move(row));
      }
    }
  });

  BenchResult out;
  out.experiment = "classify";
  for (auto& s : slots)
    for (auto& r : s) {
      out.failed += r.metric == "failed";
      out.rows.push_back(std::move(r));
    }
  return out;
}

/// Synthetic stand-in for the stripe-missingness clustering study.
inline BenchResult run_cluster(const KvConfig& cfg, const BenchOptions& opt) {
  using S = double;
  namespace bd = bench_detail;
  const int p = cfg.get_int("p", 10);
  const int window_n = cfg.get_int("window_n", 64);
  const int per_class = cfg.get_int("windows_per_class", 10);
  const int replicates = cfg.get_int("replicates", 3);
  const int rank = cfg.get_int("rank", 0);
  const double stripe_fraction = cfg.get_num("stripe_fraction", 0.3);
  const auto rhos_f = cfg.get_num_list("class_rhos", {0.2, 0.5, 0.8});
  const auto alphas_f = cfg.get_num_list("class_alphas", {1.0, 1.0, 1.0});
  const auto bands_grid_f = cfg.get_num_list("incomplete_bands", {0, 1, 2, 3, 4, 5});
  const auto estimators = cfg.get_list("estimators", {"em_scm", "em_tyl", "rsi"});
  std::vector<S> rhos(rhos_f.begin(), rhos_f.end());
  std::vector<S> alphas(alphas_f.begin(), alphas_f.end());
  const int K = static_cast<int>(rhos.size());
  const auto ec_base = bd::estimator_settings<S>(cfg);

  std::vector<std::vector<ResultRow>> slots(static_cast<std::size_t>(replicates));
  parallel_for(replicates, opt.threads, [&](int rep) {
    auto& rows = slots[static_cast<std::size_t>(rep)];
    const std::uint64_t rep_seed = bd::derive_seed(opt.seed, 105, static_cast<std::uint64_t>(rep));
    const auto base = synth_class_windows(p, window_n, per_class, rhos, alphas,
                                          bd::derive_seed(rep_seed, 1, 0));

    for (const auto& token : estimators) {
      EstimatorConfig<S> ec = ec_base;
      ec.rank = rank;
      if (token == "em_scm")
        ec.kind = EstimatorKind::em_scm;
      else if (token == "em_tyl")
        ec.kind = EstimatorKind::em_tyl;
      else if (token == "rsi")
        ec.kind = EstimatorKind::rsi;
      else
        throw config_error("unsupported cluster estimator: " + token);

      for (const double bands_f : bands_grid_f) {
        const int bands = static_cast<int>(bands_f);
        ResultRow row;
        row.experiment = "cluster";
        row.estimator = bd::estimator_display(token, rank > 0);
        row.n = window_n;
        row.pattern = "bands=" + format_number(double(bands));
        row.ratio = double(bands) / double(p);
        row.replicate = rep;
        bd::Stopwatch clock;
        try {
          std::vector<SpdDescriptor<S>> descriptors;
          for (std::size_t w = 0; w < base.windows.size(); ++w) {
            IncompleteMatrix<S> window = base.windows[w];
            mask_band_stripes(window, bands, stripe_fraction,
                              bd::derive_seed(rep_seed, 2, w, static_cast<std::uint64_t>(bands)));
            EstimatorConfig<S> wc = ec;
            wc.seed = bd::derive_seed(rep_seed, 3, w);
            descriptors.push_back(descriptor_from_window(window, wc, false, static_cast<int>(w)));
          }
          const auto clustering =
              kmeanspp_spd(descriptors, K, bd::derive_seed(rep_seed, 4, static_cast<std::uint64_t>(bands)),
                           cfg.get_int("kmeans_max_iter", 30));
          row.metric = "oa";
          row.value = clustering_accuracy(clustering.assignments, base.labels, K);
        } catch (const std::exception&) {
          row.metric = "failed";
          row.value = 1;
        }
        row.wall_ms = clock.ms();
        rows.push_back(std::move(row));
      }
    }
  });

  BenchResult out;
  out.experiment = "cluster";
  for (auto& s : slots)
    for (auto& r : s) {
      out.failed += r.metric == "failed";
      out.rows.push_back(std::move(r));
    }
  return out;
}

inline BenchResult run_experiment(const KvConfig& cfg, const BenchOptions& opt) {
  const std::string experiment = cfg.require("experiment");
  if (experiment == "pattern_sweep") return run_pattern_sweep(cfg, opt);
  if (experiment == "outlier_mask") return run_outlier_mask(cfg, opt);
  if (experiment == "haystack_impute") return run_haystack_impute(cfg, opt);
  if (experiment == "classify") return run_classify(cfg, opt);
  if (experiment == "cluster") return run_cluster(cfg, opt);
  throw config_error("unknown experiment: " + experiment);
}

}  // namespace robustcov
