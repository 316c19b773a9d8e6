#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "robustcov/estimators.hpp"

namespace robustcov {

template <class Scalar>
struct ImputeConfig {
  int k = 1;  // number of leading components used for reconstruction
  int max_outer_iter = 100;
  Scalar outer_tol = Scalar(1e-8);
  double cv_fraction = 0.01;
  enum class Final { scm, em_tyl_r } final_estimator = Final::scm;
  bool regression_reconstruction = false;  // conditional-expectation variant
  std::uint64_t seed = 0;
  EstimatorConfig<Scalar> em;  // settings for the robust plug-in
};

template <class Scalar>
struct CvCell {
  int row = 0, col = 0;
  Scalar truth = Scalar(0);
  Scalar imputed = Scalar(0);
};

template <class Scalar>
struct CvReport {
  Scalar rmse = Scalar(0);
  std::vector<CvCell<Scalar>> cells;
};

template <class Scalar>
Scalar cv_rmse(const std::vector<CvCell<Scalar>>& cells) {
  if (cells.empty()) throw invalid_input("cv_rmse: no cells");
  Scalar ss = Scalar(0);
  for (const auto& c : cells) {
    const Scalar d = c.imputed - c.truth;
    ss += d * d;
  }
  return std::sqrt(ss / Scalar(cells.size()));
}

/// Hold out round(fraction * #observed) cells, drawn uniformly from the
/// observed cells only; they are masked in the returned copy and their true
/// values retained for scoring.
template <class Scalar>
std::pair<IncompleteMatrix<Scalar>, std::vector<CvCell<Scalar>>> hold_out_cv_cells(
    const IncompleteMatrix<Scalar>& data, double fraction, std::uint64_t seed) {
  validate(data);
  if (!(fraction > 0.0) || fraction > 0.1)
    throw invalid_input("hold_out_cv_cells: fraction must lie in (0, 0.1]");
  std::vector<std::pair<int, int>> observed;
  for (int j = 0; j < data.n(); ++j)
    for (int i = 0; i < data.p(); ++i)
      if (data.mask(i, j)) observed.emplace_back(i, j);
  const int count = static_cast<int>(std::lround(fraction * double(observed.size())));
  if (count < 1) throw invalid_input("hold_out_cv_cells: fraction selects zero cells");
  if (count >= static_cast<int>(observed.size()))
    throw invalid_input("hold_out_cv_cells: fraction exceeds observed count");

  Rng rng = Rng::stream(seed, 61);
  std::vector<int> order(observed.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
  rng.shuffle(order);

  std::vector<int> col_observed(static_cast<std::size_t>(data.n()));
  for (int j = 0; j < data.n(); ++j)
    col_observed[static_cast<std::size_t>(j)] = data.column_observed_count(j);

  IncompleteMatrix<Scalar> masked = data;
  std::vector<CvCell<Scalar>> cells;
  cells.reserve(static_cast<std::size_t>(count));
  for (const int k : order) {
    if (static_cast<int>(cells.size()) == count) break;
    const auto [i, j] = observed[static_cast<std::size_t>(k)];
    // never empty a column: the masked copy must stay estimable
    if (col_observed[static_cast<std::size_t>(j)] <= 1) continue;
    --col_observed[static_cast<std::size_t>(j)];
    CvCell<Scalar> c;
    c.row = i;
    c.col = j;
    c.truth = data.values(i, j);
    cells.push_back(c);
    masked.mask(i, j) = false;
  }
  if (static_cast<int>(cells.size()) < count)
    throw invalid_input("hold_out_cv_cells: not enough removable observed cells");
  return {std::move(masked), std::move(cells)};
}

/// Project every column of x onto the span of the k leading components.
template <class Scalar>
Matrix<Scalar> eof_reconstruct(const Matrix<Scalar>& x, const Matrix<Scalar>& components) {
  return components * (components.transpose() * x);
}

template <class Scalar>
struct ImputeResult {
  Matrix<Scalar> completed;  // observed cells untouched, gaps filled
  CvReport<Scalar> cv;
  int outer_iterations = 0;
  bool converged = true;
};

namespace detail {

/// Fill the missing entries of one column by the conditional expectation
/// of the missing block given the observed one. cov must be a full-rank
/// (factor-model) covariance so the observed block stays solvable.
template <class Scalar>
void regression_fill(Matrix<Scalar>& x, const Mask& missing, int j,
                     const Matrix<Scalar>& cov) {
  const int p = static_cast<int>(x.rows());
  std::vector<int> obs, mis;
  for (int i = 0; i < p; ++i) (missing(i, j) ? mis : obs).push_back(i);
  if (mis.empty()) return;
  const int o = static_cast<int>(obs.size());
  Matrix<Scalar> coo(o, o);
  Matrix<Scalar> cmo(static_cast<int>(mis.size()), o);
  Vector<Scalar> y_o(o);
  for (int a = 0; a < o; ++a) {
    y_o(a) = x(obs[std::size_t(a)], j);
    for (int b = 0; b < o; ++b) coo(a, b) = cov(obs[std::size_t(a)], obs[std::size_t(b)]);
    for (std::size_t m = 0; m < mis.size(); ++m)
      cmo(static_cast<int>(m), a) = cov(mis[m], obs[std::size_t(a)]);
  }
  Eigen::LLT<Matrix<Scalar>> llt(coo);
  if (llt.info() != Eigen::Success)
    throw numerical_error("regression_fill: observed block is not positive definite");
  const Vector<Scalar> fill = cmo * llt.solve(y_o);
  for (std::size_t m = 0; m < mis.size(); ++m) x(mis[m], j) = fill[static_cast<Eigen::Index>(m)];
}

}  // namespace detail

/// Iterative gap filling: estimate the covariance of the current
/// completion, reconstruct every sample from its k leading components, and
/// overwrite the missing entries only, until the imputed entries settle.
/// With final_estimator = em_tyl_r, the last reconstruction uses the
/// rank-k robust EM covariance computed on the incomplete data itself.
template <class Scalar>
ImputeResult<Scalar> em_eof_impute(const IncompleteMatrix<Scalar>& data,
                                   const ImputeConfig<Scalar>& cfg) {
  validate(data);
  if (cfg.k < 1 || cfg.k >= data.p())
    throw invalid_input("em_eof_impute: k must lie in [1, p)");
  if (cfg.max_outer_iter < 1 || !(cfg.outer_tol > Scalar(0)))
    throw invalid_input("em_eof_impute: bad outer-loop settings");

  auto [work, cells] = hold_out_cv_cells(data, cfg.cv_fraction, cfg.seed);
  const int p = work.p();
  const int n = work.n();
  const Mask missing = !work.mask;
  const long n_missing = missing.count();

  // initial fill: the global observed mean (zero in centered coordinates)
  Scalar gmean = Scalar(0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < p; ++i)
      if (work.mask(i, j)) gmean += work.values(i, j);
  gmean /= Scalar(work.observed_count());
  Matrix<Scalar> x(p, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < p; ++i) x(i, j) = work.mask(i, j) ? work.values(i, j) : gmean;

  ImputeResult<Scalar> out;
  const auto apply_components = [&](const Matrix<Scalar>& components,
                                    const Matrix<Scalar>& cov) -> Scalar {
    Matrix<Scalar> filled = x;
    if (cfg.regression_reconstruction) {
      for (int j = 0; j < n; ++j) detail::regression_fill(filled, missing, j, cov);
    } else {
      const Matrix<Scalar> recon = eof_reconstruct(x, components);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < p; ++i)
          if (missing(i, j)) filled(i, j) = recon(i, j);
    }
    Scalar delta = Scalar(0);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < p; ++i)
        if (missing(i, j)) {
          const Scalar d = filled(i, j) - x(i, j);
          delta += d * d;
        }
    x = std::move(filled);
    return n_missing > 0 ? delta / Scalar(n_missing) : Scalar(0);
  };

  // factor-model covariance for the regression variant: full rank, so the
  // observed blocks stay solvable; the noise floor is kept strictly
  // positive so noiseless (exactly low-rank) data remains regressable
  const auto factor_cov = [&](const EigenDecomposition<Scalar>& d) {
    const Scalar noise = std::max(d.eigenvalues.tail(p - cfg.k).mean(),
                                  Scalar(1e-12) * std::max(d.eigenvalues(0), Scalar(1e-30)));
    Matrix<Scalar> cov = noise * Matrix<Scalar>::Identity(p, p);
    for (int i = 0; i < cfg.k; ++i)
      cov += std::max(d.eigenvalues(i) - noise, Scalar(0)) * d.eigenvectors.col(i) *
             d.eigenvectors.col(i).transpose();
    return symmetrize(cov);
  };

  out.converged = n_missing == 0;
  for (int t = 1; t <= cfg.max_outer_iter && n_missing > 0; ++t) {
    auto d = evd(scm(x));
    const Matrix<Scalar> components = d.eigenvectors.leftCols(cfg.k);
    const Scalar delta = apply_components(
        components, cfg.regression_reconstruction ? factor_cov(d) : Matrix<Scalar>());
    out.outer_iterations = t;
    if (delta < cfg.outer_tol) {
      out.converged = true;
      break;
    }
  }

  if (cfg.final_estimator == ImputeConfig<Scalar>::Final::em_tyl_r && n_missing > 0) {
    EstimatorConfig<Scalar> em = cfg.em;
    em.kind = EstimatorKind::em_tyl;
    em.rank = cfg.k;
    const auto est = run_em(work, em);
    auto d = evd(est.sigma);
    // est.sigma already has the factor form, so it backs the regression
    // variant directly
    apply_components(d.eigenvectors.leftCols(cfg.k),
                     cfg.regression_reconstruction ? est.sigma : Matrix<Scalar>());
  }

  out.completed.resize(p, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < p; ++i)
      out.completed(i, j) = work.mask(i, j) ? work.values(i, j) : x(i, j);
  for (auto& c : cells) c.imputed = out.completed(c.row, c.col);
  out.cv.cells = std::move(cells);
  out.cv.rmse = cv_rmse(out.cv.cells);
  return out;
}

/// Cross-validation error of the stochastic multiple-imputation procedure:
/// RMSE pooled over the q imputed copies, i.e. the expected per-draw
/// imputation error (the within-imputation spread counts as error).
template <class Scalar>
Scalar rmi_cv_rmse(const IncompleteMatrix<Scalar>& masked,
                   const std::vector<CvCell<Scalar>>& cells, int q, std::uint64_t seed) {
  if (q < 1 || cells.empty()) throw invalid_input("rmi_cv_rmse: bad arguments");
  const auto plans = build_plans(masked);
  Scalar ss = Scalar(0);
  for (int j = 0; j < q; ++j) {
    const Matrix<Scalar> copy = rmi_completed_copy(masked, plans, j, seed);
    for (const auto& c : cells) {
      const Scalar d = copy(c.row, c.col) - c.truth;
      ss += d * d;
    }
  }
  return std::sqrt(ss / (Scalar(q) * Scalar(cells.size())));
}

/// Multiple-imputation point reconstruction: each missing cell becomes the
/// mean of its q stochastic draws.
template <class Scalar>
Matrix<Scalar> rmi_impute_cells(const IncompleteMatrix<Scalar>& data, int q,
                                std::uint64_t seed) {
  if (q < 1) throw invalid_input("rmi_impute_cells: q must be >= 1");
  const auto plans = build_plans(data);
  Matrix<Scalar> acc = Matrix<Scalar>::Zero(data.p(), data.n());
  for (int j = 0; j < q; ++j) acc += rmi_completed_copy(data, plans, j, seed);
  acc /= Scalar(q);
  for (int j = 0; j < data.n(); ++j)
    for (int i = 0; i < data.p(); ++i)
      if (data.mask(i, j)) acc(i, j) = data.values(i, j);
  return acc;
}

}  // namespace robustcov
