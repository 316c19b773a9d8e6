#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "robustcov/linalg.hpp"
#include "robustcov/missing.hpp"
#include "robustcov/rng.hpp"

namespace robustcov {

enum class EstimatorKind { em_tyl, em_scm, scm, tyler, rmi, rsi, mean_tyl };

template <class Scalar>
struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::em_tyl;
  int rank = 0;  // 0 = full rank, otherwise 1 <= rank < p
  Scalar em_tol = Scalar(1e-6);
  int em_max_iter = 200;
  int fp_iters_per_em = 1;  // max inner fixed-point iterations per EM step
  Scalar fp_tol = Scalar(1e-8);
  Normalization normalization = Normalization::trace;
  int q_imputations = 10;
  bool project_before_averaging = false;  // multiple-imputation rank handling
  bool record_loglik = false;
  std::uint64_t seed = 0;
};

template <class Scalar>
void validate(const EstimatorConfig<Scalar>& cfg, int p) {
  if (cfg.rank < 0 || cfg.rank >= p)
    throw invalid_input("estimator config: rank must lie in [1, p-1] (0 = full)");
  if (!(cfg.em_tol > Scalar(0)) || !(cfg.fp_tol > Scalar(0)))
    throw invalid_input("estimator config: tolerances must be positive");
  if (cfg.em_max_iter < 1 || cfg.fp_iters_per_em < 1 || cfg.q_imputations < 1)
    throw invalid_input("estimator config: iteration counts must be >= 1");
}

/// Shape matrix estimate with per-sample scales and the convergence trace of
/// the squared parameter change per iteration.
template <class Scalar>
struct ShapeEstimate {
  Matrix<Scalar> sigma;
  Vector<Scalar> textures;  // all ones for Gaussian estimators
  int iterations = 0;
  std::vector<Scalar> trace;
  bool converged = true;
  bool rank_degenerate = false;
  std::vector<Scalar> loglik_trace;  // filled when record_loglik is set
  std::vector<std::string> warnings;
};

/// Conditional moments of one sample given its observed block. Fully
/// observed samples are short-circuited: the dense blocks reduce to
/// y y^T and are not materialized.
template <class Scalar>
struct ConditionalMoments {
  bool complete = false;
  Vector<Scalar> mu;  // E[y^m | y^o], permuted (obs-first) order
  Matrix<Scalar> b;   // p x p second-moment matrix, permuted order
  Matrix<Scalar> c;   // P^T B P, original variable order
};

/// E-step: conditional mean and second moment of each sample's missing
/// block under N(0, tau_i * Sigma). The conditional mean is texture-free;
/// the texture scales only the conditional covariance.
template <class Scalar>
std::vector<ConditionalMoments<Scalar>> e_step(const IncompleteMatrix<Scalar>& data,
                                               const std::vector<PermutationPlan>& plans,
                                               const Matrix<Scalar>& sigma,
                                               const Vector<Scalar>& textures) {
  const int p = data.p();
  const int n = data.n();
  if (sigma.rows() != p || sigma.cols() != p)
    throw invalid_input("e_step: sigma dimension mismatch");
  if (textures.size() != n) throw invalid_input("e_step: textures size mismatch");

  std::vector<ConditionalMoments<Scalar>> moments(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& plan = plans[static_cast<std::size_t>(i)];
    auto& m = moments[static_cast<std::size_t>(i)];
    if (plan.is_complete()) {
      m.complete = true;
      continue;
    }
    const int o = plan.n_obs();
    const int mm = plan.n_mis();
    const Matrix<Scalar> st = plan.permute_sym(sigma);
    const auto sigma_oo = st.topLeftCorner(o, o);
    const auto sigma_om = st.topRightCorner(o, mm);
    const auto sigma_mm = st.bottomRightCorner(mm, mm);

    Eigen::LLT<Matrix<Scalar>> llt(sigma_oo);
    if (llt.info() != Eigen::Success)
      throw numerical_error("e_step: observed block of sample " + std::to_string(i) +
                            " is numerically singular");
    Vector<Scalar> y_o(o);
    for (int k = 0; k < o; ++k) y_o(k) = data.values(plan.obs_idx[static_cast<std::size_t>(k)], i);

    const Matrix<Scalar> gain = llt.solve(Matrix<Scalar>(sigma_om)).transpose();  // m x o
    m.mu = gain * y_o;
    const Matrix<Scalar> schur = symmetrize(Matrix<Scalar>(sigma_mm - gain * sigma_om));
    m.b.resize(p, p);
    m.b.topLeftCorner(o, o) = y_o * y_o.transpose();
    m.b.topRightCorner(o, mm) = y_o * m.mu.transpose();
    m.b.bottomLeftCorner(mm, o) = m.b.topRightCorner(o, mm).transpose();
    m.b.bottomRightCorner(mm, mm) = textures(i) * schur + m.mu * m.mu.transpose();
    if (!all_finite(m.b))
      throw numerical_error("e_step: non-finite moments for sample " + std::to_string(i));
    m.c = plan.unpermute_sym(m.b);
  }
  return moments;
}

template <class Scalar>
struct LowRankProjection {
  Matrix<Scalar> sigma;
  Scalar noise_var = Scalar(0);
  bool degenerate = false;  // a signal eigenvalue fell at or below the noise floor
};

/// Closest factor-model matrix sigma^2 I + low-rank: the trailing p-r
/// eigenvalues collapse to their mean, the leading r are kept exactly.
template <class Scalar>
LowRankProjection<Scalar> low_rank_project(const Matrix<Scalar>& m, int r) {
  const int p = static_cast<int>(m.rows());
  if (r < 1 || r >= p) throw invalid_input("low_rank_project: rank must lie in [1, p-1]");
  auto d = evd(m);
  LowRankProjection<Scalar> out;
  out.noise_var = d.eigenvalues.tail(p - r).mean();
  out.sigma = out.noise_var * Matrix<Scalar>::Identity(p, p);
  for (int k = 0; k < r; ++k) {
    const Scalar spike = d.eigenvalues(k) - out.noise_var;
    if (spike <= Scalar(0)) out.degenerate = true;
    out.sigma += std::max(spike, Scalar(0)) * d.eigenvectors.col(k) *
                 d.eigenvectors.col(k).transpose();
  }
  out.sigma = symmetrize(out.sigma);
  return out;
}

namespace detail {

template <class Scalar>
Matrix<Scalar> inverse_spd(const Matrix<Scalar>& m, const char* who) {
  Eigen::LLT<Matrix<Scalar>> llt(symmetrize(m));
  if (llt.info() != Eigen::Success)
    throw numerical_error(std::string(who) + ": matrix is not positive definite");
  return llt.solve(Matrix<Scalar>::Identity(m.rows(), m.cols()));
}

/// tr(C_i Sigma^{-1}), using the rank-1 shortcut for complete samples.
template <class Scalar>
Scalar moment_weight(const IncompleteMatrix<Scalar>& data,
                     const ConditionalMoments<Scalar>& m, int i,
                     const Matrix<Scalar>& sigma_inv) {
  if (m.complete) {
    const auto y = data.values.col(i);
    return y.dot(sigma_inv * y);
  }
  return m.c.cwiseProduct(sigma_inv).sum();
}

template <class Scalar>
void accumulate_moment(Matrix<Scalar>& acc, const IncompleteMatrix<Scalar>& data,
                       const ConditionalMoments<Scalar>& m, int i, Scalar weight) {
  if (m.complete) {
    const auto y = data.values.col(i);
    acc.noalias() += weight * (y * y.transpose());
  } else {
    acc += weight * m.c;
  }
}

}  // namespace detail

template <class Scalar>
struct MStepResult {
  Matrix<Scalar> sigma;
  Vector<Scalar> textures;
  bool rank_degenerate = false;
  int fp_iterations = 0;
};

/// M-step for the scaled-Gaussian model: fixed-point iteration
/// Sigma <- (p/n) sum_i C_i / tr(C_i Sigma^{-1}), with the optional rank
/// projection and shape normalization applied after every inner iterate,
/// then the scale update tau_i = tr(C_i Sigma^{-1}) / p.
template <class Scalar>
MStepResult<Scalar> m_step_tyl(const IncompleteMatrix<Scalar>& data,
                               const std::vector<ConditionalMoments<Scalar>>& moments,
                               const Matrix<Scalar>& sigma_prev,
                               const EstimatorConfig<Scalar>& cfg) {
  const int p = data.p();
  const int n = data.n();
  MStepResult<Scalar> out;
  Matrix<Scalar> sigma = sigma_prev;

  for (int k = 1; k <= cfg.fp_iters_per_em; ++k) {
    const Matrix<Scalar> sigma_inv = detail::inverse_spd(sigma, "m_step_tyl");
    Matrix<Scalar> acc = Matrix<Scalar>::Zero(p, p);
    for (int i = 0; i < n; ++i) {
      const Scalar w = detail::moment_weight(data, moments[static_cast<std::size_t>(i)], i, sigma_inv);
      if (!(w > Scalar(0)) || !std::isfinite(w))
        throw numerical_error("m_step_tyl: fixed point diverged at inner iteration " +
                              std::to_string(k));
      detail::accumulate_moment(acc, data, moments[static_cast<std::size_t>(i)], i,
                                Scalar(1) / w);
    }
    Matrix<Scalar> next = symmetrize(Matrix<Scalar>(acc * (Scalar(p) / Scalar(n))));
    if (cfg.rank > 0) {
      auto proj = low_rank_project(next, cfg.rank);
      out.rank_degenerate = out.rank_degenerate || proj.degenerate;
      next = std::move(proj.sigma);
    }
    next = normalize_shape(next, cfg.normalization);
    const Scalar step = (next - sigma).squaredNorm();
    sigma = std::move(next);
    out.fp_iterations = k;
    if (step < cfg.fp_tol) break;
  }

  const Matrix<Scalar> sigma_inv = detail::inverse_spd(sigma, "m_step_tyl");
  out.textures.resize(n);
  for (int i = 0; i < n; ++i)
    out.textures(i) =
        detail::moment_weight(data, moments[static_cast<std::size_t>(i)], i, sigma_inv) / Scalar(p);
  if (!(out.textures.minCoeff() > Scalar(0)) || !out.textures.allFinite())
    throw numerical_error("m_step_tyl: non-positive scale estimate");
  out.sigma = std::move(sigma);
  return out;
}

/// Gaussian M-step: Sigma = (1/n) sum_i C_i. With no missing values this is
/// exactly the sample covariance matrix.
template <class Scalar>
Matrix<Scalar> m_step_gauss(const IncompleteMatrix<Scalar>& data,
                            const std::vector<ConditionalMoments<Scalar>>& moments) {
  const int p = data.p();
  const int n = data.n();
  Matrix<Scalar> acc = Matrix<Scalar>::Zero(p, p);
  for (int i = 0; i < n; ++i)
    detail::accumulate_moment(acc, data, moments[static_cast<std::size_t>(i)], i,
                              Scalar(1) / Scalar(n));
  if (!all_finite(acc)) throw numerical_error("m_step_gauss: non-finite update");
  return symmetrize(acc);
}

/// Sample covariance (1/n) sum_i y_i y_i^T, accumulated per sample.
template <class Scalar>
Matrix<Scalar> scm(const Matrix<Scalar>& y) {
  const int p = static_cast<int>(y.rows());
  const int n = static_cast<int>(y.cols());
  if (n < 1) throw invalid_input("scm: need at least one sample");
  Matrix<Scalar> acc = Matrix<Scalar>::Zero(p, p);
  for (int j = 0; j < n; ++j)
    acc.noalias() += (Scalar(1) / Scalar(n)) * (y.col(j) * y.col(j).transpose());
  return symmetrize(acc);
}

/// Distribution-free scatter M-estimator: the fixed point of
/// Sigma = (p/n) sum_i y_i y_i^T / (y_i^T Sigma^{-1} y_i), normalized each
/// iteration. Stops when the relative step falls below tol.
template <class Scalar>
Matrix<Scalar> tyler(const Matrix<Scalar>& y, Scalar tol = Scalar(1e-8),
                     int max_iter = 200,
                     Normalization normalization = Normalization::trace) {
  const int p = static_cast<int>(y.rows());
  const int n = static_cast<int>(y.cols());
  if (n <= p) throw invalid_input("tyler: requires n > p");

  Matrix<Scalar> sigma = Matrix<Scalar>::Identity(p, p);
  Scalar resid = Scalar(0);
  for (int it = 1; it <= max_iter; ++it) {
    const Matrix<Scalar> sigma_inv = detail::inverse_spd(sigma, "tyler");
    Matrix<Scalar> acc = Matrix<Scalar>::Zero(p, p);
    for (int j = 0; j < n; ++j) {
      const auto yi = y.col(j);
      const Scalar w = yi.dot(sigma_inv * yi);
      if (!(w > Scalar(0)) || !std::isfinite(w))
        throw numerical_error("tyler: degenerate sample weight at iteration " +
                              std::to_string(it));
      acc.noalias() += (Scalar(1) / w) * (yi * yi.transpose());
    }
    Matrix<Scalar> next =
        normalize_shape(symmetrize(Matrix<Scalar>(acc * (Scalar(p) / Scalar(n)))), normalization);
    resid = (next - sigma).norm() / sigma.norm();
    sigma = std::move(next);
    if (resid < tol) return sigma;
  }
  throw numerical_error("tyler: no convergence after " + std::to_string(max_iter) +
                        " iterations (residual=" + std::to_string(double(resid)) + ")");
}

/// Marginal loglikelihood of the observed blocks under N(0, tau_i * Sigma),
/// missing coordinates integrated out.
template <class Scalar>
Scalar observed_loglik(const IncompleteMatrix<Scalar>& data,
                       const std::vector<PermutationPlan>& plans,
                       const Matrix<Scalar>& sigma, const Vector<Scalar>& textures) {
  const Scalar log2pi = std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
  Scalar total = Scalar(0);
  for (int i = 0; i < data.n(); ++i) {
    const auto& plan = plans[static_cast<std::size_t>(i)];
    const int o = plan.n_obs();
    Matrix<Scalar> soo(o, o);
    Vector<Scalar> y_o(o);
    for (int l = 0; l < o; ++l) {
      y_o(l) = data.values(plan.obs_idx[static_cast<std::size_t>(l)], i);
      for (int k = 0; k < o; ++k)
        soo(k, l) = sigma(plan.obs_idx[static_cast<std::size_t>(k)],
                          plan.obs_idx[static_cast<std::size_t>(l)]);
    }
    Eigen::LLT<Matrix<Scalar>> llt(soo);
    if (llt.info() != Eigen::Success)
      throw numerical_error("observed_loglik: singular observed block for sample " +
                            std::to_string(i));
    Scalar logdet = Scalar(0);
    for (int k = 0; k < o; ++k) logdet += Scalar(2) * std::log(llt.matrixL()(k, k));
    const Scalar quad = y_o.dot(llt.solve(y_o));
    const Scalar tau = textures(i);
    total += Scalar(-0.5) * (Scalar(o) * (log2pi + std::log(tau)) + logdet + quad / tau);
  }
  return total;
}

namespace detail {

template <class Scalar>
Matrix<Scalar> gather_columns(const Matrix<Scalar>& y, const std::vector<int>& cols) {
  Matrix<Scalar> out(y.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = y.col(cols[k]);
  return out;
}

/// Initial shape: Tyler on the fully observed samples, falling back to
/// their SCM and finally the identity when too few samples are complete.
template <class Scalar>
Matrix<Scalar> initial_sigma(const IncompleteMatrix<Scalar>& data,
                             const std::vector<int>& fully_observed,
                             const EstimatorConfig<Scalar>& cfg) {
  const int p = data.p();
  const int n_o = static_cast<int>(fully_observed.size());
  if (n_o >= p + 1) {
    try {
      return tyler(gather_columns(data.values, fully_observed), Scalar(1e-6), 100,
                   cfg.normalization);
    } catch (const numerical_error&) {
    }
  }
  if (n_o >= p) {
    Matrix<Scalar> s = scm(gather_columns(data.values, fully_observed));
    Eigen::LLT<Matrix<Scalar>> llt(s);
    if (llt.info() == Eigen::Success) return s;
  }
  return Matrix<Scalar>::Identity(p, p);
}

}  // namespace detail

/// EM estimation of (Sigma, {tau_i}) from incomplete data. kind selects the
/// scaled-Gaussian (em_tyl) or Gaussian (em_scm, scales pinned to one)
/// model; rank > 0 enables the factor-model projection each iteration.
template <class Scalar>
ShapeEstimate<Scalar> run_em(const IncompleteMatrix<Scalar>& data,
                             const EstimatorConfig<Scalar>& cfg) {
  validate(cfg, data.p());
  if (cfg.kind != EstimatorKind::em_tyl && cfg.kind != EstimatorKind::em_scm)
    throw invalid_input("run_em: kind must be em_tyl or em_scm");
  const auto plans = build_plans(data);
  const auto [fully_observed, partial] = split_sample_sets(data);
  const int n = data.n();
  const bool robust = cfg.kind == EstimatorKind::em_tyl;

  ShapeEstimate<Scalar> est;
  Matrix<Scalar> sigma = detail::initial_sigma(data, fully_observed, cfg);
  if (robust) sigma = normalize_shape(sigma, cfg.normalization);
  Vector<Scalar> textures = Vector<Scalar>::Ones(n);
  if (cfg.record_loglik)
    est.loglik_trace.push_back(observed_loglik(data, plans, sigma, textures));

  est.converged = false;
  for (int t = 1; t <= cfg.em_max_iter; ++t) {
    const auto moments = e_step(data, plans, sigma, textures);
    Matrix<Scalar> sigma_next;
    Vector<Scalar> textures_next;
    if (robust) {
      auto ms = m_step_tyl(data, moments, sigma, cfg);
      est.rank_degenerate = est.rank_degenerate || ms.rank_degenerate;
      sigma_next = std::move(ms.sigma);
      textures_next = std::move(ms.textures);
    } else {
      sigma_next = m_step_gauss(data, moments);
      if (cfg.rank > 0) {
        auto proj = low_rank_project(sigma_next, cfg.rank);
        est.rank_degenerate = est.rank_degenerate || proj.degenerate;
        sigma_next = std::move(proj.sigma);
      }
      textures_next = textures;
    }
    // parameter change on the trace-normalized shape plus the scale vector
    const Scalar delta =
        (normalize_shape(sigma_next, Normalization::trace) -
         normalize_shape(sigma, Normalization::trace))
            .squaredNorm() +
        (textures_next - textures).squaredNorm();
    est.trace.push_back(delta);
    sigma = std::move(sigma_next);
    textures = std::move(textures_next);
    est.iterations = t;
    if (cfg.record_loglik)
      est.loglik_trace.push_back(observed_loglik(data, plans, sigma, textures));
    if (delta < cfg.em_tol) {
      est.converged = true;
      break;
    }
  }
  est.sigma = std::move(sigma);
  est.textures = std::move(textures);
  return est;
}

namespace detail {

struct PooledStats {
  double mean = 0, var = 1;
};

template <class Scalar>
PooledStats pooled_observed_stats(const IncompleteMatrix<Scalar>& data) {
  double sum = 0, sumsq = 0;
  long count = 0;
  for (int j = 0; j < data.n(); ++j)
    for (int i = 0; i < data.p(); ++i)
      if (data.mask(i, j)) {
        sum += double(data.values(i, j));
        sumsq += double(data.values(i, j)) * double(data.values(i, j));
        ++count;
      }
  PooledStats s;
  s.mean = sum / double(count);
  s.var = std::max(sumsq / double(count) - s.mean * s.mean, 1e-300);
  return s;
}

}  // namespace detail

/// One stochastically imputed copy: missing entries of each sample drawn
/// from N(mu_i, sqrt(tau) * var_i) where mu_i / var_i are the mean and
/// variance of that sample's observed components and tau ~ Gamma(1, 1).
/// Samples with fewer than two observed entries fall back to the pooled
/// statistics of all observed cells.
template <class Scalar>
Matrix<Scalar> rmi_completed_copy(const IncompleteMatrix<Scalar>& data,
                                  const std::vector<PermutationPlan>& plans, int copy,
                                  std::uint64_t seed,
                                  std::vector<std::string>* warnings = nullptr) {
  Matrix<Scalar> full = data.values;
  std::optional<detail::PooledStats> pooled;
  for (int i = 0; i < data.n(); ++i) {
    const auto& plan = plans[static_cast<std::size_t>(i)];
    if (plan.is_complete()) continue;
    double mu, var;
    if (plan.n_obs() >= 2) {
      double sum = 0;
      for (const int r : plan.obs_idx) sum += double(data.values(r, i));
      mu = sum / plan.n_obs();
      double ss = 0;
      for (const int r : plan.obs_idx) {
        const double d = double(data.values(r, i)) - mu;
        ss += d * d;
      }
      var = ss / (plan.n_obs() - 1);
    } else {
      if (!pooled) {
        pooled = detail::pooled_observed_stats(data);
        if (warnings)
          warnings->push_back("sample " + std::to_string(i) +
                              " has fewer than 2 observed entries; using pooled statistics");
      }
      mu = pooled->mean;
      var = pooled->var;
    }
    Rng rng = Rng::stream(seed, 51, static_cast<std::uint64_t>(copy),
                          static_cast<std::uint64_t>(i));
    const double tau = rng.gamma(1.0, 1.0);
    const double sd = std::sqrt(std::sqrt(tau) * var);
    for (const int r : plan.mis_idx) full(r, i) = Scalar(mu + sd * rng.normal());
  }
  return full;
}

/// Imputation-based baselines: multiple / stochastic imputation averaging
/// Tyler estimates over imputed copies, and per-sample mean imputation.
template <class Scalar>
ShapeEstimate<Scalar> impute_baselines(const IncompleteMatrix<Scalar>& data,
                                       const EstimatorConfig<Scalar>& cfg) {
  validate(cfg, data.p());
  const auto plans = build_plans(data);
  ShapeEstimate<Scalar> est;
  est.textures = Vector<Scalar>::Ones(data.n());

  if (cfg.kind == EstimatorKind::mean_tyl) {
    Matrix<Scalar> full = data.values;
    for (int i = 0; i < data.n(); ++i) {
      const auto& plan = plans[static_cast<std::size_t>(i)];
      if (plan.is_complete()) continue;
      Scalar sum = Scalar(0);
      for (const int r : plan.obs_idx) sum += data.values(r, i);
      const Scalar mu = sum / Scalar(plan.n_obs());
      for (const int r : plan.mis_idx) full(r, i) = mu;
    }
    est.sigma = tyler(full, cfg.fp_tol, cfg.em_max_iter, cfg.normalization);
    if (cfg.rank > 0) {
      auto proj = low_rank_project(est.sigma, cfg.rank);
      est.rank_degenerate = proj.degenerate;
      est.sigma = std::move(proj.sigma);
    }
    return est;
  }

  if (cfg.kind != EstimatorKind::rmi && cfg.kind != EstimatorKind::rsi)
    throw invalid_input("impute_baselines: kind must be rmi, rsi or mean_tyl");
  const int q = cfg.kind == EstimatorKind::rsi ? 1 : cfg.q_imputations;
  Matrix<Scalar> acc = Matrix<Scalar>::Zero(data.p(), data.p());
  for (int j = 0; j < q; ++j) {
    const Matrix<Scalar> full = rmi_completed_copy(data, plans, j, cfg.seed, &est.warnings);
    Matrix<Scalar> s = tyler(full, cfg.fp_tol, cfg.em_max_iter, cfg.normalization);
    if (cfg.rank > 0 && cfg.project_before_averaging) {
      auto proj = low_rank_project(s, cfg.rank);
      est.rank_degenerate = est.rank_degenerate || proj.degenerate;
      s = std::move(proj.sigma);
    }
    acc += s;
  }
  est.sigma = acc / Scalar(q);
  if (cfg.rank > 0 && !cfg.project_before_averaging) {
    auto proj = low_rank_project(est.sigma, cfg.rank);
    est.rank_degenerate = est.rank_degenerate || proj.degenerate;
    est.sigma = std::move(proj.sigma);
  }
  return est;
}

}  // namespace robustcov
