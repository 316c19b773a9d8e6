#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "robustcov/linalg.hpp"
#include "robustcov/rng.hpp"

namespace robustcov {

/// Toeplitz scatter (R)_ij = rho^|i-j|.
template <class Scalar>
Matrix<Scalar> toeplitz_scatter(int p, Scalar rho) {
  if (!(std::abs(rho) < Scalar(1))) throw invalid_input("toeplitz_scatter: |rho| must be < 1");
  Matrix<Scalar> r(p, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < p; ++i) r(i, j) = std::pow(rho, Scalar(std::abs(i - j)));
  return r;
}

template <class Scalar>
struct LowRankCov {
  Matrix<Scalar> sigma;  // I + sigma2 * U U^T
  Matrix<Scalar> basis;  // p x r, orthonormal
};

/// Spiked covariance I + sigma2 U U^T where U spans the top-r eigenspace of
/// the scatter matrix.
template <class Scalar>
LowRankCov<Scalar> lowrank_cov(const Matrix<Scalar>& scatter, int r, Scalar sigma2) {
  const int p = static_cast<int>(scatter.rows());
  if (r < 1 || r >= p) throw invalid_input("lowrank_cov: rank must lie in [1, p)");
  auto d = evd(scatter);
  LowRankCov<Scalar> out;
  out.basis = d.eigenvectors.leftCols(r);
  out.sigma = symmetrize(Matrix<Scalar>(Matrix<Scalar>::Identity(p, p) +
                                        sigma2 * out.basis * out.basis.transpose()));
  return out;
}

namespace detail {

/// Factor L with L L^T = cov; Cholesky with a spectral fallback when the
/// matrix is numerically semidefinite.
template <class Scalar>
Matrix<Scalar> covariance_factor(const Matrix<Scalar>& cov) {
  Eigen::LLT<Matrix<Scalar>> llt(symmetrize(cov));
  if (llt.info() == Eigen::Success) return Matrix<Scalar>(llt.matrixL());
  auto d = evd(cov);
  Vector<Scalar> s = d.eigenvalues.cwiseMax(Scalar(0)).cwiseSqrt();
  return Matrix<Scalar>(d.eigenvectors * s.asDiagonal());
}

}  // namespace detail

template <class Scalar>
struct MsgSample {
  Matrix<Scalar> data;      // p x n
  Vector<Scalar> textures;  // n, the true scales
};

/// Draw n columns y_i = sqrt(tau_i) L z_i with L L^T = cov,
/// tau_i ~ Gamma(alpha, 1/alpha) so E[tau] = 1. alpha = +inf pins tau = 1
/// (the Gaussian case).
template <class Scalar>
MsgSample<Scalar> sample_msg(const Matrix<Scalar>& cov, int n, Scalar alpha,
                             std::uint64_t seed) {
  const int p = static_cast<int>(cov.rows());
  if (n < 1) throw invalid_input("sample_msg: n must be positive");
  const bool gaussian = std::isinf(alpha);
  if (!gaussian && !(alpha > Scalar(0)))
    throw invalid_input("sample_msg: alpha must be positive or +inf");
  const Matrix<Scalar> factor = detail::covariance_factor(cov);

  MsgSample<Scalar> out;
  out.data.resize(p, n);
  out.textures.resize(n);
  Vector<Scalar> z(p);
  for (int j = 0; j < n; ++j) {
    Rng rng = Rng::stream(seed, 11, static_cast<std::uint64_t>(j));
    const Scalar tau =
        gaussian ? Scalar(1) : Scalar(rng.gamma(double(alpha), 1.0 / double(alpha)));
    out.textures(j) = tau;
    for (int i = 0; i < p; ++i) z(i) = Scalar(rng.normal());
    out.data.col(j) = std::sqrt(tau) * (factor * z);
  }
  return out;
}

template <class Scalar>
struct Corrupted {
  Matrix<Scalar> data;
  std::vector<int> outliers;  // perturbed column indices, sorted
};

/// Add white Gaussian noise of standard deviation sigma_wgn to
/// floor(ratio * n) distinct columns; the perturbed index set is returned
/// so those samples can later be masked or discarded.
template <class Scalar>
Corrupted<Scalar> corrupt_wgn(const Matrix<Scalar>& data, double ratio,
                              Scalar sigma_wgn, std::uint64_t seed) {
  if (ratio < 0.0 || ratio >= 1.0) throw invalid_input("corrupt_wgn: ratio must lie in [0, 1)");
  if (!(sigma_wgn >= Scalar(0))) throw invalid_input("corrupt_wgn: sigma_wgn must be >= 0");
  const int p = static_cast<int>(data.rows());
  const int n = static_cast<int>(data.cols());
  const int n_out = static_cast<int>(std::floor(ratio * n));

  Corrupted<Scalar> out;
  out.data = data;
  Rng pick = Rng::stream(seed, 21);
  out.outliers = pick.sample_indices(n, n_out);
  std::sort(out.outliers.begin(), out.outliers.end());
  for (const int j : out.outliers) {
    Rng rng = Rng::stream(seed, 22, static_cast<std::uint64_t>(j));
    for (int i = 0; i < p; ++i) out.data(i, j) += sigma_wgn * Scalar(rng.normal());
  }
  return out;
}

template <class Scalar>
struct Haystack {
  Matrix<Scalar> data;
  std::vector<int> labels;  // 0 = inlier, 1 = outlier
  Matrix<Scalar> basis;     // p x k inlier signal subspace
};

/// Haystack contamination: inliers ~ N(0, I + sigma_s2 U U^T) on a k-dim
/// signal subspace, outliers ~ N(0, I + sigma_o2 Up Up^T) on its orthogonal
/// complement, interleaved at random positions. U comes from the Toeplitz
/// scatter eigenbasis.
template <class Scalar>
Haystack<Scalar> sample_haystack(int p, int n, int k, Scalar sigma_s2, Scalar sigma_o2,
                                 double outlier_ratio, std::uint64_t seed) {
  if (k < 1 || k >= p) throw invalid_input("sample_haystack: k must lie in [1, p)");
  if (outlier_ratio < 0.0 || outlier_ratio >= 1.0)
    throw invalid_input("sample_haystack: outlier_ratio must lie in [0, 1)");
  const int n_out = static_cast<int>(std::lround(outlier_ratio * n));

  auto d = evd(toeplitz_scatter(p, Scalar(0.7)));
  Haystack<Scalar> out;
  out.basis = d.eigenvectors.leftCols(k);
  const Matrix<Scalar> basis_perp = d.eigenvectors.rightCols(p - k);

  const Matrix<Scalar> cov_in = symmetrize(Matrix<Scalar>(
      Matrix<Scalar>::Identity(p, p) + sigma_s2 * out.basis * out.basis.transpose()));
  const Matrix<Scalar> cov_out = symmetrize(Matrix<Scalar>(
      Matrix<Scalar>::Identity(p, p) + sigma_o2 * basis_perp * basis_perp.transpose()));
  const Matrix<Scalar> f_in = detail::covariance_factor(cov_in);
  const Matrix<Scalar> f_out = detail::covariance_factor(cov_out);

  Rng pick = Rng::stream(seed, 31);
  std::vector<int> out_pos = pick.sample_indices(n, n_out);
  out.labels.assign(static_cast<std::size_t>(n), 0);
  for (const int j : out_pos) out.labels[static_cast<std::size_t>(j)] = 1;

  out.data.resize(p, n);
  Vector<Scalar> z(p);
  for (int j = 0; j < n; ++j) {
    Rng rng = Rng::stream(seed, 32, static_cast<std::uint64_t>(j));
    for (int i = 0; i < p; ++i) z(i) = Scalar(rng.normal());
    out.data.col(j) = (out.labels[static_cast<std::size_t>(j)] ? f_out : f_in) * z;
  }
  return out;
}

/// Missing-data ratio schedule used by the benchmark when the sample count
/// grid is swept: {63: 44%, 109: 22%, 190: 11%, 331: 5%, 575: 2%, 1000: 1%}.
inline double scheduled_missing_ratio(int n) {
  switch (n) {
    case 63: return 0.44;
    case 109: return 0.22;
    case 190: return 0.11;
    case 331: return 0.05;
    case 575: return 0.02;
    case 1000: return 0.01;
    default:
      throw config_error("no scheduled missing ratio for n=" + std::to_string(n) +
                         "; provide ratio_grid in the config");
  }
}

}  // namespace robustcov
