#pragma once

#include <cmath>
#include <vector>

#include "robustcov/core.hpp"

namespace robustcov {

/// Relative eigenvalue floor below which a symmetric matrix is treated as
/// not positive definite.
inline constexpr double kSpdEigRatio = 1e-12;
inline constexpr double kNearSingularRatio = 1e-14;

/// Spectral decomposition of a symmetric matrix with a fixed convention:
/// eigenvalues sorted descending, each eigenvector's largest-magnitude
/// component made positive so repeated runs are bit-identical.
template <class Scalar>
struct EigenDecomposition {
  Vector<Scalar> eigenvalues;   // descending
  Matrix<Scalar> eigenvectors;  // orthonormal columns, matching order
};

template <class Scalar>
EigenDecomposition<Scalar> evd(const Matrix<Scalar>& m) {
  if (m.rows() != m.cols()) throw invalid_input("evd: matrix must be square");
  if (!all_finite(m)) throw invalid_input("evd: non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(symmetrize(m));
  if (solver.info() != Eigen::Success)
    throw numerical_error("evd: eigensolver failed to converge");

  const int p = static_cast<int>(m.rows());
  EigenDecomposition<Scalar> out;
  out.eigenvalues.resize(p);
  out.eigenvectors.resize(p, p);
  for (int k = 0; k < p; ++k) {
    out.eigenvalues(k) = solver.eigenvalues()(p - 1 - k);
    Vector<Scalar> v = solver.eigenvectors().col(p - 1 - k);
    int imax = 0;
    for (int i = 1; i < p; ++i)
      if (std::abs(v(i)) > std::abs(v(imax))) imax = i;
    if (v(imax) < Scalar(0)) v = -v;
    out.eigenvectors.col(k) = v;
  }
  return out;
}

template <class Scalar>
bool is_spd(const Matrix<Scalar>& m, Scalar tol = Scalar(1e-9)) {
  if (m.rows() != m.cols() || !all_finite(m)) return false;
  if (!is_symmetric(m, tol)) return false;
  const auto d = evd(m);
  const Scalar lmax = d.eigenvalues(0);
  return lmax > Scalar(0) &&
         d.eigenvalues(m.rows() - 1) > Scalar(kSpdEigRatio) * lmax;
}

namespace detail {

template <class Scalar, class F>
Matrix<Scalar> spectral_map(const EigenDecomposition<Scalar>& d, F&& f) {
  Vector<Scalar> mapped = d.eigenvalues.unaryExpr(f);
  return symmetrize(Matrix<Scalar>(d.eigenvectors * mapped.asDiagonal() *
                                   d.eigenvectors.transpose()));
}

template <class Scalar>
EigenDecomposition<Scalar> evd_spd_checked(const Matrix<Scalar>& m,
                                           const char* who) {
  auto d = evd(m);
  const int p = static_cast<int>(m.rows());
  if (d.eigenvalues(0) <= Scalar(0) ||
      d.eigenvalues(p - 1) <= Scalar(kNearSingularRatio) * d.eigenvalues(0))
    throw numerical_error(std::string(who) + ": matrix is singular or not positive definite");
  return d;
}

}  // namespace detail

/// (m^{1/2}, m^{-1/2}) of an SPD matrix.
template <class Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> spd_sqrt_inv_sqrt(const Matrix<Scalar>& m) {
  auto d = detail::evd_spd_checked(m, "spd_sqrt_inv_sqrt");
  return {detail::spectral_map(d, [](Scalar x) { return std::sqrt(x); }),
          detail::spectral_map(d, [](Scalar x) { return Scalar(1) / std::sqrt(x); })};
}

template <class Scalar>
Matrix<Scalar> matrix_log(const Matrix<Scalar>& m) {
  auto d = detail::evd_spd_checked(m, "matrix_log");
  return detail::spectral_map(d, [](Scalar x) { return std::log(x); });
}

template <class Scalar>
Matrix<Scalar> matrix_exp(const Matrix<Scalar>& m) {
  if (!is_symmetric(m, Scalar(1e-10)))
    throw invalid_input("matrix_exp: matrix must be symmetric");
  auto d = evd(m);
  return detail::spectral_map(d, [](Scalar x) { return std::exp(x); });
}

/// Squared affine-invariant distance ||log(a^{-1/2} b a^{-1/2})||_F^2,
/// computed from the generalized eigenvalues of (b, a).
template <class Scalar>
Scalar geodesic_distance_sq(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols())
    throw invalid_input("geodesic_distance_sq: dimension mismatch");
  Eigen::LLT<Matrix<Scalar>> llt(symmetrize(a));
  if (llt.info() != Eigen::Success)
    throw numerical_error("geodesic_distance_sq: first argument is not positive definite");
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix<Scalar>> ges(
      symmetrize(b), symmetrize(a), Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  Scalar sum = Scalar(0);
  for (int k = 0; k < a.rows(); ++k) {
    const Scalar lambda = ges.eigenvalues()(k);
    if (!(lambda > Scalar(0)) || !std::isfinite(lambda))
      throw numerical_error("geodesic_distance_sq: second argument is not positive definite");
    const Scalar l = std::log(lambda);
    sum += l * l;
  }
  return sum;
}

template <class Scalar>
struct KarcherResult {
  Matrix<Scalar> mean;
  int iterations = 0;
  bool converged = true;
};

/// Fréchet mean of SPD matrices under the affine-invariant metric, by the
/// standard fixed-point iteration M <- M^{1/2} exp(mean_k log(M^{-1/2} P_k
/// M^{-1/2})) M^{1/2}. Stops when the gradient norm ||mean log||_F drops
/// below tol; returns the last iterate with converged=false otherwise.
template <class Scalar>
KarcherResult<Scalar> karcher_mean(const std::vector<Matrix<Scalar>>& points,
                                   Scalar tol = Scalar(1e-10), int max_iter = 100) {
  if (points.empty()) throw invalid_input("karcher_mean: empty input");
  const int p = static_cast<int>(points[0].rows());
  for (const auto& m : points)
    if (m.rows() != p || m.cols() != p)
      throw invalid_input("karcher_mean: dimension mismatch");
  if (points.size() == 1) return {points[0], 0, true};

  Matrix<Scalar> mean = Matrix<Scalar>::Zero(p, p);
  for (const auto& m : points) mean += m;
  mean /= Scalar(points.size());

  KarcherResult<Scalar> out;
  for (int it = 1; it <= max_iter; ++it) {
    auto [sqrtm, isqrtm] = spd_sqrt_inv_sqrt(mean);
    Matrix<Scalar> tangent = Matrix<Scalar>::Zero(p, p);
    for (const auto& m : points)
      tangent += matrix_log(symmetrize(Matrix<Scalar>(isqrtm * m * isqrtm)));
    tangent /= Scalar(points.size());
    out.iterations = it;
    if (tangent.norm() < tol) {
      out.mean = mean;
      return out;
    }
    mean = symmetrize(Matrix<Scalar>(sqrtm * matrix_exp(tangent) * sqrtm));
  }
  out.mean = mean;
  out.converged = false;
  return out;
}

enum class Normalization { trace, determinant };

/// Rescale an SPD matrix to the reference scale: tr = p or det = 1.
template <class Scalar>
Matrix<Scalar> normalize_shape(const Matrix<Scalar>& m,
                               Normalization mode = Normalization::trace) {
  const int p = static_cast<int>(m.rows());
  if (mode == Normalization::trace) {
    const Scalar t = m.trace();
    if (!(t > Scalar(0))) throw numerical_error("normalize_shape: non-positive trace");
    return m * (Scalar(p) / t);
  }
  Eigen::LLT<Matrix<Scalar>> llt(symmetrize(m));
  if (llt.info() != Eigen::Success)
    throw numerical_error("normalize_shape: matrix is not positive definite");
  Scalar logdet = Scalar(0);
  for (int i = 0; i < p; ++i) logdet += Scalar(2) * std::log(llt.matrixL()(i, i));
  return m * std::exp(-logdet / Scalar(p));
}

}  // namespace robustcov
