#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <stdexcept>
#include <string>

namespace robustcov {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Bad caller input (dimensions, non-finite values, invalid options).
struct invalid_input : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown at runtime (singular blocks, divergent iterations).
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed configuration file or infeasible experiment setup.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// (m + m^T)/2, forcing exact symmetry after a sequence of products.
template <class Derived>
Matrix<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  Matrix<S> a = m;
  return ((a + a.transpose()) * S(0.5)).eval();
}

template <class Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& m,
                  typename Derived::Scalar tol) {
  if (m.rows() != m.cols()) return false;
  Matrix<typename Derived::Scalar> a = m;
  return (a - a.transpose()).cwiseAbs().maxCoeff() <=
         tol * std::max<typename Derived::Scalar>(1, a.cwiseAbs().maxCoeff());
}

/// Shortest round-trip decimal representation, used for all CSV output.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_number(long long v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace robustcov
