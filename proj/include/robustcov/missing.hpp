#pragma once

#include <utility>
#include <vector>

#include "robustcov/core.hpp"
#include "robustcov/rng.hpp"

namespace robustcov {

/// p x n column-sample data with a boolean observedness mask. Entries where
/// the mask is false are undefined and must never be read.
template <class Scalar>
struct IncompleteMatrix {
  Matrix<Scalar> values;  // p x n
  Mask mask;              // p x n, true = observed

  int p() const { return static_cast<int>(values.rows()); }
  int n() const { return static_cast<int>(values.cols()); }

  static IncompleteMatrix complete(Matrix<Scalar> v) {
    IncompleteMatrix out;
    out.mask = Mask::Constant(v.rows(), v.cols(), true);
    out.values = std::move(v);
    return out;
  }

  long observed_count() const { return mask.count(); }
  double missing_ratio() const {
    return 1.0 - static_cast<double>(observed_count()) / (double(p()) * double(n()));
  }
  int column_observed_count(int j) const {
    return static_cast<int>(mask.col(j).count());
  }
  bool column_complete(int j) const { return column_observed_count(j) == p(); }
};

template <class Scalar>
void validate(const IncompleteMatrix<Scalar>& data) {
  if (data.values.rows() != data.mask.rows() || data.values.cols() != data.mask.cols())
    throw invalid_input("IncompleteMatrix: values and mask shapes differ");
  if (data.p() < 1 || data.n() < 1)
    throw invalid_input("IncompleteMatrix: empty matrix");
  for (int j = 0; j < data.n(); ++j)
    for (int i = 0; i < data.p(); ++i)
      if (data.mask(i, j) && !std::isfinite(data.values(i, j)))
        throw invalid_input("IncompleteMatrix: non-finite observed entry");
}

/// Per-sample index split realizing the observed-first permutation. The
/// split is stable: original relative order is preserved inside each group.
struct PermutationPlan {
  std::vector<int> obs_idx;
  std::vector<int> mis_idx;

  int p() const { return static_cast<int>(obs_idx.size() + mis_idx.size()); }
  int n_obs() const { return static_cast<int>(obs_idx.size()); }
  int n_mis() const { return static_cast<int>(mis_idx.size()); }
  bool is_complete() const { return mis_idx.empty(); }

  /// Position k of the permuted vector holds original index order(k).
  std::vector<int> order() const {
    std::vector<int> o(obs_idx);
    o.insert(o.end(), mis_idx.begin(), mis_idx.end());
    return o;
  }

  template <class Scalar>
  Vector<Scalar> apply_vec(const Vector<Scalar>& y) const {
    const auto o = order();
    Vector<Scalar> out(p());
    for (int k = 0; k < p(); ++k) out(k) = y(o[k]);
    return out;
  }

  template <class Scalar>
  Vector<Scalar> unapply_vec(const Vector<Scalar>& yt) const {
    const auto o = order();
    Vector<Scalar> out(p());
    for (int k = 0; k < p(); ++k) out(o[k]) = yt(k);
    return out;
  }

  /// P Sigma P^T: reorder a symmetric matrix into obs-first coordinates.
  template <class Scalar>
  Matrix<Scalar> permute_sym(const Matrix<Scalar>& sigma) const {
    const auto o = order();
    Matrix<Scalar> out(p(), p());
    for (int l = 0; l < p(); ++l)
      for (int k = 0; k < p(); ++k) out(k, l) = sigma(o[k], o[l]);
    return out;
  }

  /// P^T B P: scatter a matrix in obs-first coordinates back to the
  /// original variable order.
  template <class Scalar>
  Matrix<Scalar> unpermute_sym(const Matrix<Scalar>& b) const {
    const auto o = order();
    Matrix<Scalar> out(p(), p());
    for (int l = 0; l < p(); ++l)
      for (int k = 0; k < p(); ++k) out(o[k], o[l]) = b(k, l);
    return out;
  }
};

/// One plan per sample; a column with no observed entry is rejected.
template <class Scalar>
std::vector<PermutationPlan> build_plans(const IncompleteMatrix<Scalar>& data) {
  validate(data);
  std::vector<PermutationPlan> plans(static_cast<std::size_t>(data.n()));
  for (int j = 0; j < data.n(); ++j) {
    auto& plan = plans[static_cast<std::size_t>(j)];
    for (int i = 0; i < data.p(); ++i)
      (data.mask(i, j) ? plan.obs_idx : plan.mis_idx).push_back(i);
    if (plan.obs_idx.empty())
      throw invalid_input("build_plans: sample " + std::to_string(j) +
                          " has no observed entries");
  }
  return plans;
}

/// Indices of fully observed and partially observed samples.
template <class Scalar>
std::pair<std::vector<int>, std::vector<int>> split_sample_sets(
    const IncompleteMatrix<Scalar>& data) {
  std::pair<std::vector<int>, std::vector<int>> sets;
  for (int j = 0; j < data.n(); ++j)
    (data.column_complete(j) ? sets.first : sets.second).push_back(j);
  return sets;
}

enum class PatternKind { monotone, general, random_cells };

/// Missingness pattern generator settings. Monotone masks one fixed block;
/// general scatters n_blocks rectangles with uniformly drawn sides and
/// resamples until the realized ratio lands within +-2 points of target;
/// random deletes cells independently, with the same acceptance rule.
struct PatternSpec {
  PatternKind kind = PatternKind::general;
  double target_ratio = 0.0;             // general / random
  int block_rows = 7, block_cols = 20;   // monotone
  int n_blocks = 4;                      // general
  int block_row_min = 2, block_row_max = 5;
  int block_col_min = 2, block_col_max = 8;
  std::uint64_t seed = 0;
};

inline constexpr double kPatternRatioTol = 0.02;

/// Heuristic general-pattern spec sized so the expected covered area matches
/// the target ratio; the resampling loop does the fine adjustment.
inline PatternSpec general_spec_for(int p, int n, double target_ratio,
                                    std::uint64_t seed) {
  PatternSpec spec;
  spec.kind = PatternKind::general;
  spec.target_ratio = target_ratio;
  spec.seed = seed;
  const double total = target_ratio * p * n;
  spec.n_blocks = target_ratio > 0.15 ? 6 : 4;
  spec.block_row_min = std::max(1, p / 6);
  spec.block_row_max = std::max(spec.block_row_min + 1, std::min(p - 1, (2 * p) / 3));
  const double mean_rows = 0.5 * (spec.block_row_min + spec.block_row_max);
  // 1.12 compensates the union shrinkage from overlapping blocks
  const double mean_cols = 1.12 * total / (spec.n_blocks * mean_rows);
  spec.block_col_min = std::max(1, static_cast<int>(std::floor(0.6 * mean_cols)));
  spec.block_col_max =
      std::min(n, std::max(spec.block_col_min + 1, static_cast<int>(std::ceil(1.4 * mean_cols))));
  return spec;
}

namespace detail {

inline bool mask_acceptable(const Mask& mask, double target, double tol) {
  const double realized =
      1.0 - static_cast<double>(mask.count()) / (double(mask.rows()) * double(mask.cols()));
  if (std::abs(realized - target) > tol) return false;
  for (Eigen::Index j = 0; j < mask.cols(); ++j)
    if (mask.col(j).count() == 0) return false;
  return true;
}

}  // namespace detail

/// Delete entries of a complete matrix according to the pattern spec.
template <class Scalar>
IncompleteMatrix<Scalar> apply_pattern(const Matrix<Scalar>& full,
                                       const PatternSpec& spec) {
  const int p = static_cast<int>(full.rows());
  const int n = static_cast<int>(full.cols());
  IncompleteMatrix<Scalar> out;
  out.values = full;
  out.mask = Mask::Constant(p, n, true);

  if (spec.kind == PatternKind::monotone) {
    if (spec.block_rows < 1 || spec.block_cols < 1 || spec.block_rows >= p ||
        spec.block_cols > n)
      throw config_error("apply_pattern: monotone block does not fit (needs rows < p, cols <= n)");
    out.mask.block(0, 0, spec.block_rows, spec.block_cols).setConstant(false);
    return out;
  }

  if (spec.target_ratio < 0.0 || spec.target_ratio >= 1.0)
    throw config_error("apply_pattern: target_ratio must lie in [0, 1)");
  if (spec.target_ratio == 0.0) return out;

  Rng rng = Rng::stream(spec.seed, 41);
  const int attempts = 5000;

  if (spec.kind == PatternKind::general) {
    if (spec.block_row_max >= p || spec.block_row_min < 1 ||
        spec.block_row_min > spec.block_row_max ||
        spec.block_col_min < 1 || spec.block_col_max > n ||
        spec.block_col_min > spec.block_col_max || spec.n_blocks < 1)
      throw config_error("apply_pattern: infeasible general-pattern block ranges");
    for (int attempt = 0; attempt < attempts; ++attempt) {
      Mask mask = Mask::Constant(p, n, true);
      for (int b = 0; b < spec.n_blocks; ++b) {
        const int h = spec.block_row_min + rng.uniform_int(spec.block_row_max - spec.block_row_min + 1);
        const int w = spec.block_col_min + rng.uniform_int(spec.block_col_max - spec.block_col_min + 1);
        const int r0 = rng.uniform_int(p - h + 1);
        const int c0 = rng.uniform_int(n - w + 1);
        mask.block(r0, c0, h, w).setConstant(false);
      }
      if (detail::mask_acceptable(mask, spec.target_ratio, kPatternRatioTol)) {
        out.mask = mask;
        return out;
      }
    }
    throw config_error("apply_pattern: could not realize general pattern within tolerance");
  }

  // random: independent entrywise deletion
  for (int attempt = 0; attempt < attempts; ++attempt) {
    Mask mask = Mask::Constant(p, n, true);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < p; ++i)
        if (rng.uniform() < spec.target_ratio) mask(i, j) = false;
    if (detail::mask_acceptable(mask, spec.target_ratio, kPatternRatioTol)) {
      out.mask = mask;
      return out;
    }
  }
  throw config_error("apply_pattern: could not realize random pattern within tolerance");
}

}  // namespace robustcov
