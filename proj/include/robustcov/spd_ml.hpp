#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "robustcov/estimators.hpp"
#include "robustcov/simulate.hpp"

namespace robustcov {

/// An SPD matrix treated as a point on the manifold, with an optional class
/// label. The matrix keeps whatever scale its estimator produced; the
/// optional texture rescaling multiplies in the geometric mean of the
/// estimated scales as power information.
template <class Scalar>
struct SpdDescriptor {
  Matrix<Scalar> matrix;
  int label = -1;
  int window_id = -1;
};

/// Estimate one descriptor from a (possibly incomplete) window of
/// observations. Complete-data estimators (scm, tyler) require a fully
/// observed window; estimator failures carry the window id.
template <class Scalar>
SpdDescriptor<Scalar> descriptor_from_window(const IncompleteMatrix<Scalar>& window,
                                             const EstimatorConfig<Scalar>& cfg,
                                             bool rescale_by_texture = false,
                                             int window_id = -1) {
  if (window.n() < 2) throw invalid_input("descriptor_from_window: need at least 2 observations");
  SpdDescriptor<Scalar> out;
  out.window_id = window_id;
  try {
    switch (cfg.kind) {
      case EstimatorKind::em_tyl:
      case EstimatorKind::em_scm: {
        auto est = run_em(window, cfg);
        if (rescale_by_texture) {
          const Scalar geo = std::exp(est.textures.array().log().mean());
          est.sigma *= geo;
        }
        out.matrix = std::move(est.sigma);
        break;
      }
      case EstimatorKind::scm:
        if (!window.mask.all()) throw invalid_input("scm needs a complete window");
        out.matrix = scm(window.values);
        if (cfg.rank > 0) out.matrix = low_rank_project(out.matrix, cfg.rank).sigma;
        break;
      case EstimatorKind::tyler:
        if (!window.mask.all()) throw invalid_input("tyler needs a complete window");
        out.matrix = tyler(window.values, cfg.fp_tol, cfg.em_max_iter, cfg.normalization);
        if (cfg.rank > 0) out.matrix = low_rank_project(out.matrix, cfg.rank).sigma;
        break;
      default:
        out.matrix = impute_baselines(window, cfg).sigma;
        break;
    }
  } catch (const std::exception& e) {
    throw numerical_error("descriptor for window " + std::to_string(window_id) +
                          " failed: " + e.what());
  }
  return out;
}

template <class Scalar>
struct MdrmModel {
  std::vector<int> class_ids;          // sorted ascending
  std::vector<Matrix<Scalar>> means;   // Karcher mean per class
};

/// Train the minimum-distance-to-Riemannian-mean classifier: one Karcher
/// mean per class.
template <class Scalar>
MdrmModel<Scalar> mdrm_train(const std::vector<SpdDescriptor<Scalar>>& descriptors,
                             Scalar karcher_tol = Scalar(1e-9), int karcher_max_iter = 100) {
  if (descriptors.empty()) throw invalid_input("mdrm_train: no descriptors");
  std::map<int, std::vector<Matrix<Scalar>>> by_class;
  for (const auto& d : descriptors) {
    if (d.label < 0) throw invalid_input("mdrm_train: unlabeled descriptor");
    by_class[d.label].push_back(d.matrix);
  }
  MdrmModel<Scalar> model;
  for (auto& [label, mats] : by_class) {
    model.class_ids.push_back(label);
    model.means.push_back(karcher_mean(mats, karcher_tol, karcher_max_iter).mean);
  }
  return model;
}

/// Nearest class mean under the squared geodesic distance; ties break to
/// the smallest class id.
template <class Scalar>
int mdrm_predict(const MdrmModel<Scalar>& model, const SpdDescriptor<Scalar>& descriptor) {
  if (model.class_ids.empty()) throw invalid_input("mdrm_predict: empty model");
  int best = model.class_ids[0];
  Scalar best_d = geodesic_distance_sq(model.means[0], descriptor.matrix);
  for (std::size_t k = 1; k < model.class_ids.size(); ++k) {
    const Scalar d = geodesic_distance_sq(model.means[k], descriptor.matrix);
    if (d < best_d) {
      best_d = d;
      best = model.class_ids[k];
    }
  }
  return best;
}

template <class Scalar>
struct Clustering {
  std::vector<int> assignments;
  std::vector<Matrix<Scalar>> centroids;
  std::vector<Scalar> objective_trace;  // sum of squared distances per Lloyd pass
};

/// K-means++ on the SPD manifold: D^2 seeding under the squared geodesic
/// distance, Lloyd iterations with Karcher-mean centroid updates. An empty
/// cluster is re-seeded at the point farthest from its centroid set.
template <class Scalar>
Clustering<Scalar> kmeanspp_spd(const std::vector<SpdDescriptor<Scalar>>& descriptors,
                                int K, std::uint64_t seed, int max_iter = 50,
                                Scalar karcher_tol = Scalar(1e-9),
                                int karcher_max_iter = 60) {
  const int N = static_cast<int>(descriptors.size());
  if (K < 1 || K > N) throw invalid_input("kmeanspp_spd: K must lie in [1, #points]");
  Rng rng = Rng::stream(seed, 71);

  std::vector<Scalar> nearest(static_cast<std::size_t>(N), Scalar(0));
  const auto update_nearest = [&](const Matrix<Scalar>& centroid, bool first) {
    for (int i = 0; i < N; ++i) {
      const Scalar d = geodesic_distance_sq(centroid, descriptors[std::size_t(i)].matrix);
      if (first || d < nearest[std::size_t(i)]) nearest[std::size_t(i)] = d;
    }
  };

  Clustering<Scalar> out;
  out.centroids.push_back(descriptors[std::size_t(rng.uniform_int(N))].matrix);
  update_nearest(out.centroids.back(), true);
  while (static_cast<int>(out.centroids.size()) < K) {
    const Scalar total = std::accumulate(nearest.begin(), nearest.end(), Scalar(0));
    int pick = 0;
    if (total > Scalar(0)) {
      const Scalar u = Scalar(rng.uniform()) * total;
      Scalar cum = Scalar(0);
      for (int i = 0; i < N; ++i) {
        cum += nearest[std::size_t(i)];
        if (u <= cum) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(N);  // all points coincide with a centroid
    }
    out.centroids.push_back(descriptors[std::size_t(pick)].matrix);
    update_nearest(out.centroids.back(), false);
  }

  out.assignments.assign(static_cast<std::size_t>(N), 0);
  for (int pass = 0; pass < max_iter; ++pass) {
    bool changed = pass == 0;
    Scalar objective = Scalar(0);
    for (int i = 0; i < N; ++i) {
      int best = 0;
      Scalar best_d = geodesic_distance_sq(out.centroids[0], descriptors[std::size_t(i)].matrix);
      for (int k = 1; k < K; ++k) {
        const Scalar d = geodesic_distance_sq(out.centroids[std::size_t(k)],
                                              descriptors[std::size_t(i)].matrix);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (out.assignments[std::size_t(i)] != best) changed = true;
      out.assignments[std::size_t(i)] = best;
      objective += best_d;
    }
    out.objective_trace.push_back(objective);
    if (!changed) break;

    for (int k = 0; k < K; ++k) {
      std::vector<Matrix<Scalar>> members;
      for (int i = 0; i < N; ++i)
        if (out.assignments[std::size_t(i)] == k) members.push_back(descriptors[std::size_t(i)].matrix);
      if (members.empty()) {
        // farthest point from its current centroid becomes the new seed
        int far = 0;
        Scalar far_d = Scalar(-1);
        for (int i = 0; i < N; ++i) {
          const Scalar d = geodesic_distance_sq(
              out.centroids[std::size_t(out.assignments[std::size_t(i)])],
              descriptors[std::size_t(i)].matrix);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        out.centroids[std::size_t(k)] = descriptors[std::size_t(far)].matrix;
        out.assignments[std::size_t(far)] = k;
      } else {
        out.centroids[std::size_t(k)] = karcher_mean(members, karcher_tol, karcher_max_iter).mean;
      }
    }
  }
  return out;
}

inline double overall_accuracy(const std::vector<int>& predicted,
                               const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || predicted.empty())
    throw invalid_input("overall_accuracy: size mismatch");
  int hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return double(hits) / double(truth.size());
}

/// Clustering overall accuracy: best label permutation for K <= 8,
/// greedy confusion-matrix matching beyond that.
inline double clustering_accuracy(const std::vector<int>& assignments,
                                  const std::vector<int>& truth, int K) {
  if (assignments.size() != truth.size() || assignments.empty())
    throw invalid_input("clustering_accuracy: size mismatch");
  std::vector<std::vector<int>> confusion(static_cast<std::size_t>(K),
                                          std::vector<int>(static_cast<std::size_t>(K), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (assignments[i] < 0 || assignments[i] >= K || truth[i] < 0 || truth[i] >= K)
      throw invalid_input("clustering_accuracy: label out of range");
    ++confusion[std::size_t(assignments[i])][std::size_t(truth[i])];
  }
  long best = 0;
  if (K <= 8) {
    std::vector<int> perm(static_cast<std::size_t>(K));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      long hits = 0;
      for (int k = 0; k < K; ++k) hits += confusion[std::size_t(k)][std::size_t(perm[std::size_t(k)])];
      best = std::max(best, hits);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<bool> row_used(static_cast<std::size_t>(K), false);
    std::vector<bool> col_used(static_cast<std::size_t>(K), false);
    for (int step = 0; step < K; ++step) {
      int bi = -1, bj = -1;
      long bv = -1;
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j)
          if (!row_used[std::size_t(i)] && !col_used[std::size_t(j)] &&
              confusion[std::size_t(i)][std::size_t(j)] > bv) {
            bv = confusion[std::size_t(i)][std::size_t(j)];
            bi = i;
            bj = j;
          }
      row_used[std::size_t(bi)] = true;
      col_used[std::size_t(bj)] = true;
      best += bv;
    }
  }
  return double(best) / double(truth.size());
}

/// Synthetic labeled windows standing in for the real remote-sensing
/// products: each class has its own Toeplitz correlation and texture shape.
template <class Scalar>
struct ClassWindows {
  std::vector<IncompleteMatrix<Scalar>> windows;
  std::vector<int> labels;
};

template <class Scalar>
ClassWindows<Scalar> synth_class_windows(int p, int window_n, int windows_per_class,
                                         const std::vector<Scalar>& rhos,
                                         const std::vector<Scalar>& alphas,
                                         std::uint64_t seed) {
  if (rhos.empty() || rhos.size() != alphas.size())
    throw invalid_input("synth_class_windows: class parameter lists must match");
  ClassWindows<Scalar> out;
  for (std::size_t c = 0; c < rhos.size(); ++c) {
    const Matrix<Scalar> cov = toeplitz_scatter(p, rhos[c]);
    for (int w = 0; w < windows_per_class; ++w) {
      const auto draw = sample_msg(cov, window_n, alphas[c],
                                   Rng::stream(seed, 81, c, static_cast<std::uint64_t>(w)).next_u64());
      out.windows.push_back(IncompleteMatrix<Scalar>::complete(draw.data));
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

/// Mask whole variables (bands) of a window: the contiguous run of rows
/// [start, start + n_bands) becomes entirely missing.
template <class Scalar>
void mask_band_range(IncompleteMatrix<Scalar>& window, int start, int n_bands) {
  if (n_bands <= 0) return;
  if (n_bands >= window.p()) throw invalid_input("mask_band_range: cannot mask every band");
  if (start < 0 || start + n_bands > window.p())
    throw invalid_input("mask_band_range: run does not fit");
  window.mask.block(start, 0, n_bands, window.n()).setConstant(false);
}

/// Mask a random contiguous run of whole bands.
template <class Scalar>
void mask_bands(IncompleteMatrix<Scalar>& window, int n_bands, std::uint64_t seed) {
  if (n_bands <= 0) return;
  if (n_bands >= window.p())
    throw invalid_input("mask_bands: cannot mask every band");
  Rng rng = Rng::stream(seed, 82);
  mask_band_range(window, rng.uniform_int(window.p() - n_bands + 1), n_bands);
}

/// Column-stripe missingness on selected bands: for each incomplete band a
/// contiguous stripe of columns is masked.
template <class Scalar>
void mask_band_stripes(IncompleteMatrix<Scalar>& window, int n_bands,
                       double stripe_fraction, std::uint64_t seed) {
  if (n_bands <= 0) return;
  if (n_bands > window.p()) throw invalid_input("mask_band_stripes: too many bands");
  Rng rng = Rng::stream(seed, 83);
  const auto bands = rng.sample_indices(window.p(), n_bands);
  const int width = std::max(1, static_cast<int>(std::lround(stripe_fraction * window.n())));
  for (const int b : bands) {
    const int start = rng.uniform_int(std::max(1, window.n() - width + 1));
    window.mask.block(b, start, 1, std::min(width, window.n() - start)).setConstant(false);
  }
}

}  // namespace robustcov
