#include <doctest.h>

#include "robustcov/estimators.hpp"
#include "robustcov/simulate.hpp"
#include "test_util.hpp"

using namespace robustcov;

TEST_SUITE_BEGIN("simulate");

TEST_CASE("toeplitz scatter") {
  CHECK((toeplitz_scatter<double>(4, 0.0) - Matrix<double>::Identity(4, 4)).norm() == 0.0);

  const auto r2 = toeplitz_scatter<double>(2, 0.7);
  CHECK(r2(0, 0) == 1.0);
  CHECK(r2(0, 1) == doctest::Approx(0.7));
  CHECK(r2(1, 0) == doctest::Approx(0.7));

  const auto d = evd(toeplitz_scatter<double>(15, 0.7));
  CHECK(d.eigenvalues(14) > 0.0);
}

TEST_CASE("spiked covariance from the scatter eigenbasis") {
  const auto scatter = toeplitz_scatter<double>(8, 0.7);
  const auto flat = lowrank_cov(scatter, 3, 0.0);
  CHECK((flat.sigma - Matrix<double>::Identity(8, 8)).norm() <= 1e-12);

  const auto lr = lowrank_cov(scatter, 3, 5.0);
  const auto d = evd(lr.sigma);
  for (int k = 0; k < 3; ++k) CHECK(d.eigenvalues(k) == doctest::Approx(6.0).epsilon(1e-10));
  for (int k = 3; k < 8; ++k) CHECK(d.eigenvalues(k) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK((lr.basis.transpose() * lr.basis - Matrix<double>::Identity(3, 3)).norm() <= 1e-10);
}

TEST_CASE("msg sampling: textures and covariance") {
  const auto cov = toeplitz_scatter<double>(5, 0.5);

  const auto gaussian = sample_msg(cov, 100, std::numeric_limits<double>::infinity(), 3);
  CHECK((gaussian.textures.array() == 1.0).all());

  const auto msg = sample_msg(cov, 20000, 1.0, 4);
  CHECK(msg.textures.minCoeff() > 0.0);
  CHECK(msg.textures.mean() == doctest::Approx(1.0).epsilon(0.05));

  // with tau pinned to one the sample covariance concentrates on cov
  const auto big = sample_msg(cov, 100000, std::numeric_limits<double>::infinity(), 5);
  CHECK((scm(big.data) - cov).norm() <= 0.02 * cov.norm());

  const auto again = sample_msg(cov, 50, 1.0, 4);
  CHECK((again.data - msg.data.leftCols(50)).norm() == 0.0);  // per-sample streams
}

TEST_CASE("white-noise corruption") {
  testutil::Rng rng(6);
  const Matrix<double> data = testutil::random_gaussian(6, 40, rng);

  const auto none = corrupt_wgn(data, 0.0, 2.0, 1);
  CHECK(none.outliers.empty());
  CHECK((none.data - data).norm() == 0.0);

  const auto silent = corrupt_wgn(data, 0.25, 0.0, 1);
  CHECK(silent.outliers.size() == 10);
  CHECK((silent.data - data).norm() == 0.0);

  const auto hit = corrupt_wgn(data, 0.25, 3.0, 1);
  CHECK(hit.outliers.size() == 10);
  std::vector<int> uniq = hit.outliers;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  CHECK(uniq.size() == 10);

  // per-coordinate inflation of the perturbed columns is sigma^2
  testutil::MeanAccumulator acc;
  for (int rep = 0; rep < 200; ++rep) {
    const auto c = corrupt_wgn(data, 0.25, 3.0, 100 + rep);
    for (const int j : c.outliers)
      for (int i = 0; i < 6; ++i) {
        const double d = c.data(i, j) - data(i, j);
        acc.add(d * d);
      }
  }
  CHECK(acc.mean() == doctest::Approx(9.0).epsilon(0.05));
}

TEST_CASE("haystack contamination model") {
  const auto clean = sample_haystack<double>(10, 50, 3, 10.0, 5.0, 0.0, 9);
  for (const int l : clean.labels) CHECK(l == 0);

  const auto hay = sample_haystack<double>(10, 50, 3, 10.0, 5.0, 0.3, 9);
  int n_out = 0;
  for (const int l : hay.labels) n_out += l;
  CHECK(n_out == 15);

  // flat outliers are standard normal
  const auto flat = sample_haystack<double>(6, 60000, 2, 10.0, 0.0, 0.5, 10);
  std::vector<int> out_cols;
  for (int j = 0; j < 60000; ++j)
    if (flat.labels[std::size_t(j)]) out_cols.push_back(j);
  Matrix<double> outliers(6, static_cast<Eigen::Index>(out_cols.size()));
  for (std::size_t k = 0; k < out_cols.size(); ++k)
    outliers.col(static_cast<Eigen::Index>(k)) = flat.data.col(out_cols[k]);
  CHECK((scm(outliers) - Matrix<double>::Identity(6, 6)).norm() <= 0.05);

  // inlier covariance concentrates on I + sigma_s2 U U^T
  const auto big = sample_haystack<double>(8, 100000, 3, 10.0, 5.0, 0.0, 11);
  const Matrix<double> expected = Matrix<double>::Identity(8, 8) +
                                  10.0 * big.basis * big.basis.transpose();
  CHECK((scm(big.data) - expected).norm() <= 0.02 * expected.norm());
}

TEST_CASE("published missing-ratio schedule is reproduced by the generators") {
  testutil::Rng rng(77);
  const int p = 15;
  for (const int n : {63, 109, 190, 331, 575, 1000}) {
    const double target = scheduled_missing_ratio(n);
    const Matrix<double> full = testutil::random_gaussian(p, n, rng);
    const auto general = apply_pattern(full, general_spec_for(p, n, target, 1000 + n));
    CHECK(std::abs(general.missing_ratio() - target) <= kPatternRatioTol);
    PatternSpec spec;
    spec.kind = PatternKind::random_cells;
    spec.target_ratio = target;
    spec.seed = 2000 + n;
    const auto random = apply_pattern(full, spec);
    CHECK(std::abs(random.missing_ratio() - target) <= kPatternRatioTol);
  }
  CHECK_THROWS_AS(scheduled_missing_ratio(64), config_error);
}

TEST_SUITE_END();
