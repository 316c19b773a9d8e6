#include <doctest.h>

#include "robustcov/impute.hpp"
#include "robustcov/simulate.hpp"
#include "test_util.hpp"

using namespace robustcov;
using testutil::random_gaussian;
using testutil::random_incomplete;

TEST_SUITE_BEGIN("impute");

TEST_CASE("cross-validation holdout picks observed cells only") {
  testutil::Rng rng(1);
  auto data = random_incomplete(random_gaussian(8, 40, rng), 0.3, rng);
  const auto [masked, cells] = hold_out_cv_cells(data, 0.05, 7);
  CHECK(cells.size() ==
        std::size_t(std::lround(0.05 * double(data.observed_count()))));
  for (const auto& c : cells) {
    CHECK(data.mask(c.row, c.col));        // was observed
    CHECK_FALSE(masked.mask(c.row, c.col));  // now held out
    CHECK(c.truth == data.values(c.row, c.col));
  }
  // deterministic
  const auto [masked2, cells2] = hold_out_cv_cells(data, 0.05, 7);
  CHECK((masked.mask == masked2.mask).all());
}

TEST_CASE("holdout edge cases") {
  testutil::Rng rng(2);
  auto data = IncompleteMatrix<double>::complete(random_gaussian(4, 8, rng));
  const auto [masked, cells] = hold_out_cv_cells(data, 0.04, 3);  // rounds to one cell
  CHECK(cells.size() == 1);
  CHECK_THROWS_AS(hold_out_cv_cells(data, 0.5, 3), invalid_input);
  CHECK_THROWS_AS(hold_out_cv_cells(data, 1e-5, 3), invalid_input);
}

TEST_CASE("observed entries are never modified") {
  testutil::Rng rng(3);
  auto data = random_incomplete(random_gaussian(6, 50, rng), 0.2, rng);
  ImputeConfig<double> cfg;
  cfg.k = 2;
  cfg.seed = 5;
  const auto result = em_eof_impute(data, cfg);
  const auto [work, cells] = hold_out_cv_cells(data, cfg.cv_fraction, cfg.seed);
  for (int j = 0; j < data.n(); ++j)
    for (int i = 0; i < data.p(); ++i)
      if (work.mask(i, j)) CHECK(result.completed(i, j) == data.values(i, j));
}

TEST_CASE("noiseless rank-one data is recovered exactly") {
  testutil::Rng rng(4);
  const int p = 8, n = 60;
  Vector<double> u = random_gaussian(p, 1, rng);
  u.normalize();
  Matrix<double> truth(p, n);
  for (int j = 0; j < n; ++j) truth.col(j) = (1.0 + rng.uniform() * 4.0) * u;
  auto data = random_incomplete(truth, 0.25, rng);

  ImputeConfig<double> cfg;
  cfg.k = 1;
  cfg.outer_tol = 1e-22;
  cfg.max_outer_iter = 2000;
  cfg.cv_fraction = 0.02;
  cfg.seed = 9;
  const auto result = em_eof_impute(data, cfg);
  CHECK(result.cv.rmse < 1e-8);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < p; ++i)
      CHECK(std::abs(result.completed(i, j) - truth(i, j)) < 1e-7);

  // the regression variant recovers it as well
  cfg.regression_reconstruction = true;
  CHECK(em_eof_impute(data, cfg).cv.rmse < 1e-6);
}

TEST_CASE("full-basis reconstruction is the identity") {
  testutil::Rng rng(5);
  const Matrix<double> x = random_gaussian(6, 30, rng);
  const auto d = evd(scm(x));
  CHECK((eof_reconstruct(x, d.eigenvectors) - x).norm() <= 1e-10 * x.norm());
}

TEST_CASE("rmse is an order-free function of the cells") {
  std::vector<CvCell<double>> cells;
  for (int k = 0; k < 7; ++k) cells.push_back({k, k, double(k), double(k) + 0.5});
  const double base = cv_rmse(cells);
  CHECK(base == doctest::Approx(0.5));
  std::swap(cells[0], cells[5]);
  std::swap(cells[2], cells[6]);
  CHECK(cv_rmse(cells) == doctest::Approx(base));
}

TEST_CASE("complete data passes through, scoring only the held-out cells") {
  testutil::Rng rng(6);
  const Matrix<double> y = 2.0 * random_gaussian(5, 40, rng);
  const auto data = IncompleteMatrix<double>::complete(y);
  ImputeConfig<double> cfg;
  cfg.k = 3;
  cfg.seed = 11;
  const auto result = em_eof_impute(data, cfg);
  const auto [work, cells] = hold_out_cv_cells(data, cfg.cv_fraction, cfg.seed);
  for (int j = 0; j < data.n(); ++j)
    for (int i = 0; i < data.p(); ++i)
      if (work.mask(i, j)) CHECK(result.completed(i, j) == y(i, j));
  CHECK(result.cv.cells.size() == cells.size());
  CHECK(std::isfinite(double(result.cv.rmse)));
}

TEST_CASE("robust plug-in runs and reports consistent rmse") {
  const auto hay = sample_haystack<double>(10, 80, 3, 10.0, 15.0, 0.3, 21);
  const auto data = apply_pattern(hay.data, general_spec_for(10, 80, 0.3, 22));
  ImputeConfig<double> cfg;
  cfg.k = 3;
  cfg.seed = 23;
  cfg.final_estimator = ImputeConfig<double>::Final::em_tyl_r;
  const auto result = em_eof_impute(data, cfg);
  CHECK(std::isfinite(double(result.cv.rmse)));
  CHECK(result.cv.rmse == doctest::Approx(double(cv_rmse(result.cv.cells))));
}

TEST_CASE("multiple-imputation cell fill keeps observed values") {
  testutil::Rng rng(7);
  auto data = random_incomplete(random_gaussian(6, 30, rng), 0.25, rng);
  const auto completed = rmi_impute_cells(data, 5, 31);
  for (int j = 0; j < data.n(); ++j)
    for (int i = 0; i < data.p(); ++i)
      if (data.mask(i, j)) CHECK(completed(i, j) == data.values(i, j));
  CHECK((completed - rmi_impute_cells(data, 5, 31)).norm() == 0.0);
}

TEST_SUITE_END();
