#include <doctest.h>

#include <filesystem>

#include "robustcov/io.hpp"
#include "robustcov/missing.hpp"
#include "test_util.hpp"

using namespace robustcov;

TEST_SUITE_BEGIN("missing");

namespace {

IncompleteMatrix<double> three_row_fixture(std::initializer_list<bool> col_mask) {
  IncompleteMatrix<double> data;
  data.values = Matrix<double>::Constant(3, 1, 1.0);
  data.values(0, 0) = 10;
  data.values(1, 0) = 20;
  data.values(2, 0) = 30;
  data.mask = Mask::Constant(3, 1, true);
  int i = 0;
  for (const bool b : col_mask) data.mask(i++, 0) = b;
  return data;
}

}  // namespace

TEST_CASE("plans: fully observed and split columns") {
  const auto all = build_plans(three_row_fixture({true, true, true}));
  CHECK(all[0].obs_idx == std::vector<int>{0, 1, 2});
  CHECK(all[0].mis_idx.empty());
  CHECK(all[0].is_complete());

  const auto split = build_plans(three_row_fixture({true, false, true}));
  CHECK(split[0].obs_idx == std::vector<int>{0, 2});
  CHECK(split[0].mis_idx == std::vector<int>{1});
}

TEST_CASE("plan application round-trips and preserves spectra") {
  testutil::Rng rng(21);
  const auto data = testutil::random_incomplete(testutil::random_gaussian(7, 5, rng), 0.35, rng);
  const auto plans = build_plans(data);
  const Matrix<double> sigma = testutil::random_spd(7, rng);
  for (const auto& plan : plans) {
    Vector<double> y = testutil::random_gaussian(7, 1, rng);
    CHECK((plan.unapply_vec(plan.apply_vec(y)) - y).norm() == 0.0);
    const Matrix<double> st = plan.permute_sym(sigma);
    CHECK((plan.unpermute_sym(st) - sigma).norm() == 0.0);
    const auto ev_orig = evd(sigma).eigenvalues;
    const auto ev_perm = evd(st).eigenvalues;
    CHECK((ev_orig - ev_perm).norm() <= 1e-10 * ev_orig.norm());
  }
}

TEST_CASE("a sample with no observed entries is rejected") {
  CHECK_THROWS_AS(build_plans(three_row_fixture({false, false, false})), invalid_input);
}

TEST_CASE("monotone pattern: one exact block") {
  testutil::Rng rng(4);
  const Matrix<double> full = testutil::random_gaussian(15, 63, rng);
  PatternSpec spec;
  spec.kind = PatternKind::monotone;
  spec.block_rows = 7;
  spec.block_cols = 20;
  const auto data = apply_pattern(full, spec);
  CHECK(double(data.p()) * data.n() - data.observed_count() == 140);
  // the missing region is exactly rows [0,7) x cols [0,20)
  for (int j = 0; j < 63; ++j)
    for (int i = 0; i < 15; ++i)
      CHECK(data.mask(i, j) == !(i < 7 && j < 20));
}

TEST_CASE("zero target ratio leaves everything observed") {
  testutil::Rng rng(4);
  const Matrix<double> full = testutil::random_gaussian(6, 9, rng);
  PatternSpec spec;
  spec.kind = PatternKind::random_cells;
  spec.target_ratio = 0.0;
  CHECK(apply_pattern(full, spec).mask.all());
}

TEST_CASE("random pattern hits the target ratio within two points") {
  testutil::Rng rng(8);
  const Matrix<double> full = testutil::random_gaussian(15, 1000, rng);
  PatternSpec spec;
  spec.kind = PatternKind::random_cells;
  spec.target_ratio = 0.2;
  spec.seed = 99;
  const auto data = apply_pattern(full, spec);
  CHECK(data.missing_ratio() >= 0.18);
  CHECK(data.missing_ratio() <= 0.22);
}

TEST_CASE("general pattern realizes its ratio and keeps columns alive") {
  testutil::Rng rng(8);
  const Matrix<double> full = testutil::random_gaussian(15, 109, rng);
  const auto spec = general_spec_for(15, 109, 0.22, 7);
  const auto data = apply_pattern(full, spec);
  CHECK(std::abs(data.missing_ratio() - 0.22) <= kPatternRatioTol);
  for (int j = 0; j < data.n(); ++j) CHECK(data.column_observed_count(j) >= 1);
}

TEST_CASE("pattern generation is deterministic under a fixed seed") {
  testutil::Rng rng(13);
  const Matrix<double> full = testutil::random_gaussian(10, 80, rng);
  const auto spec = general_spec_for(10, 80, 0.3, 123);
  const auto a = apply_pattern(full, spec);
  const auto b = apply_pattern(full, spec);
  CHECK((a.mask == b.mask).all());
}

TEST_CASE("infeasible monotone block is a configuration error") {
  testutil::Rng rng(2);
  const Matrix<double> full = testutil::random_gaussian(5, 10, rng);
  PatternSpec spec;
  spec.kind = PatternKind::monotone;
  spec.block_rows = 5;  // would wipe whole columns
  spec.block_cols = 3;
  CHECK_THROWS_AS(apply_pattern(full, spec), config_error);
}

TEST_CASE("sample set split") {
  testutil::Rng rng(31);
  const Matrix<double> full = testutil::random_gaussian(4, 12, rng);
  const auto complete = IncompleteMatrix<double>::complete(full);
  const auto [all_obs, none] = split_sample_sets(complete);
  CHECK(all_obs.size() == 12);
  CHECK(none.empty());

  IncompleteMatrix<double> holed = complete;
  for (int j = 0; j < 12; ++j) holed.mask(j % 4, j) = false;
  const auto [empty_set, all_mis] = split_sample_sets(holed);
  CHECK(empty_set.empty());
  CHECK(all_mis.size() == 12);

  IncompleteMatrix<double> mixed = complete;
  mixed.mask(1, 2) = false;
  mixed.mask(3, 7) = false;
  const auto [obs, mis] = split_sample_sets(mixed);
  CHECK(obs.size() + mis.size() == 12);
  CHECK(mis == std::vector<int>{2, 7});
}

TEST_CASE("CSV with NA cells round-trips values and mask") {
  testutil::Rng rng(55);
  auto data = testutil::random_incomplete(testutil::random_gaussian(6, 11, rng), 0.3, rng);
  data.values(0, 0) = 1.0 / 3.0;  // needs full precision to survive
  const auto path = std::filesystem::temp_directory_path() / "robustcov_io_test.csv";
  write_incomplete_csv(path, data);
  const auto back = read_incomplete_csv<double>(path);
  CHECK((back.mask == data.mask).all());
  for (int j = 0; j < data.n(); ++j)
    for (int i = 0; i < data.p(); ++i)
      if (data.mask(i, j)) CHECK(back.values(i, j) == data.values(i, j));
  std::filesystem::remove(path);
}

TEST_SUITE_END();
