#include <doctest.h>

#include "robustcov/spd_ml.hpp"
#include "test_util.hpp"

using namespace robustcov;
using testutil::random_gaussian;
using testutil::random_spd;

TEST_SUITE_BEGIN("spd_ml");

namespace {

SpdDescriptor<double> descriptor_of(const Matrix<double>& m, int label) {
  SpdDescriptor<double> d;
  d.matrix = m;
  d.label = label;
  return d;
}

}  // namespace

TEST_CASE("descriptor of a complete window with the gaussian estimator is its SCM") {
  testutil::Rng rng(1);
  const auto window = IncompleteMatrix<double>::complete(random_gaussian(5, 30, rng));
  EstimatorConfig<double> cfg;
  cfg.kind = EstimatorKind::em_scm;
  const auto d = descriptor_from_window(window, cfg);
  CHECK((d.matrix - scm(window.values)).norm() <= 1e-12 * d.matrix.norm());
}

TEST_CASE("texture rescaling multiplies by the geometric mean of the scales") {
  const auto cov = toeplitz_scatter<double>(5, 0.6);
  const auto draw = sample_msg(cov, 50, 1.0, 3);
  const auto window = IncompleteMatrix<double>::complete(draw.data);
  EstimatorConfig<double> cfg;
  cfg.kind = EstimatorKind::em_tyl;
  const auto plain = descriptor_from_window(window, cfg, false);
  const auto rescaled = descriptor_from_window(window, cfg, true);

  const auto est = run_em(window, cfg);
  const double geo = std::exp(est.textures.array().log().mean());
  CHECK((rescaled.matrix - geo * plain.matrix).norm() <= 1e-10 * rescaled.matrix.norm());
  CHECK(geo > 0.0);
}

TEST_CASE("shared scalar rescaling does not change nearest-mean decisions") {
  testutil::Rng rng(2);
  std::vector<SpdDescriptor<double>> train;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 4; ++k)
      train.push_back(descriptor_of(random_spd(4, rng) + 2.0 * c * Matrix<double>::Identity(4, 4), c));
  const auto model = mdrm_train(train);

  std::vector<SpdDescriptor<double>> scaled_train = train;
  for (auto& d : scaled_train) d.matrix *= 5.0;
  const auto scaled_model = mdrm_train(scaled_train);

  for (int k = 0; k < 10; ++k) {
    auto query = descriptor_of(random_spd(4, rng), -1);
    const int a = mdrm_predict(model, query);
    query.matrix *= 5.0;
    CHECK(mdrm_predict(scaled_model, query) == a);
  }
}

TEST_CASE("nearest-mean classifier basics") {
  testutil::Rng rng(3);
  const auto a = random_spd(4, rng);
  const auto b = random_spd(4, rng);
  const auto model = mdrm_train<double>({descriptor_of(a, 0), descriptor_of(b, 1)});
  CHECK(mdrm_predict(model, descriptor_of(a, -1)) == 0);
  CHECK(mdrm_predict(model, descriptor_of(b, -1)) == 1);

  // permuted class ids permute predictions consistently
  const auto relabeled = mdrm_train<double>({descriptor_of(a, 7), descriptor_of(b, 2)});
  CHECK(mdrm_predict(relabeled, descriptor_of(a, -1)) == 7);
  CHECK(mdrm_predict(relabeled, descriptor_of(b, -1)) == 2);

  // identical means tie-break to the smallest class id
  const auto tied = mdrm_train<double>({descriptor_of(a, 4), descriptor_of(a, 9)});
  CHECK(mdrm_predict(tied, descriptor_of(a, -1)) == 4);

  CHECK_THROWS_AS(mdrm_train<double>({descriptor_of(a, -1)}), invalid_input);
  CHECK_THROWS_AS(mdrm_train<double>({}), invalid_input);
}

TEST_CASE("well-separated synthetic classes are classified above 95 percent") {
  const int p = 8, n_w = 60;
  EstimatorConfig<double> cfg;
  cfg.kind = EstimatorKind::scm;
  const auto train = synth_class_windows<double>(p, n_w, 10, {0.2, 0.85}, {1.0, 1.0}, 41);
  std::vector<SpdDescriptor<double>> train_desc;
  for (std::size_t w = 0; w < train.windows.size(); ++w) {
    auto d = descriptor_from_window(train.windows[w], cfg, false, int(w));
    d.label = train.labels[w];
    train_desc.push_back(std::move(d));
  }
  const auto model = mdrm_train(train_desc);

  const auto test = synth_class_windows<double>(p, n_w, 100, {0.2, 0.85}, {1.0, 1.0}, 42);
  std::vector<int> predicted;
  for (const auto& w : test.windows)
    predicted.push_back(mdrm_predict(model, descriptor_from_window(w, cfg)));
  CHECK(overall_accuracy(predicted, test.labels) > 0.95);
}

TEST_CASE("nearest-mean prediction is congruence invariant") {
  testutil::Rng rng(5);
  std::vector<SpdDescriptor<double>> train;
  for (int c = 0; c < 2; ++c)
    for (int k = 0; k < 3; ++k)
      train.push_back(descriptor_of(random_spd(4, rng) + 1.5 * c * Matrix<double>::Identity(4, 4), c));
  Matrix<double> m = random_gaussian(4, 4, rng) + 3.0 * Matrix<double>::Identity(4, 4);

  auto transformed = train;
  for (auto& d : transformed)
    d.matrix = symmetrize(Matrix<double>(m.transpose() * d.matrix * m));
  const auto model = mdrm_train(train, 1e-11, 200);
  const auto model_t = mdrm_train(transformed, 1e-11, 200);

  for (int k = 0; k < 8; ++k) {
    auto q = descriptor_of(random_spd(4, rng), -1);
    const int base = mdrm_predict(model, q);
    q.matrix = symmetrize(Matrix<double>(m.transpose() * q.matrix * m));
    CHECK(mdrm_predict(model_t, q) == base);
  }
}

TEST_CASE("k-means degenerate settings") {
  testutil::Rng rng(6);
  std::vector<SpdDescriptor<double>> pts;
  for (int k = 0; k < 5; ++k) pts.push_back(descriptor_of(random_spd(3, rng), -1));

  const auto all = kmeanspp_spd(pts, 5, 17);
  CHECK(all.objective_trace.back() <= 1e-18);
  std::vector<int> seen = all.assignments;
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  CHECK(seen.size() == 5);  // every point its own cluster

  const auto one = kmeanspp_spd(pts, 1, 17);
  std::vector<Matrix<double>> mats;
  for (const auto& d : pts) mats.push_back(d.matrix);
  const auto km = karcher_mean(mats, 1e-9, 100);
  CHECK((one.centroids[0] - km.mean).norm() <= 1e-6 * km.mean.norm());
}

TEST_CASE("k-means separates tight clusters and its objective never increases") {
  testutil::Rng rng(7);
  const Matrix<double> center_a = Matrix<double>::Identity(4, 4);
  const Matrix<double> center_b = 6.0 * random_spd(4, rng);
  std::vector<SpdDescriptor<double>> pts;
  std::vector<int> truth;
  for (int k = 0; k < 8; ++k) {
    pts.push_back(descriptor_of(
        symmetrize(Matrix<double>(center_a + 0.01 * random_spd(4, rng))), -1));
    truth.push_back(0);
    pts.push_back(descriptor_of(
        symmetrize(Matrix<double>(center_b + 0.01 * random_spd(4, rng))), -1));
    truth.push_back(1);
  }
  int perfect = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto result = kmeanspp_spd(pts, 2, seed);
    for (std::size_t t = 1; t < result.objective_trace.size(); ++t)
      CHECK(result.objective_trace[t] <=
            result.objective_trace[t - 1] + 1e-9 * (1.0 + result.objective_trace[t - 1]));
    if (clustering_accuracy(result.assignments, truth, 2) == 1.0) ++perfect;
  }
  CHECK(perfect >= 19);
}

TEST_CASE("accuracy helpers match hand counts on a ten-sample fixture") {
  const std::vector<int> truth = {0, 0, 0, 1, 1, 1, 2, 2, 2, 2};
  // hits at positions 0,1,3,4,5,6,7,9; misses at 2 and 8
  const std::vector<int> predicted = {0, 0, 1, 1, 1, 1, 2, 2, 0, 2};
  CHECK(overall_accuracy(predicted, truth) == doctest::Approx(0.8));

  // clustering labels are arbitrary: swapping 0 and 2 must not change OA
  const std::vector<int> swapped = {2, 2, 1, 1, 1, 1, 0, 0, 2, 0};
  CHECK(clustering_accuracy(swapped, truth, 3) == doctest::Approx(0.8));
}

TEST_CASE("band masking helpers") {
  testutil::Rng rng(8);
  auto window = IncompleteMatrix<double>::complete(random_gaussian(6, 20, rng));
  mask_bands(window, 2, 5);
  int full_rows = 0;
  for (int i = 0; i < 6; ++i)
    if (window.mask.row(i).count() == 0) ++full_rows;
  CHECK(full_rows == 2);
  CHECK_THROWS_AS(mask_bands(window, 6, 5), invalid_input);

  auto striped = IncompleteMatrix<double>::complete(random_gaussian(6, 20, rng));
  mask_band_stripes(striped, 2, 0.3, 6);
  const long missing = long(striped.p()) * striped.n() - striped.observed_count();
  CHECK(missing == 12);  // two stripes of width 6
}

TEST_SUITE_END();
