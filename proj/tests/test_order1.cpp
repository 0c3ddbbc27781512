#include <catch2/catch_amalgamated.hpp>

#include "lhcalib/order1.hpp"
#include "lhcalib/synthetic.hpp"
#include "test_helpers.hpp"

using namespace lhcalib;
using Catch::Matchers::WithinAbs;
using lhtest::dataset;
using lhtest::record;

TEST_CASE("expected squared loss, worked examples") {
  // equals the mean of the two per-label plugin losses
  auto d1 = dataset({record("a", {1, 1}, {0.5, 0.5})});
  CHECK_THAT(expected_squared_loss_unbiased(d1, {1.0}), WithinAbs(0.5, 1e-12));

  auto d2 = dataset({record("a", {2, 0}, {1.0, 0.0})});
  CHECK_THAT(expected_squared_loss_unbiased(d2, {1.0}), WithinAbs(0.0, 1e-12));

  auto d3 = dataset({record("a", {2, 0}, {0.6, 0.4})});
  CHECK_THAT(expected_squared_loss_unbiased(d3, {1.0}), WithinAbs(0.32, 1e-12));
}

TEST_CASE("expected squared loss rejects all-zero weights") {
  auto d = dataset({record("a", {1, 1}, {0.5, 0.5})});
  CHECK_THROWS_AS(expected_squared_loss_unbiased(d, {0.0}), std::invalid_argument);
}

TEST_CASE("expected squared loss equals probability score for single labels") {
  std::mt19937_64 g(3);
  std::vector<InstanceRecord> records;
  for (int i = 0; i < 50; ++i) {
    double q = rng::uniform01(g);
    std::vector<std::int64_t> counts = {0, 0};
    counts[rng::uniform01(g) < 0.5 ? 0 : 1] = 1;
    records.push_back(record("r" + std::to_string(i), counts, {q, 1.0 - q}));
  }
  auto d = dataset(std::move(records));
  detail::KahanSum ps;
  for (const auto& r : d.records)
    for (int k = 0; k < 2; ++k) {
      double y = static_cast<double>(r.histogram.counts[k]);
      ps.add((y - r.prediction[k]) * (y - r.prediction[k]));
    }
  double expected = ps.value() / d.size();
  CHECK_THAT(expected_squared_loss_unbiased(d, make_weights(d, WeightPolicy::Uniform)),
             WithinAbs(expected, 1e-12));
}

TEST_CASE("epistemic loss plugin, worked examples") {
  CHECK_THAT(epistemic_loss_plugin(dataset({record("a", {2, 0}, {1.0, 0.0})})),
             WithinAbs(0.0, 1e-12));
  CHECK_THAT(epistemic_loss_plugin(dataset({record("a", {1, 1}, {0.5, 0.5})})),
             WithinAbs(0.0, 1e-12));
  CHECK_THAT(epistemic_loss_plugin(dataset({record("a", {1, 1}, {1.0, 0.0})})),
             WithinAbs(0.5, 1e-12));
}

TEST_CASE("epistemic loss unbiased, worked examples") {
  CHECK_THAT(epistemic_loss_unbiased(dataset({record("a", {1, 1}, {0.5, 0.5})})),
             WithinAbs(-0.5, 1e-12));
  CHECK_THAT(epistemic_loss_unbiased(dataset({record("a", {2, 0}, {1.0, 0.0})})),
             WithinAbs(0.0, 1e-12));
  CHECK_THROWS_AS(epistemic_loss_unbiased(dataset({record("a", {1, 0}, {1.0, 0.0})})),
                  std::invalid_argument);
}

TEST_CASE("epistemic loss unbiased is near zero for the perfect predictor") {
  // true EL is 0 by construction
  double mean = 0.0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s)
    mean += epistemic_loss_unbiased(gen_uniform_binary(10000, 2, 100 + s).data);
  mean /= seeds;
  CHECK(std::abs(mean) < 0.01);
}

TEST_CASE("calibration loss, single-bin worked example") {
  auto d = dataset({record("a", {0, 2}, {0.5, 0.5}), record("b", {2, 0}, {0.5, 0.5})});
  auto scheme = BinningScheme::equal_width(1);
  auto plugin = calibration_loss(d, scheme, EstimatorMode::Plugin);
  auto debiased = calibration_loss(d, scheme, EstimatorMode::Debiased);
  for (int k = 0; k < 2; ++k) {
    CHECK_THAT(plugin[k].total, WithinAbs(0.0, 1e-12));
    CHECK_THAT(debiased[k].total, WithinAbs(-0.25, 1e-12));
  }
}

TEST_CASE("calibration loss vanishes with zero deviation and zero variance") {
  auto d = dataset({record("a", {7, 3}, {0.7, 0.3}), record("b", {7, 3}, {0.7, 0.3})});
  auto scheme = BinningScheme::equal_width(1);
  CHECK_THAT(class_total(calibration_loss(d, scheme, EstimatorMode::Plugin)),
             WithinAbs(0.0, 1e-12));
  CHECK_THAT(class_total(calibration_loss(d, scheme, EstimatorMode::Debiased)),
             WithinAbs(0.0, 1e-12));
}

TEST_CASE("debiased calibration loss skips singleton bins") {
  auto d = dataset({record("a", {0, 2}, {0.1, 0.9}), record("b", {2, 0}, {0.9, 0.1})});
  auto scheme = BinningScheme::equal_width(2);
  auto debiased = calibration_loss(d, scheme, EstimatorMode::Debiased);
  for (int k = 0; k < 2; ++k) {
    CHECK_THAT(debiased[k].total, WithinAbs(0.0, 1e-12));
    for (const auto& cell : debiased[k].bins)
      if (cell.count == 1) CHECK(cell.undersized);
  }
}

TEST_CASE("dispersion loss, worked examples") {
  auto scheme = BinningScheme::equal_width(1);

  auto matched = dataset({record("a", {1, 3}, {0.25, 0.75}), record("b", {3, 1}, {0.75, 0.25})});
  CHECK_THAT(class_total(dispersion_loss(matched, scheme, EstimatorMode::Plugin)),
             WithinAbs(0.0, 1e-12));

  auto d = dataset({record("a", {0, 2}, {0.5, 0.5}), record("b", {2, 0}, {0.5, 0.5})});
  auto plugin = dispersion_loss(d, scheme, EstimatorMode::Plugin);
  for (int k = 0; k < 2; ++k) CHECK_THAT(plugin[k].total, WithinAbs(0.25, 1e-12));
}

TEST_CASE("decomposition identity holds per mode") {
  auto check_identity = [](const EvalDataset& d, const BinningScheme& scheme) {
    double el_p = epistemic_loss_plugin(d);
    double cl_p = class_total(calibration_loss(d, scheme, EstimatorMode::Plugin));
    double dl_p = class_total(dispersion_loss(d, scheme, EstimatorMode::Plugin));
    CHECK_THAT(el_p, WithinAbs(cl_p + dl_p, 1e-9));

    double el_u = epistemic_loss_unbiased(d);
    double cl_d = class_total(calibration_loss(d, scheme, EstimatorMode::Debiased));
    double dl_d = class_total(dispersion_loss(d, scheme, EstimatorMode::Debiased));
    CHECK_THAT(el_u, WithinAbs(cl_d + dl_d, 1e-9));
  };
  check_identity(gen_uniform_binary(2000, 2, 42).data, BinningScheme::equal_width(15));
  check_identity(gen_dirichlet_multiclass(2000, 3, 4, 0.7, 43).data,
                 BinningScheme::equal_width(15));
}

TEST_CASE("plugin CL and DL are non-negative") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto d = gen_dirichlet_multiclass(300, 3, 3, 1.0, seed).data;
    auto scheme = BinningScheme::equal_width(10);
    CHECK(class_total(calibration_loss(d, scheme, EstimatorMode::Plugin)) >= 0.0);
    CHECK(class_total(dispersion_loss(d, scheme, EstimatorMode::Plugin)) >= 0.0);
  }
}

TEST_CASE("calibration loss is invariant under record permutation") {
  auto d = gen_uniform_binary(500, 3, 7).data;
  auto scheme = BinningScheme::equal_width(15);
  double before = class_total(calibration_loss(d, scheme, EstimatorMode::Debiased));
  std::mt19937_64 g(1);
  std::shuffle(d.records.begin(), d.records.end(), g);
  double after = class_total(calibration_loss(d, scheme, EstimatorMode::Debiased));
  CHECK_THAT(before, WithinAbs(after, 1e-9));
}

TEST_CASE("accuracy tie-breaking by lowest class index") {
  CHECK_THAT(accuracy(dataset({record("a", {3, 0}, {0.9, 0.1})})), WithinAbs(1.0, 1e-12));
  // prediction tie -> class 0; majority is class 1
  CHECK_THAT(accuracy(dataset({record("a", {0, 2}, {0.5, 0.5})})), WithinAbs(0.0, 1e-12));
  // histogram tie -> class 0; prediction argmax is class 1
  CHECK_THAT(accuracy(dataset({record("a", {1, 1}, {0.4, 0.6})})), WithinAbs(0.0, 1e-12));
}

TEST_CASE("plugin EL bias matches 1/(3n) on uniform binary truth") {
  for (int n : {2, 5}) {
    std::vector<double> values;
    for (std::uint64_t s = 0; s < 10; ++s)
      values.push_back(epistemic_loss_plugin(gen_uniform_binary(10000, n, 900 + s).data));
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= values.size();
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    double se = std::sqrt(var / (values.size() - 1) / values.size());
    CHECK(std::abs(mean - 1.0 / (3.0 * n)) < 3.0 * se + 1e-6);
  }
}

TEST_CASE("unbiasedness of L_sq and EL estimators against oracle truth") {
  // fixed imperfect predictor over replicate label draws
  const int reps = 200;
  auto base = gen_dirichlet_multiclass(200, 3, 3, 1.0, 5);
  auto distorted = distort_predictor(base.data, 1.5);
  auto scheme = BinningScheme::equal_width(15);
  std::vector<GroundTruthRecord> truth = base.truth;
  auto oracle = true_metrics_oracle(distorted, truth, scheme);

  std::mt19937_64 g(77);
  std::vector<double> el_vals, lsq_vals;
  for (int rep = 0; rep < reps; ++rep) {
    EvalDataset d = distorted;
    for (size_t i = 0; i < d.records.size(); ++i)
      d.records[i].histogram = detail::draw_histogram(g, truth[i].q, 3);
    el_vals.push_back(epistemic_loss_unbiased(d));
    lsq_vals.push_back(expected_squared_loss_unbiased(d, make_weights(d, WeightPolicy::Uniform)));
  }
  auto mean_se = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= v.size();
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    return std::pair{m, std::sqrt(var / (v.size() - 1) / v.size())};
  };
  auto [el_m, el_se] = mean_se(el_vals);
  auto [lsq_m, lsq_se] = mean_se(lsq_vals);
  CHECK(std::abs(el_m - oracle.true_el) < 3.0 * el_se);
  CHECK(std::abs(lsq_m - oracle.true_l_sq) < 3.0 * lsq_se);
}
