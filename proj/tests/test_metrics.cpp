#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "normlab/metrics.hpp"

using namespace normlab;

// ---- brute-force reference, no shared code with src/metrics.cpp ------------
// Plain double loops over samples and classes, written from the metric
// definitions directly.
namespace oracle {

constexpr double kR2D = 180.0 / std::numbers::pi;

std::vector<std::vector<double>> centers(const std::vector<std::vector<double>>& x,
                                         const std::vector<int64_t>& y,
                                         int64_t C) {
  size_t d = x[0].size();
  std::vector<std::vector<double>> c(static_cast<size_t>(C),
                                     std::vector<double>(d, 0.0));
  std::vector<int64_t> n(static_cast<size_t>(C), 0);
  for (size_t i = 0; i < x.size(); ++i) {
    double norm = 0.0;
    for (double v : x[i]) norm += v * v;
    norm = std::sqrt(norm);
    for (size_t j = 0; j < d; ++j)
      c[static_cast<size_t>(y[i])][j] += x[i][j] / norm;
    ++n[static_cast<size_t>(y[i])];
  }
  for (int64_t k = 0; k < C; ++k)
    for (size_t j = 0; j < d; ++j)
      c[static_cast<size_t>(k)][j] /= static_cast<double>(n[static_cast<size_t>(k)]);
  return c;
}

double angle(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  double cs = dot / (std::sqrt(na) * std::sqrt(nb));
  if (cs > 1.0) cs = 1.0;
  if (cs < -1.0) cs = -1.0;
  return std::acos(cs) * kR2D;
}

double intra(const std::vector<std::vector<double>>& x,
             const std::vector<int64_t>& y,
             const std::vector<std::vector<double>>& c) {
  double total = 0.0;
  for (size_t i = 0; i < x.size(); ++i)
    total += angle(x[i], c[static_cast<size_t>(y[i])]);
  return total / static_cast<double>(x.size());
}

double inter(const std::vector<std::vector<double>>& c) {
  double total = 0.0;
  for (size_t i = 0; i < c.size(); ++i) {
    double best = 180.0;
    for (size_t j = 0; j < c.size(); ++j)
      if (j != i) best = std::min(best, angle(c[i], c[j]));
    total += best;
  }
  return total / static_cast<double>(c.size());
}

}  // namespace oracle

namespace {

LabeledFeatures make_lf(const std::vector<std::vector<double>>& rows,
                        const std::vector<int64_t>& labels, int64_t C) {
  return LabeledFeatures{Tensor::row_matrix(rows), labels, C};
}

}  // namespace

TEST_CASE("class centers are means of unit vectors") {
  {
    ClassCenters c = compute_centers(make_lf({{3.0, 4.0}}, {0}, 1));
    CHECK(c.centers.at2(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(c.centers.at2(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  }
  {
    ClassCenters c = compute_centers(make_lf({{1.0, 0.0}, {0.0, 1.0}}, {0, 0}, 1));
    CHECK(c.centers.at2(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(c.centers.at2(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }
  {  // antipodal samples collapse the center; flagged, then an error downstream
    LabeledFeatures lf = make_lf({{2.0, 0.0}, {-2.0, 0.0}}, {0, 0}, 1);
    ClassCenters c = compute_centers(lf);
    CHECK(c.degenerate() == std::vector<int64_t>{0});
    CHECK_THROWS_AS(intra_angle(lf, c), std::invalid_argument);
  }
}

TEST_CASE("intra-angle examples") {
  {  // samples exactly on their center rays
    LabeledFeatures lf =
        make_lf({{2.0, 0.0}, {5.0, 0.0}, {0.0, 1.0}}, {0, 0, 1}, 2);
    ClassCenters c = compute_centers(lf);
    CHECK(intra_angle(lf, c) == doctest::Approx(0.0).epsilon(1e-12));
  }
  {  // two orthogonal samples in one class sit 45 degrees from their center
    LabeledFeatures lf = make_lf({{1.0, 0.0}, {0.0, 1.0}}, {0, 0}, 1);
    ClassCenters c = compute_centers(lf);
    CHECK(intra_angle(lf, c) == doctest::Approx(45.0).epsilon(1e-12));
  }
}

TEST_CASE("inter-angle examples") {
  {
    ClassCenters c{Tensor::row_matrix({{1.0, 0.0}, {0.0, 1.0}})};
    CHECK(inter_angle(c) == doctest::Approx(90.0).epsilon(1e-13));
  }
  {  // three symmetric centers in the plane
    double a0 = 0.0, a1 = 2.0 * std::numbers::pi / 3.0,
           a2 = 4.0 * std::numbers::pi / 3.0;
    ClassCenters c{Tensor::row_matrix({{std::cos(a0), std::sin(a0)},
                                       {std::cos(a1), std::sin(a1)},
                                       {std::cos(a2), std::sin(a2)}})};
    CHECK(inter_angle(c) == doctest::Approx(120.0).epsilon(1e-12));
  }
  {  // random centers against the double-loop reference
    Rng rng(77);
    Tensor centers = randn(rng, {5, 3});
    std::vector<std::vector<double>> rows(5, std::vector<double>(3));
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t j = 0; j < 3; ++j) rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = centers.at2(i, j);
    CHECK(std::abs(inter_angle(ClassCenters{centers}) - oracle::inter(rows)) <=
          1e-9);
  }
}

TEST_CASE("iir arithmetic, including the published ratio pairs") {
  CHECK(std::abs(iir(24.76, 34.09) - 0.726) <= 0.001);
  CHECK(std::abs(iir(13.32, 58.81) - 0.226) <= 0.001);
  CHECK(iir(17.3, 17.3) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(iir(10.0, 0.0), std::invalid_argument);
}

TEST_CASE("metrics match the brute-force reference on random instances") {
  Rng rng(101);
  for (int rep = 0; rep < 100; ++rep) {
    int64_t C = 2 + rng.below(5);              // <= 6
    int64_t d = 2 + rng.below(7);              // <= 8
    int64_t N = 2 * C + rng.below(30 - 2 * C + 1);  // <= 30
    std::vector<std::vector<double>> rows;
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < N; ++i) {
      std::vector<double> r(static_cast<size_t>(d));
      for (double& v : r) v = rng.normal();
      rows.push_back(std::move(r));
      // two guaranteed samples per class: a singleton class sits exactly on
      // its center, where acos conditioning blows up any fp comparison
      labels.push_back(i < 2 * C ? i / 2 : rng.below(C));
    }
    LabeledFeatures lf = make_lf(rows, labels, C);
    ClassCenters c = compute_centers(lf);
    if (!c.degenerate().empty()) continue;

    auto oc = oracle::centers(rows, labels, C);
    CHECK(std::abs(intra_angle(lf, c) - oracle::intra(rows, labels, oc)) <= 1e-9);
    CHECK(std::abs(inter_angle(c) - oracle::inter(oc)) <= 1e-9);
  }
}

TEST_CASE("angle metrics ignore per-sample positive rescaling") {
  Rng rng(103);
  std::vector<std::vector<double>> rows;
  std::vector<int64_t> labels;
  for (int64_t i = 0; i < 20; ++i) {
    rows.push_back({rng.normal(), rng.normal(), rng.normal()});
    labels.push_back(i % 4);
  }
  LabeledFeatures lf = make_lf(rows, labels, 4);
  ClassCenters c = compute_centers(lf);
  double i0 = intra_angle(lf, c), e0 = inter_angle(c);

  auto scaled = rows;
  for (auto& r : scaled) {
    double f = rng.uniform(0.01, 100.0);
    for (double& v : r) v *= f;
  }
  LabeledFeatures lf2 = make_lf(scaled, labels, 4);
  ClassCenters c2 = compute_centers(lf2);
  CHECK(std::abs(intra_angle(lf2, c2) - i0) <= 1e-10);
  CHECK(std::abs(inter_angle(c2) - e0) <= 1e-10);
  CHECK(i0 >= 0.0);
}

TEST_CASE("orthogonal centers give exactly 90 degrees") {
  ClassCenters c{Tensor::row_matrix({{1.0, 0.0, 0.0, 0.0},
                                     {0.0, 1.0, 0.0, 0.0},
                                     {0.0, 0.0, 1.0, 0.0}})};
  CHECK(inter_angle(c) == 90.0);
}

TEST_CASE("metric error paths") {
  // class 1 exists in the range but has no samples
  LabeledFeatures lf = make_lf({{1.0, 0.0}, {0.0, 1.0}}, {0, 2}, 3);
  try {
    compute_centers(lf);
    FAIL("expected missing-class error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }

  ClassCenters single{Tensor::row_matrix({{1.0, 0.0}})};
  CHECK_THROWS_AS(inter_angle(single), std::invalid_argument);

  // zero-norm feature rows are a caller bug
  CHECK_THROWS_AS(make_lf({{0.0, 0.0}}, {0}, 1).validate(), std::invalid_argument);

  // report with test split
  LabeledFeatures train = make_lf({{1.0, 0.1}, {1.0, -0.1}, {0.1, 1.0}, {-0.1, 1.0}},
                                  {0, 0, 1, 1}, 2);
  LabeledFeatures test = make_lf({{1.0, 0.0}, {0.0, 1.0}}, {0, 1}, 2);
  AngleReport rep = angle_report(train, &test);
  CHECK(rep.intra_test.has_value());
  CHECK(rep.iir_test.has_value());
  CHECK(*rep.iir_test == doctest::Approx(*rep.intra_test / rep.inter));
}
