#include "doctest.h"
#include "ncpm/metrics.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numbers>

using namespace ncpm;

namespace {

// Six square cells of `side`; the first `fragmented_cells` get a detached pixel.
LatticeState squares(int side, int fragmented_cells) {
  LatticeState s(40, 40);
  for (int k = 0; k < 6; ++k) {
    const CellId c = s.add_cell(1 + k % 2);
    const int r0 = 6 * k % 36, c0 = 1 + 6 * (k / 6);
    for (int r = 0; r < side; ++r)
      for (int q = 0; q < side; ++q) s.at(r0 + r, c0 + q) = c;
    if (k < fragmented_cells) s.at(r0, 35) = c;  // a detached pixel
  }
  return s;
}

// Fraction of variance along the best direction, by brute-force angle search.
double grid_search_fraction(const std::vector<std::array<double, 2>>& polar, const std::vector<std::array<double, 2>>& pts) {
  auto var_along = [](const std::vector<std::array<double, 2>>& p, double ux, double uy) {
    double m = 0.0;
    for (auto& q : p) m += q[0] * ux + q[1] * uy;
    m /= static_cast<double>(p.size());
    double v = 0.0;
    for (auto& q : p) v += std::pow(q[0] * ux + q[1] * uy - m, 2);
    return v / static_cast<double>(p.size());
  };
  double best = -1.0, angle = 0.0;
  for (int i = 0; i < 1800; ++i) {
    const double a = i * std::numbers::pi / 1800.0;
    const double v = var_along(polar, std::cos(a), std::sin(a));
    if (v > best) best = v, angle = a;
  }
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double along = var_along(pts, ux, uy), across = var_along(pts, -uy, ux);
  return along / (along + across);
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("training data lies within its own volume bounds") {
    Rng rng(91);
    std::vector<LatticeState> data;
    for (int i = 0; i < 5; ++i) data.push_back(oracle::blocky_state(12, 12, 4, 2, rng));
    auto bounds = VolumeBounds::measure(data);
    for (const auto& s : data) {
      bool all_present = true;
      auto v = cell_volumes(s);
      for (CellId c = 1; c < s.num_cells(); ++c) all_present = all_present && v[c] > 0;
      if (all_present) CHECK(volumes_within(s, bounds));
    }
  }

  TEST_CASE("a vanished cell fails the volume check") {
    auto s = squares(4, 0);
    std::vector<LatticeState> data{s};
    auto bounds = VolumeBounds::measure(data);
    CHECK(volumes_within(s, bounds));
    LatticeState t = s;
    t.add_cell(1);
    CHECK_FALSE(volumes_within(t, bounds));
    std::vector<LatticeState> both{s, t};
    CHECK(biological_indicators(both, bounds, Neighborhood()).p_volume == doctest::Approx(0.5));
  }

  TEST_CASE("fragmentation threshold counts states with too many broken cells") {
    std::vector<LatticeState> states{squares(4, 0), squares(4, 4), squares(4, 3), squares(4, 5)};
    for (const auto& s : states) CHECK(fragment_count(s, Neighborhood()) >= 0);
    CHECK(oracle::components_by_propagation(states[1], 1, Neighborhood()) == 2);
    auto bounds = VolumeBounds::measure(std::span<const LatticeState>(states).first(1));
    auto bio = biological_indicators(states, bounds, Neighborhood(), 3);
    CHECK(bio.p_unfragmented == doctest::Approx(0.5));
  }

  TEST_CASE("classifier score edge values and direct evaluation") {
    std::vector<Eigen::VectorXd> uniform(5, Eigen::VectorXd::Constant(4, 0.25));
    CHECK(classifier_score(uniform) == doctest::Approx(1.0));
    std::vector<Eigen::VectorXd> onehot;
    for (int k = 0; k < 10; ++k) onehot.push_back(Eigen::VectorXd::Unit(10, k));
    CHECK(classifier_score(onehot) == doctest::Approx(10.0));

    Rng rng(92);
    std::vector<Eigen::VectorXd> mixed;
    for (int i = 0; i < 7; ++i) {
      Eigen::VectorXd p(3);
      for (int k = 0; k < 3; ++k) p[k] = rng.uniform() + 0.01;
      mixed.push_back(p / p.sum());
    }
    double kl = 0.0;
    for (const auto& p : mixed)
      for (int k = 0; k < 3; ++k) {
        double marginal = 0.0;
        for (const auto& q : mixed) marginal += q[k] / 7.0;
        kl += p[k] * std::log(p[k] / marginal) / 7.0;
      }
    CHECK(classifier_score(mixed) == doctest::Approx(std::exp(kl)).epsilon(1e-12));
    std::vector<Eigen::VectorXd> bad{Eigen::VectorXd::Constant(2, 0.7)};
    CHECK_THROWS_AS(classifier_score(bad), MetricError);
  }

  TEST_CASE("axial fractions on lines and discs") {
    LatticeState lines(30, 30);
    const CellId polar = lines.add_cell(2), other = lines.add_cell(1);
    for (int c = 2; c < 28; ++c) lines.at(5, c) = polar;
    for (int r = 8; r < 28; ++r) lines.at(r, 15) = other;
    auto res = axial_alignment(lines, 2);
    REQUIRE_FALSE(res.degenerate);
    CHECK(res.per_type[2].frac_axis == doctest::Approx(1.0));
    CHECK(res.per_type[1].frac_axis == doctest::Approx(0.0).scale(1.0));
    CHECK(std::abs(res.axis.x()) == doctest::Approx(1.0));

    LatticeState disc(61, 61);
    const CellId d = disc.add_cell(2);
    int pixels = 0;
    for (int r = 0; r < 61; ++r)
      for (int c = 0; c < 61; ++c)
        if ((r - 30) * (r - 30) + (c - 30) * (c - 30) <= 400) disc.at(r, c) = d, ++pixels;
    REQUIRE(pixels >= 1000);
    CHECK(axial_alignment(disc, 2).per_type[2].frac_axis == doctest::Approx(0.5).epsilon(0.1));

    LatticeState lone(5, 5);
    lone.at(2, 2) = lone.add_cell(2);
    CHECK(axial_alignment(lone, 2).degenerate);
  }

  TEST_CASE("axial fractions agree with a rotation grid search") {
    Rng rng(93);
    for (int trial = 0; trial < 10; ++trial) {
      auto s = oracle::blocky_state(20, 20, 6, 2, rng);
      auto res = axial_alignment(s, 2);
      if (res.degenerate) continue;
      std::vector<std::array<double, 2>> polar, ones;
      for (int i = 0; i < s.size(); ++i) {
        const std::array<double, 2> xy{static_cast<double>(s.col_of(i)), static_cast<double>(s.row_of(i))};
        if (s.type_at(i) == 2) polar.push_back(xy);
        if (s.type_at(i) == 1) ones.push_back(xy);
      }
      CHECK(res.per_type[2].frac_axis == doctest::Approx(grid_search_fraction(polar, polar)).epsilon(1e-3));
      // The axis is only well defined when the polar spread is anisotropic.
      if (ones.size() > 1 && res.per_type[2].frac_axis > 0.55) CHECK(std::abs(res.per_type[1].frac_axis - grid_search_fraction(polar, ones)) <= 1e-3);
    }
  }

  TEST_CASE("axial RMSE is zero against itself") {
    Rng rng(94);
    std::vector<LatticeState> a;
    for (int i = 0; i < 4; ++i) a.push_back(oracle::blocky_state(16, 16, 4, 2, rng));
    CHECK(axial_rmse(a, a, 2) == 0.0);
  }

  TEST_CASE("parameter RMSE in both temperature modes") {
    Eigen::VectorXd truth(4);
    truth << 1.0, -2.0, 0.5, 3.0;
    CHECK(param_rmse(truth, truth, TemperatureMode::T1) == 0.0);
    CHECK(param_rmse(truth, truth, TemperatureMode::TStar) == doctest::Approx(0.0).scale(1.0));
    CHECK(param_rmse(truth / 2, truth, TemperatureMode::TStar) == doctest::Approx(0.0).scale(1.0));
    CHECK(param_rmse(truth / 2, truth, TemperatureMode::T1) == doctest::Approx(truth.norm() * 0.5 / 2.0));
    Eigen::VectorXd learned(4);
    learned << 0.3, 0.1, -0.7, 2.0;
    const double t = learned.dot(truth) / learned.dot(learned);
    CHECK(param_rmse(learned, truth, TemperatureMode::TStar) == doctest::Approx((t * learned - truth).norm() / 2.0));
  }

  TEST_CASE("nearest-centroid classifier separates distinct layouts") {
    std::vector<LatticeState> states;
    std::vector<int> labels;
    for (int k = 0; k < 2; ++k)
      for (int rep = 0; rep < 3; ++rep) {
        LatticeState s(14, 14);
        const CellId c = s.add_cell(2);
        for (int r = 0; r < 14; ++r)
          for (int q = 0; q < 7; ++q) s.at(r, k == 0 ? q : 13 - q) = c;
        s.at(rep, 7) = c;
        states.push_back(s);
        labels.push_back(k);
      }
    NearestCentroidClassifier clf(2, 7, 20.0);
    clf.fit(states, labels, 2);
    CHECK(clf.num_classes() == 2);
    auto p0 = clf.predict_proba(states[0]), p1 = clf.predict_proba(states[4]);
    CHECK(p0.sum() == doctest::Approx(1.0));
    CHECK(p0[0] > 0.9);
    CHECK(p1[1] > 0.9);
  }
}
