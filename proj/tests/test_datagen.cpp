#include "doctest.h"
#include "ncpm/datagen.hpp"
#include "oracles.hpp"

#include <cmath>
#include <set>
#include <sstream>

using namespace ncpm;

namespace {

ScenarioSpec tiny_spec() {
  ScenarioSpec spec = ScenarioSpec::cellsort_a();
  spec.width = spec.height = 20;
  spec.type_counts = {3, 2};
  spec.radius = 5;
  spec.params.volume.target = 12.0;
  spec.sweeps = 20;
  return spec;
}

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("scenario tables are symmetric with zero medium self-contact") {
    for (const auto& spec : {ScenarioSpec::cellsort_a(), ScenarioSpec::cellsort_b(), ScenarioSpec::cellular_mnist(),
                             ScenarioSpec::bipolar()}) {
      CHECK(spec.params.contact.isApprox(spec.params.contact.transpose()));
      CHECK(spec.params.contact(0, 0) == 0.0);
      CHECK_NOTHROW(spec.validate());
    }
    auto a = ScenarioSpec::cellsort_a();
    CHECK(a.params.contact(1, 2) == doctest::Approx(0.2));
    CHECK(a.params.contact(2, 2) == doctest::Approx(0.266667));
    CHECK(a.total_cells() == 50);
  }

  TEST_CASE("scatter places single-pixel cells inside the circle, type by type") {
    auto spec = tiny_spec();
    Rng rng(81);
    auto s = init_scatter(spec, rng);
    CHECK_NOTHROW(s.validate());
    REQUIRE(s.num_cells() == 6);
    auto v = cell_volumes(s);
    const double cr = (spec.height - 1) / 2.0, cc = (spec.width - 1) / 2.0;
    for (int i = 0; i < s.size(); ++i)
      if (s[i] != kMedium) {
        CHECK(v[s[i]] == 1);
        const double dr = s.row_of(i) - cr, dc = s.col_of(i) - cc;
        CHECK(dr * dr + dc * dc <= spec.radius * spec.radius);
      }
    CHECK(s.type_of(1) == 1);
    CHECK(s.type_of(3) == 1);
    CHECK(s.type_of(4) == 2);
    CHECK(s.type_of(5) == 2);
  }

  TEST_CASE("too many cells for the circle is a configuration error") {
    auto spec = tiny_spec();
    spec.radius = 1;
    Rng rng(1);
    CHECK_THROWS_AS(init_scatter(spec, rng), ConfigError);
    spec.radius = 11;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }

  TEST_CASE("generation is reproducible, sample-indexed and keeps every cell") {
    auto spec = tiny_spec();
    Rng rng(82);
    auto a = generate_cellsort(spec, 3, rng);
    auto b = generate_cellsort(spec, 1, rng);
    CHECK(a[0] == b[0]);
    CHECK_FALSE(a[0] == a[1]);
    for (const auto& s : a) {
      auto v = cell_volumes(s);
      for (CellId c = 1; c < s.num_cells(); ++c) CHECK(v[c] > 0);
    }
  }

  TEST_CASE("IDX files round-trip and malformed input is rejected") {
    ImageSet set{2, 3, {{1, 2, 3, 4, 5, 6}, {255, 0, 7, 8, 9, 10}}, {}};
    std::stringstream ss;
    write_idx(ss, set);
    const std::string bytes = ss.str();
    REQUIRE(bytes.size() == 16 + 12);
    CHECK(static_cast<unsigned char>(bytes[2]) == 0x08);
    CHECK(static_cast<unsigned char>(bytes[3]) == 0x03);
    std::istringstream in(bytes);
    auto back = read_idx(in);
    CHECK(back.rows == 2);
    CHECK(back.cols == 3);
    CHECK(back.images == set.images);

    std::istringstream truncated(bytes.substr(0, bytes.size() - 1));
    CHECK_THROWS_AS(read_idx(truncated), FormatError);
    std::string bad = bytes;
    bad[3] = 0x01;
    std::istringstream wrong_magic(bad);
    CHECK_THROWS_AS(read_idx(wrong_magic), FormatError);
    std::istringstream trailing(bytes + "x");
    CHECK_THROWS_AS(read_idx(trailing), FormatError);
  }

  TEST_CASE("bundled digits cover 0-9 and differ from each other") {
    auto d = synthetic_digits();
    CHECK(d.rows == 28);
    CHECK(d.cols == 28);
    REQUIRE(d.images.size() == 10);
    CHECK(std::set<int>(d.labels.begin(), d.labels.end()).size() == 10);
    CHECK(std::set<std::vector<std::uint8_t>>(d.images.begin(), d.images.end()).size() == 10);
  }

  TEST_CASE("distance transform equals exhaustive search") {
    Rng rng(83);
    for (int trial = 0; trial < 10; ++trial) {
      Mask fg(9, 13);
      for (Index r = 0; r < fg.rows(); ++r)
        for (Index c = 0; c < fg.cols(); ++c) fg(r, c) = rng.bernoulli(0.08);
      fg(static_cast<Index>(rng.below(9)), static_cast<Index>(rng.below(13))) = true;
      auto d = distance_transform(fg);
      CHECK((d - oracle::brute_edt(fg)).abs().maxCoeff() <= 1e-12);
    }
    CHECK_THROWS_AS(distance_transform(Mask::Constant(4, 4, false)), ConfigError);
  }

  TEST_CASE("bicubic resampling keeps constants and is the identity at unit scale") {
    Rng rng(84);
    Eigen::ArrayXXd img = Eigen::ArrayXXd::Random(7, 5);
    CHECK((bicubic_resize(img, 7, 5) - img).abs().maxCoeff() <= 1e-12);
    CHECK((bicubic_resize(Eigen::ArrayXXd::Constant(6, 6, 2.5), 17, 11) - 2.5).abs().maxCoeff() <= 1e-12);
    // Keys cubic convolution reproduces linear ramps away from the clamped border.
    Eigen::ArrayXXd ramp(10, 10);
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 10; ++c) ramp(r, c) = 2.0 * r - c;
    auto up = bicubic_resize(ramp, 20, 20);
    for (int r = 4; r < 16; ++r)
      for (int c = 4; c < 16; ++c) {
        const double sr = (r + 0.5) / 2.0 - 0.5, sc = (c + 0.5) / 2.0 - 0.5;
        CHECK(up(r, c) == doctest::Approx(2.0 * sr - sc).epsilon(1e-12));
      }
  }

  TEST_CASE("digit potential is non-negative, small on the stroke and large far away") {
    auto d = synthetic_digits();
    auto p = build_digit_potential(d.images[1], 28, 28, 56, 56);
    CHECK(p.phi.rows() == 56);
    CHECK(p.phi.minCoeff() >= 0.0);
    CHECK(p.phi.maxCoeff() > 5.0);
    std::vector<std::uint8_t> blank(28 * 28, 0);
    CHECK_THROWS_AS(build_digit_potential(blank, 28, 28, 56, 56), ConfigError);
  }

  TEST_CASE("digit scenario attaches a potential and a label to every sample") {
    auto spec = ScenarioSpec::cellular_mnist();
    spec.width = spec.height = 36;
    spec.type_counts = {3, 3};
    spec.radius = 9;
    spec.params.volume.target = 20;
    spec.sweeps = 5;
    auto digits = synthetic_digits();
    auto ds = generate_mnist(spec, digits, 4, Rng(85));
    REQUIRE(ds.states.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(ds.labels[i] == digits.labels[static_cast<std::size_t>(ds.sources[i])]);
      CHECK(ds.states[i].width() == 36);
    }
  }

  TEST_CASE("directed motion adds the centroid gain of both cells") {
    Rng rng(86);
    auto s = oracle::blocky_state(10, 10, 3, 2, rng);
    AnalyticParams p{oracle::random_contact(3, rng), {0.2, 8.0, {}}, {}};
    std::vector<std::array<double, 2>> dir{{0, 0}, {0.0, 1.0}, {1.0, 0.0}, {0.0, -1.0}};
    const double strength = 3.0;
    DirectedMotionModel model(p, Neighborhood(), dir, strength);
    auto stats = CellStats::of(s);
    auto centroid = [](const LatticeState& x, CellId c) {
      double r = 0, q = 0, n = 0;
      for (int i = 0; i < x.size(); ++i)
        if (x[i] == c) r += x.row_of(i), q += x.col_of(i), n += 1;
      return std::array<double, 3>{r / n, q / n, n};
    };
    for (int trial = 0; trial < 50; ++trial) {
      const int site = static_cast<int>(rng.below(100));
      const CellId to = static_cast<CellId>(rng.below(4));
      if (to == s[site]) continue;
      LatticeState t = s;
      t[site] = to;
      double gain = 0.0;
      for (CellId c : {to, s[site]}) {
        if (c == kMedium) continue;
        auto before = centroid(s, c), after = centroid(t, c);
        if (before[2] == 0 || after[2] == 0) continue;
        gain += (after[0] - before[0]) * dir[c][0] + (after[1] - before[1]) * dir[c][1];
      }
      const double expect = total_energy(t, p, Neighborhood()) - total_energy(s, p, Neighborhood()) - strength * gain;
      CHECK(model.delta(s, stats, {site, to}) == doctest::Approx(expect).epsilon(1e-9));
    }
  }

  TEST_CASE("bipolar generation splits the polar type between two poles") {
    auto spec = ScenarioSpec::bipolar();
    spec.width = spec.height = 40;
    spec.type_counts = {2, 4};
    spec.radius = 10;
    spec.params.volume.target = 30;
    spec.sweeps = 40;
    auto states = generate_bipolar(spec, 2, Rng(87));
    REQUIRE(states.size() == 2);
    CHECK_NOTHROW(states[0].validate());
    spec.type_counts = {2, 3};
    CHECK_THROWS_AS(generate_bipolar(spec, 1, Rng(87)), ConfigError);
  }

  TEST_CASE("dihedral transforms form the square's symmetry group") {
    Rng rng(88);
    auto s = oracle::random_state(5, 5, 3, 2, rng);
    CHECK(dihedral_transform(s, 0) == s);
    auto r1 = dihedral_transform(s, 1);
    CHECK(r1.at(4, 0) == s.at(0, 0));  // counter-clockwise quarter turn
    CHECK(dihedral_transform(dihedral_transform(r1, 1), 2) == s);
    auto m = dihedral_transform(s, 4);
    CHECK(m.at(0, 4) == s.at(0, 0));
    CHECK(dihedral_transform(m, 4) == s);
    std::set<std::vector<CellId>> distinct;
    for (int k = 0; k < 8; ++k) {
      auto t = dihedral_transform(s, k);
      distinct.insert(std::vector<CellId>(t.grid().data(), t.grid().data() + t.size()));
      CHECK(cell_volumes(t) == cell_volumes(s));
    }
    CHECK(distinct.size() == 8);
    CHECK_THROWS_AS(dihedral_transform(LatticeState(4, 5), 1), ConfigError);
    CHECK_THROWS_AS(dihedral_transform(s, 8), ConfigError);
  }

  TEST_CASE("mean volume ignores medium and vanished cells") {
    LatticeState s(4, 4);
    const CellId a = s.add_cell(1);
    s.add_cell(1);
    for (int i = 0; i < 6; ++i) s[i] = a;
    std::vector<LatticeState> v{s};
    CHECK(mean_cell_volume(v) == doctest::Approx(6.0));
  }
}
