#include "doctest.h"
#include "ncpm/io.hpp"
#include "oracles.hpp"

#include <filesystem>
#include <set>
#include <sstream>

using namespace ncpm;

namespace {

std::string bytes_of(const LatticeState& s) {
  std::ostringstream os;
  write_snapshot(os, s);
  return os.str();
}

LatticeState parse(const std::string& bytes) {
  std::istringstream is(bytes);
  return read_snapshot(is);
}

SnapshotError::Kind failure_kind(const std::string& bytes) {
  try {
    parse(bytes);
  } catch (const SnapshotError& e) {
    return e.kind();
  }
  FAIL("snapshot was accepted");
  return SnapshotError::Kind::Invalid;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ncpm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

NHArchitecture tiny_arch() { return NHArchitecture{3, 2, 3, {4, 5}, {2, 1}, 6, true}; }

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("snapshot layout and round trips") {
    LatticeState one(1, 1);
    const auto b = bytes_of(one);
    CHECK(b.size() == 24 + 4 + 8);
    CHECK(b.substr(0, 4) == "NCPM");
    CHECK(parse(b) == one);

    Rng rng(101);
    auto big = oracle::random_state(100, 100, 50, 2, rng);
    CHECK(parse(bytes_of(big)) == big);
  }

  TEST_CASE("corrupt snapshots report distinct errors") {
    Rng rng(102);
    const auto good = bytes_of(oracle::random_state(5, 4, 3, 2, rng));
    std::string magic = good;
    magic[0] = 'X';
    CHECK(failure_kind(magic) == SnapshotError::Kind::BadMagic);
    std::string version = good;
    version[4] = 2;
    CHECK(failure_kind(version) == SnapshotError::Kind::VersionMismatch);
    CHECK(failure_kind(good.substr(0, good.size() - 3)) == SnapshotError::Kind::Truncated);
    CHECK(failure_kind(good.substr(0, 10)) == SnapshotError::Kind::Truncated);
    CHECK(failure_kind(good + "extra") == SnapshotError::Kind::Invalid);
    std::string bad_id = good;
    bad_id[24] = 9;  // first site refers to an unregistered cell
    CHECK(failure_kind(bad_id) == SnapshotError::Kind::Invalid);
  }

  TEST_CASE("datasets round-trip through a directory with a manifest") {
    Rng rng(103);
    std::vector<LatticeState> states;
    for (int i = 0; i < 3; ++i) states.push_back(oracle::random_state(6, 6, 3, 2, rng));
    auto dir = temp_dir("dataset");
    write_dataset(dir, states, {{"scenario", "test"}});
    CHECK(std::filesystem::exists(dir / "000002.ncpm"));
    auto ds = read_dataset(dir);
    REQUIRE(ds.states.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(ds.states[i] == states[i]);
    CHECK(ds.manifest["scenario"] == "test");
    CHECK(ds.manifest["count"] == 3);
    std::filesystem::remove_all(dir);
    CHECK_THROWS(read_dataset(dir));
  }

  TEST_CASE("checkpoints keep tensors bit-exactly") {
    Rng rng(104);
    Checkpoint ck;
    ck.meta = {{"model", "neural"}, {"note", "x"}};
    ck.tensors.push_back({"a", oracle::random_tensor({2, 3}, rng)});
    ck.tensors.push_back({"b.c", oracle::random_tensor({4}, rng)});
    std::stringstream ss;
    write_checkpoint(ss, ck);
    auto back = read_checkpoint(ss);
    CHECK(back.meta == ck.meta);
    CHECK(back.get("a").shape() == ck.tensors[0].value.shape());
    CHECK(back.get("a").vec() == ck.tensors[0].value.vec());
    CHECK(back.has("b.c"));
    CHECK_FALSE(back.has("zzz"));
    CHECK_THROWS_AS(back.get("zzz"), CheckpointError);
    std::istringstream cut(ss.str().substr(0, ss.str().size() - 5));
    CHECK_THROWS_AS(read_checkpoint(cut), CheckpointError);
  }

  TEST_CASE("every model kind survives a checkpoint round trip") {
    Rng rng(105);
    auto s = oracle::blocky_state(12, 12, 3, 2, rng);
    AnalyticParams ap{oracle::random_contact(3, rng), {0.4, 30.0, {}}, {}};
    AnalyticModel analytic(ap, Neighborhood(NeighborhoodKind::VonNeumann4));
    NeuralModel neural(NHParams::initialize(tiny_arch(), rng, OutputInit::HeNormal));
    ClosureModel closure(analytic, neural, 0.7, 1.3);

    AnalyticParams with_field = ap;
    with_field.potential = ExternalPotential{Eigen::ArrayXXd::Random(12, 12), {0.0, 0.5, 2.0}};
    AnalyticModel coupled(with_field, Neighborhood(), true);

    for (const TrainableModel* m : std::initializer_list<const TrainableModel*>{&analytic, &neural, &closure, &coupled}) {
      std::stringstream ss;
      write_checkpoint(ss, checkpoint_of(*m));
      auto restored = model_from_checkpoint(read_checkpoint(ss));
      CHECK(restored->parameters() == m->parameters());
      CHECK(restored->energy(s) == m->energy(s));
    }
  }

  TEST_CASE("architecture JSON round trip") {
    auto arch = NHArchitecture::bipolar();
    auto back = architecture_from_json(architecture_to_json(arch));
    CHECK(back.hidden_dims == arch.hidden_dims);
    CHECK(back.pool_rates == arch.pool_rates);
    CHECK(back.embed_kernel == arch.embed_kernel);
    CHECK(back.include_medium == arch.include_medium);
  }

  TEST_CASE("rendering colours by type and is deterministic") {
    LatticeState medium(4, 3);
    auto palette = default_palette(3);
    auto img = render_ppm(medium, palette, false);
    const std::string header = "P6\n4 3\n255\n";
    REQUIRE(img.size() == header.size() + 36);
    CHECK(std::string(img.begin(), img.begin() + static_cast<long>(header.size())) == header);
    std::set<Rgb> colours;
    for (std::size_t i = header.size(); i < img.size(); i += 3) colours.insert({img[i], img[i + 1], img[i + 2]});
    CHECK(colours.size() == 1);

    Rng rng(106);
    auto s = oracle::random_state(10, 10, 6, 2, rng);
    auto a = render_ppm(s, palette, false), b = render_ppm(s, palette, false);
    CHECK(a == b);
    colours.clear();
    const std::string h2 = "P6\n10 10\n255\n";
    for (std::size_t i = h2.size(); i < a.size(); i += 3) colours.insert({a[i], a[i + 1], a[i + 2]});
    CHECK(colours.size() == 3);

    auto scaled = render_ppm(s, palette, true, 3);
    CHECK(scaled.size() == std::string("P6\n30 30\n255\n").size() + 30 * 30 * 3);
    CHECK_THROWS_AS(render_ppm(s, default_palette(2), false), ConfigError);
  }
}
