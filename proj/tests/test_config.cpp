#include "doctest.h"
#include "ncpm/config.hpp"

#include <filesystem>
#include <fstream>

using namespace ncpm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ncpm_cfg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::vector<std::string> problems_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigErrors& e) {
    return e.problems();
  }
  return {};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty config gives the defaults") {
    auto cfg = parse_config("");
    CHECK(cfg.seed == 1);
    CHECK(cfg.scenario_kind == ScenarioKind::CellSort);
    CHECK(cfg.model.kind == ModelKind::Analytic);
    CHECK(cfg.train.batch == 16);
  }

  TEST_CASE("scenario preset applies before the other keys in its section") {
    auto cfg = parse_config("[scenario]\nwidth = 64\nheight = 64\nkind = cellsort-b\ncells = 9,9\nradius = 16\n");
    CHECK(cfg.scenario.width == 64);
    CHECK(cfg.scenario.type_counts == std::vector<int>{9, 9});
    CHECK(cfg.scenario.params.contact(1, 2) == doctest::Approx(4.5));
  }

  TEST_CASE("contact is read as a lower triangle") {
    auto cfg = parse_config("[scenario]\ncontact = 0, 1, 2, 3, 4, 5\n");
    const auto& j = cfg.scenario.params.contact;
    CHECK(j(1, 0) == 1.0);
    CHECK(j(0, 1) == 1.0);
    CHECK(j(1, 1) == 2.0);
    CHECK(j(2, 0) == 3.0);
    CHECK(j(2, 1) == 4.0);
    CHECK(j(2, 2) == 5.0);
  }

  TEST_CASE("every problem is reported, not just the first") {
    auto problems = problems_of(
        "[run]\nseed = abc\n[train]\nbatch = 0\nbogus = 1\n[nonsense]\nx = 1\n[sample]\nkernel = hmc\n");
    CHECK(problems.size() == 4);
    problems = problems_of("[train]\nbatch = 0\nreset_prob = 2\n");
    CHECK(problems.size() == 2);
  }

  TEST_CASE("contact size must match the number of cell types") {
    CHECK(problems_of("[scenario]\ncells = 5,5,5\n").size() == 1);
    CHECK(problems_of("[scenario]\ncells = 20\n").size() == 1);
  }

  TEST_CASE("neural models need a lattice divisible by the downsampling") {
    CHECK_NOTHROW(parse_config("[scenario]\nwidth = 72\nheight = 72\nradius = 20\n[model]\nkind = neural\n"));
    auto problems = problems_of("[scenario]\nwidth = 70\nheight = 70\nradius = 20\n[model]\nkind = neural\n");
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("divisible") != std::string::npos);
  }

  TEST_CASE("profile overlay and missing files") {
    auto dir = temp_dir("overlay");
    write_file(dir / "base.ini", "[run]\nseed = 5\nn = 12\n[scenario]\nkind = cellsort-a\n");
    write_file(dir / "child.ini", "[profile]\nbase = base\n[run]\nn = 3\n[train]\nsteps = 7\n");
    auto cfg = load_config(dir / "child.ini");
    CHECK(cfg.seed == 5);
    CHECK(cfg.n == 3);
    CHECK(cfg.train.steps == 7);
    CHECK(load_profile("child", dir).n == 3);

    CHECK_THROWS_AS(load_config(dir / "absent.ini"), ConfigErrors);
    write_file(dir / "loop.ini", "[profile]\nbase = loop\n");
    CHECK_THROWS_AS(load_config(dir / "loop.ini"), ConfigErrors);
    fs::remove_all(dir);
  }

  TEST_CASE("command-line overrides land on top of the file") {
    auto dir = temp_dir("overrides");
    write_file(dir / "base.ini", "[run]\nseed = 5\n[train]\nbatch = 16\n");
    auto cfg = load_config(dir / "base.ini", {}, {"train.batch=2", "run.n = 9"});
    CHECK(cfg.train.batch == 2);
    CHECK(cfg.n == 9);
    CHECK(cfg.seed == 5);
    CHECK(load_config("", {}, {"train.steps=4"}).train.steps == 4);
    try {
      load_config(dir / "base.ini", {}, {"batch=2", "train.nope=1"});
      FAIL("expected ConfigErrors");
    } catch (const ConfigErrors& e) {
      CHECK(e.problems().size() == 1);
    }
    try {
      load_config(dir / "base.ini", {}, {"train.nope=1", "train.batch=0"});
      FAIL("expected ConfigErrors");
    } catch (const ConfigErrors& e) {
      CHECK(e.problems().size() == 1);  // unknown keys are reported before range checks run
    }
    fs::remove_all(dir);
  }

  TEST_CASE("build_model creates the configured kind") {
    Rng rng(1);
    auto cfg = parse_config("[scenario]\nwidth = 72\nheight = 72\nradius = 20\n[model]\nkind = analytic\ninit_lambda = 0.25\n");
    LatticeState s(20, 20);
    const CellId a1 = s.add_cell(1), a2 = s.add_cell(2);
    for (int i = 0; i < 30; ++i) s[i] = a1;
    for (int i = 30; i < 80; ++i) s[i] = a2;
    std::vector<LatticeState> data{s};
    auto analytic = build_model(cfg, data, rng);
    auto* a = dynamic_cast<AnalyticModel*>(analytic.get());
    REQUIRE(a);
    CHECK(a->params().volume.target == 40.0);
    CHECK(a->params().volume.lambda == doctest::Approx(0.25));
    CHECK(a->params().contact.isZero());

    cfg.model.kind = ModelKind::Closure;
    auto closure = build_model(cfg, data, rng);
    auto* c = dynamic_cast<ClosureModel*>(closure.get());
    REQUIRE(c);
    CHECK(c->w_s() == 1.0);
    CHECK(c->neural().params().arch.num_types == 3);

    // volume variance 100 at T = 1
    cfg.model.init_lambda = 0.0;
    cfg.model.kind = ModelKind::Analytic;
    auto estimated = build_model(cfg, data, rng);
    CHECK(dynamic_cast<AnalyticModel&>(*estimated).params().volume.lambda == doctest::Approx(0.005));
  }
}
