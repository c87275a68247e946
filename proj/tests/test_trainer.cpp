#include "doctest.h"
#include "ncpm/datagen.hpp"
#include "ncpm/trainer.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace ncpm;

namespace {

std::vector<LatticeState> small_cellsort(int n, std::uint64_t seed) {
  ScenarioSpec spec = ScenarioSpec::cellsort_b();
  spec.width = spec.height = 24;
  spec.type_counts = {3, 3};
  spec.radius = 7;
  spec.params.volume.target = 20.0;
  spec.sweeps = 60;
  return generate_cellsort(spec, n, Rng(seed));
}

AnalyticModel fresh_model(const std::vector<LatticeState>& data) {
  AnalyticParams p{Eigen::MatrixXd::Zero(3, 3), {0.5, mean_cell_volume(data), {}}, {}};
  return AnalyticModel(p, Neighborhood());
}

TrainConfig quick_config(int steps) {
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.steps = steps;
  cfg.mc_sweeps = 0.5;
  cfg.parallel_flips = 20;
  return cfg;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("first Adam step moves each coordinate by the learning rate against the gradient sign") {
    Eigen::VectorXd p(3), g(3);
    p << 1.0, -2.0, 0.5;
    g << 4.0, -0.01, 0.0;
    AdamState st;
    AdamConfig cfg;
    Eigen::VectorXd q = p;
    adam_update(q, g, st, cfg);
    CHECK(q[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
    CHECK(q[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
    CHECK(q[2] == 0.5);
    CHECK(st.step == 1);
  }

  TEST_CASE("Adam matches a hand-rolled recursion over several steps") {
    Rng rng(71);
    AdamConfig cfg{0.01, 0.8, 0.95, 1e-6};
    Eigen::VectorXd p = Eigen::VectorXd::Random(4), ref = p;
    Eigen::VectorXd m = Eigen::VectorXd::Zero(4), v = Eigen::VectorXd::Zero(4);
    AdamState st;
    for (int t = 1; t <= 5; ++t) {
      Eigen::VectorXd g(4);
      for (int i = 0; i < 4; ++i) g[i] = rng.normal();
      adam_update(p, g, st, cfg);
      m = 0.8 * m + 0.2 * g;
      v = 0.95 * v + 0.05 * g.cwiseProduct(g);
      const double c1 = 1 - std::pow(0.8, t), c2 = 1 - std::pow(0.95, t);
      for (int i = 0; i < 4; ++i) ref[i] -= 0.01 * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-6);
    }
    CHECK((p - ref).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("EWA blends toward the current parameters") {
    Eigen::VectorXd avg(2), p(2);
    avg << 1.0, 1.0;
    p << 3.0, -1.0;
    CHECK(ewa_update(avg, p, 0.0) == p);
    auto half = ewa_update(avg, p, 0.5);
    CHECK(half[0] == doctest::Approx(2.0));
    CHECK(half[1] == doctest::Approx(0.0));
  }

  TEST_CASE("loss and gradient follow the regularised contrastive formula") {
    Rng rng(72);
    std::vector<LatticeState> pos, neg;
    for (int i = 0; i < 3; ++i) {
      pos.push_back(oracle::blocky_state(8, 8, 4, 2, rng));
      neg.push_back(oracle::blocky_state(8, 8, 4, 2, rng));
    }
    AnalyticParams p{oracle::random_contact(3, rng), {0.3, 10.0, {}}, {}};
    AnalyticModel model(p, Neighborhood());
    const double reg = 0.01;
    auto lg = loss_and_grad(pos, neg, model, reg);
    double expect = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double hp = oracle::total_energy(pos[i], p, Neighborhood());
      const double hn = oracle::total_energy(neg[i], p, Neighborhood());
      expect += hp - hn + reg * (hp * hp + hn * hn);
    }
    CHECK(lg.loss == doctest::Approx(expect / 3.0).epsilon(1e-12));

    AnalyticModel probe = model;
    const double err = grad_check<double>(
        [&](const Eigen::VectorXd& t) {
          probe.set_parameters(t);
          return loss_and_grad(pos, neg, probe, reg).loss;
        },
        lg.grad, model.parameters(), 1e-6);
    CHECK(err <= 1e-6);
    std::vector<LatticeState> one{pos[0]};
    CHECK_THROWS_AS(loss_and_grad(pos, one, model, reg), ConfigError);
  }

  TEST_CASE("type permutation keeps the grid and the type counts") {
    Rng rng(73);
    auto s = oracle::blocky_state(10, 10, 8, 2, rng);
    auto t = permute_cell_types(s, rng);
    CHECK(t.grid().isApprox(s.grid()));
    auto a = s.cell_types(), b = t.cell_types();
    CHECK(b[0] == kMediumType);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }

  TEST_CASE("optimal temperature is the least-squares scale") {
    Eigen::VectorXd truth(3), learned(3);
    truth << 1.0, 2.0, 3.0;
    learned = 4.0 * truth;
    auto fit = fit_optimal_temperature(learned, truth);
    CHECK(fit.temperature == doctest::Approx(0.25));
    CHECK(fit.rmse == doctest::Approx(0.0).scale(1.0));
    learned << 1.0, 0.0, 0.0;
    fit = fit_optimal_temperature(learned, truth);
    CHECK(fit.temperature == doctest::Approx(1.0));
    CHECK(fit.rmse == doctest::Approx(std::sqrt(13.0 / 3.0)));
    CHECK_THROWS_AS(fit_optimal_temperature(Eigen::VectorXd::Zero(3), truth), ConfigError);
  }

  TEST_CASE("training is reproducible and reports every step") {
    auto data = small_cellsort(6, 3);
    auto cfg = quick_config(5);
    cfg.ewa_alpha = 0.9;
    auto m1 = fresh_model(data), m2 = fresh_model(data);
    Rng r1(5), r2(5);
    int seen = 0;
    auto a = pcd_train(data, m1, cfg, r1, [&](const TraceRow&) { ++seen; });
    auto b = pcd_train(data, m2, cfg, r2);
    CHECK(seen == 5);
    CHECK(a.trace.rows.size() == 5);
    CHECK(a.params == b.params);
    CHECK(a.ewa_params == b.ewa_params);
    CHECK(m1.parameters() == a.params);
    CHECK(a.ewa_params != a.params);

    std::ostringstream csv;
    a.trace.write_csv(csv);
    const std::string text = csv.str();
    CHECK(text.rfind("# columns:", 0) == 0);
    CHECK(text.find("\nstep,loss,mean_h_pos,mean_h_neg") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2 + 5);
  }

  TEST_CASE("trained model prefers data over type-shuffled data") {
    auto data = small_cellsort(24, 4);
    auto model = fresh_model(data);
    auto cfg = quick_config(150);
    cfg.batch = 8;
    Rng rng(6);
    pcd_train(std::span<const LatticeState>(data).first(16), model, cfg, rng);
    Rng perm(7);
    double real = 0.0, shuffled = 0.0;
    for (std::size_t i = 16; i < data.size(); ++i) {
      real += model.energy(data[i]);
      shuffled += model.energy(permute_cell_types(data[i], perm));
    }
    CHECK(real < shuffled);
  }

  TEST_CASE("diverging energies abort with the trace so far") {
    auto data = small_cellsort(4, 8);
    auto model = fresh_model(data);
    auto cfg = quick_config(10);
    cfg.divergence_bound = 1e-9;
    cfg.divergence_patience = 3;
    Rng rng(9);
    try {
      pcd_train(data, model, cfg, rng);
      FAIL("expected a TrainingError");
    } catch (const TrainingError& e) {
      CHECK(e.trace().rows.size() == 3);
    }
  }

  TEST_CASE("bad configurations are rejected") {
    TrainConfig cfg;
    cfg.ewa_alpha = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.reset_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    auto model = AnalyticModel(AnalyticParams{Eigen::MatrixXd::Zero(2, 2), {1.0, 1.0, {}}, {}}, Neighborhood());
    Rng rng(1);
    CHECK_THROWS_AS(pcd_train({}, model, TrainConfig{}, rng), ConfigError);
  }
}
