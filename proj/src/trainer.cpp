#include "ncpm/trainer.hpp"

#include "ncpm/datagen.hpp"

#include <cmath>
#include <ostream>

namespace ncpm {

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (batch < 1) out.push_back("batch must be at least 1");
  if (steps < 0) out.push_back("steps must be non-negative");
  if (mc_sweeps < 0.0) out.push_back("mc_sweeps must be non-negative");
  if (parallel_flips < 1) out.push_back("parallel_flips must be at least 1");
  if (reset_prob < 0.0 || reset_prob > 1.0) out.push_back("reset_prob must lie in [0, 1]");
  if (reg < 0.0) out.push_back("reg must be non-negative");
  if (ewa_alpha < 0.0 || ewa_alpha >= 1.0) out.push_back("ewa_alpha must lie in [0, 1)");
  if (!(temperature > 0.0)) out.push_back("temperature must be positive");
  if (!(adam.lr > 0.0) || adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0 ||
      !(adam.eps > 0.0))
    out.push_back("invalid Adam hyperparameters");
  if (divergence_patience < 1) out.push_back("divergence_patience must be at least 1");
  return out;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (!p.empty()) throw ConfigError(p.front());
}

void adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ConfigError("adam_update: gradient/parameter length mismatch");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

Eigen::VectorXd ewa_update(const Eigen::VectorXd& avg, const Eigen::VectorXd& params, double alpha) {
  if (avg.size() != params.size()) throw ConfigError("ewa_update: length mismatch");
  if (alpha == 0.0) return params;
  return alpha * avg + (1.0 - alpha) * params;
}

LossAndGrad loss_and_grad(std::span<const LatticeState> positives, std::span<const LatticeState> negatives,
                          const TrainableModel& model, double reg) {
  if (positives.size() != negatives.size() || positives.empty())
    throw ConfigError("loss_and_grad needs equal, non-empty positive and negative batches");
  const double b = static_cast<double>(positives.size());
  LossAndGrad out;
  Eigen::VectorXd g;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const double hp = model.energy_and_gradient(positives[i], g);
    if (out.grad.size() == 0) out.grad = Eigen::VectorXd::Zero(g.size());
    out.grad += (1.0 + 2.0 * reg * hp) * g;
    const double hn = model.energy_and_gradient(negatives[i], g);
    out.grad -= (1.0 - 2.0 * reg * hn) * g;
    if (!std::isfinite(hp) || !std::isfinite(hn))
      throw TrainingError("non-finite energy in batch slot " + std::to_string(i), {});
    out.loss += hp - hn + reg * (hp * hp + hn * hn);
    out.mean_pos += hp;
    out.mean_neg += hn;
    out.max_abs_energy = std::max({out.max_abs_energy, std::abs(hp), std::abs(hn)});
  }
  out.loss /= b;
  out.grad /= b;
  out.mean_pos /= b;
  out.mean_neg /= b;
  return out;
}

void TrainingTrace::write_csv(std::ostream& os) const {
  os << "# columns: step, loss (regularised contrastive), mean_h_pos (data batch), mean_h_neg (chain batch)";
  for (const auto& n : scalar_names) os << ", " << n;
  os << "\nstep,loss,mean_h_pos,mean_h_neg";
  for (const auto& n : scalar_names) os << ',' << n;
  os << '\n';
  const auto old_precision = os.precision(17);
  for (const auto& r : rows) {
    os << r.step << ',' << r.loss << ',' << r.mean_pos << ',' << r.mean_neg;
    for (double v : r.scalars) os << ',' << v;
    os << '\n';
  }
  os.precision(old_precision);
}

LatticeState permute_cell_types(const LatticeState& state, Rng& rng) {
  LatticeState out = state;
  std::vector<TypeId> types(state.cell_types().begin() + 1, state.cell_types().end());
  rng.shuffle(types);
  std::copy(types.begin(), types.end(), out.cell_types().begin() + 1);
  return out;
}

TrainResult pcd_train(std::span<const LatticeState> dataset, TrainableModel& model, const TrainConfig& cfg, Rng& rng,
                      const TrainObserver& observer) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  for (const auto& s : dataset)
    if (s.width() != dataset[0].width() || s.height() != dataset[0].height())
      throw ConfigError("training states must share lattice dimensions");

  TrainResult result;
  result.params = model.parameters();
  result.ewa_params = result.params;
  for (const auto& kv : model.scalar_summary()) result.trace.scalar_names.push_back(kv.first);
  if (cfg.steps == 0) return result;

  const auto batch = static_cast<std::size_t>(cfg.batch);
  const SamplerConfig sampler = cfg.sampler();
  const std::int64_t chain_steps =
      kernel_steps(Kernel::ApproxPCPM, dataset[0].size(), cfg.mc_sweeps, cfg.parallel_flips);

  if (cfg.augment_dihedral && dataset[0].width() != dataset[0].height())
    throw ConfigError("dihedral augmentation needs a square lattice");
  auto draw = [&](Rng& r) {
    const LatticeState& s = dataset[r.below(dataset.size())];
    return cfg.augment_dihedral ? augment_rotate(s, r) : s;
  };
  auto reset = [&](Rng& r) {
    return Chain(cfg.permute_types_on_reset ? permute_cell_types(draw(r), r) : draw(r));
  };

  std::vector<Chain> chains;
  std::vector<Rng> chain_rngs;
  for (std::size_t b = 0; b < batch; ++b) {
    chain_rngs.push_back(rng.substream(1000 + b));
    chains.push_back(reset(chain_rngs.back()));
  }

  AdamState adam;
  int over_bound = 0;
  std::vector<LatticeState> positives(batch), negatives(batch);
  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    for (auto& p : positives) p = draw(rng);
    for (std::size_t b = 0; b < batch; ++b) {
      if (rng.bernoulli(cfg.reset_prob)) chains[b] = reset(chain_rngs[b]);
      for (std::int64_t t = 0; t < chain_steps; ++t) approx_pcpm_step(chains[b], model, sampler, chain_rngs[b]);
      negatives[b] = chains[b].state;
    }

    LossAndGrad lg;
    try {
      lg = loss_and_grad(positives, negatives, model, cfg.reg);
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at step " + std::to_string(step), result.trace);
    }
    if (!lg.grad.allFinite()) throw TrainingError("non-finite gradient at step " + std::to_string(step), result.trace);

    adam_update(result.params, lg.grad, adam, cfg.adam);
    model.set_parameters(result.params);
    result.ewa_params = ewa_update(result.ewa_params, result.params, cfg.ewa_alpha);

    TraceRow row{step, lg.loss, lg.mean_pos, lg.mean_neg, {}};
    for (const auto& kv : model.scalar_summary()) row.scalars.push_back(kv.second);
    result.trace.rows.push_back(row);
    if (observer) observer(row);

    over_bound = lg.max_abs_energy > cfg.divergence_bound ? over_bound + 1 : 0;
    if (over_bound >= cfg.divergence_patience)
      throw TrainingError("energies exceeded " + std::to_string(cfg.divergence_bound) + " for " +
                              std::to_string(over_bound) + " consecutive steps (step " + std::to_string(step) + ")",
                          result.trace);
  }
  return result;
}

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0) throw ConfigError("rmse needs equal-length, non-empty vectors");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

TemperatureFit fit_optimal_temperature(const Eigen::VectorXd& learned, const Eigen::VectorXd& truth) {
  if (learned.size() != truth.size()) throw ConfigError("fit_optimal_temperature: length mismatch");
  const double denom = learned.squaredNorm();
  if (!(denom > 0.0)) throw ConfigError("fit_optimal_temperature: learned parameters are all zero");
  TemperatureFit fit;
  fit.temperature = learned.dot(truth) / denom;
  fit.rmse = rmse(fit.temperature * learned, truth);
  return fit;
}

}  // namespace ncpm
