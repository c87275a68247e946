#pragma once

#include "ncpm/energy_model.hpp"
#include "ncpm/lattice.hpp"
#include "ncpm/random.hpp"
#include "ncpm/samplers.hpp"

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncpm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int batch = 16;
  std::int64_t steps = 10000;
  double mc_sweeps = 1.0;     ///< sweeps of the negative chains per update
  int parallel_flips = 100;   ///< P
  double reset_prob = 1.0;    ///< per chain, per step
  double reg = 0.0;           ///< energy-magnitude regulariser
  double ewa_alpha = 0.0;
  AdamConfig adam;
  double temperature = 1.0;
  Neighborhood neighborhood{NeighborhoodKind::Moore8};
  bool sequential_merge = false;
  bool permute_types_on_reset = true;
  /// Apply a random square symmetry to every state drawn from the data.
  bool augment_dihedral = false;
  double divergence_bound = 1e6;
  int divergence_patience = 50;

  /// Every invalid field, one message each.
  std::vector<std::string> problems() const;
  void validate() const;
  SamplerConfig sampler() const { return {temperature, parallel_flips, neighborhood, sequential_merge}; }
};

struct AdamState {
  Eigen::VectorXd m, v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam step; updates `params` and `state` in place.
void adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const AdamConfig& cfg);

/// alpha * avg + (1 - alpha) * params
Eigen::VectorXd ewa_update(const Eigen::VectorXd& avg, const Eigen::VectorXd& params, double alpha);

struct LossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
  double mean_pos = 0.0;
  double mean_neg = 0.0;
  double max_abs_energy = 0.0;
};

/// Regularised contrastive loss
///   (1/B) sum_b H(x+_b) - H(x-_b) + reg (H(x+_b)^2 + H(x-_b)^2)
/// and its gradient; the negatives are treated as constants.
LossAndGrad loss_and_grad(std::span<const LatticeState> positives, std::span<const LatticeState> negatives,
                          const TrainableModel& model, double reg);

struct TraceRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double mean_pos = 0.0;
  double mean_neg = 0.0;
  std::vector<double> scalars;
};

struct TrainingTrace {
  std::vector<std::string> scalar_names;
  std::vector<TraceRow> rows;

  void write_csv(std::ostream& os) const;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, TrainingTrace trace) : std::runtime_error(what), trace_(std::move(trace)) {}
  const TrainingTrace& trace() const { return trace_; }

 private:
  TrainingTrace trace_;
};

struct TrainResult {
  Eigen::VectorXd params;
  Eigen::VectorXd ewa_params;
  TrainingTrace trace;
};

/// Copy of `state` with the cell -> type assignment shuffled among the
/// non-medium cells (type counts are preserved).
LatticeState permute_cell_types(const LatticeState& state, Rng& rng);

using TrainObserver = std::function<void(const TraceRow&)>;

/// Persistent contrastive divergence with ApproxPCPM negative chains, Adam,
/// and a parameter EWA. On return `model` holds the final raw parameters.
TrainResult pcd_train(std::span<const LatticeState> dataset, TrainableModel& model, const TrainConfig& cfg, Rng& rng,
                      const TrainObserver& observer = {});

struct TemperatureFit {
  double temperature = 1.0;
  double rmse = 0.0;
};

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// argmin_T RMSE(T * learned, truth) = <learned, truth> / <learned, learned>.
TemperatureFit fit_optimal_temperature(const Eigen::VectorXd& learned, const Eigen::VectorXd& truth);

}  // namespace ncpm
