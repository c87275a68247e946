#pragma once

#include "ncpm/energy_model.hpp"
#include "ncpm/lattice.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

namespace ncpm {

/// lambda * (V - V*)^2 for every registered non-medium cell.
struct VolumeConstraint {
  double lambda = 0.0;
  double target = 1.0;           ///< V* for cells without an override
  std::vector<double> per_cell;  ///< optional V* overrides indexed by cell id

  double target_for(CellId cell) const {
    return cell < per_cell.size() && per_cell[cell] > 0.0 ? per_cell[cell] : target;
  }
};

/// sum_i mu(type(x_i)) * phi_i.
struct ExternalPotential {
  Eigen::ArrayXXd phi;          ///< height x width
  std::vector<double> coupling;  ///< mu per type id; missing entries are 0

  double coupling_for(TypeId type) const { return type < coupling.size() ? coupling[type] : 0.0; }
};

/// Contact + volume (+ optional external potential) cellular Potts energy.
struct AnalyticParams {
  Eigen::MatrixXd contact;  ///< symmetric num_types x num_types, medium at index 0
  VolumeConstraint volume;
  std::optional<ExternalPotential> potential;

  /// Throws ConfigError when `state` cannot be evaluated with these parameters.
  void validate(const LatticeState& state) const;
};

/// Each unordered heterogeneous neighbour pair contributes J once.
double contact_energy(const LatticeState& state, const Eigen::MatrixXd& contact, Neighborhood nb);
double volume_energy(const LatticeState& state, const VolumeConstraint& volume);
double potential_energy(const LatticeState& state, const ExternalPotential& potential);
double total_energy(const LatticeState& state, const AnalyticParams& params, Neighborhood nb);

/// Exact local H(x') - H(x) for copying `new_cell` into `site`; `volumes`
/// must be the current cell volumes of `state`.
double delta_energy(const LatticeState& state, int site, CellId new_cell, const AnalyticParams& params,
                    Neighborhood nb, std::span<const std::int64_t> volumes);
double delta_energy(const LatticeState& state, int site, CellId new_cell, const AnalyticParams& params,
                    Neighborhood nb);

/// dH/d(parameters). `contact` holds, for a <= b, the number of heterogeneous
/// neighbour pairs whose types are {a, b} (entries below the diagonal are 0).
struct AnalyticGradient {
  Eigen::MatrixXd contact;
  double lambda = 0.0;
  Eigen::VectorXd coupling;  ///< per type; empty when no potential is configured
};

AnalyticGradient param_gradient(const LatticeState& state, const AnalyticParams& params, Neighborhood nb);

/// Contact entries that carry information: the upper triangle without the
/// medium-medium pair, in row-major order ((0,1), (0,2), ..., (1,1), (1,2), ...).
std::vector<std::pair<int, int>> learnable_contact_pairs(int num_types);

/// Canonical comparison vector: learnable contact entries followed by lambda.
Eigen::VectorXd canonical_vector(const AnalyticParams& params);

double softplus(double x);
double inverse_softplus(double y);

/// AnalyticParams behind the TrainableModel interface.
///
/// Parameter layout: learnable contact entries, then the softplus-raw
/// volume multiplier, then (when enabled) one coupling per type.
class AnalyticModel final : public TrainableModel {
 public:
  AnalyticModel(AnalyticParams params, Neighborhood nb, bool learn_coupling = false);

  const AnalyticParams& params() const { return params_; }
  AnalyticParams& params() { return params_; }
  Neighborhood neighborhood() const { return nb_; }
  bool learns_coupling() const { return learn_coupling_; }

  double energy(const LatticeState& state) const override { return total_energy(state, params_, nb_); }
  double delta(const LatticeState& state, const CellStats& stats, Flip flip) const override {
    return delta_energy(state, flip.site, flip.new_cell, params_, nb_, stats.volume);
  }

  Eigen::VectorXd parameters() const override;
  void set_parameters(const Eigen::VectorXd& theta) override;
  double energy_and_gradient(const LatticeState& state, Eigen::VectorXd& grad) const override;
  std::vector<std::pair<std::string, double>> scalar_summary() const override;
  std::unique_ptr<TrainableModel> clone() const override { return std::make_unique<AnalyticModel>(*this); }

 private:
  AnalyticParams params_;
  Neighborhood nb_;
  bool learn_coupling_;
};

}  // namespace ncpm
