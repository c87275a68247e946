#pragma once

#include "ncpm/lattice.hpp"

#include <Eigen/Core>

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ncpm {

/// Single-site copy: `site` takes the id `new_cell`.
struct Flip {
  int site;
  CellId new_cell;
};

/// Per-cell running sums kept in step with a chain's state, so that local
/// energy differences never need a full lattice scan.
struct CellStats {
  std::vector<std::int64_t> volume;
  std::vector<double> row_sum;
  std::vector<double> col_sum;

  static CellStats of(const LatticeState& state);
  /// Moves `site` from cell `from` to cell `to`.
  void apply(const LatticeState& state, int site, CellId from, CellId to);
};

/// Anything the samplers can run: a scalar energy over lattice states plus
/// energy differences for single-site proposals.
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;

  virtual double energy(const LatticeState& state) const = 0;

  /// H(x with flip) - H(x). The default recomputes both energies.
  virtual double delta(const LatticeState& state, const CellStats& stats, Flip flip) const;

  /// Independent single-site differences against the same base state.
  virtual void deltas(const LatticeState& state, const CellStats& stats, std::span<const Flip> flips,
                      std::span<double> out) const;
};

/// An energy model with a flat, unconstrained parameter vector.
class TrainableModel : public EnergyModel {
 public:
  virtual Eigen::VectorXd parameters() const = 0;
  virtual void set_parameters(const Eigen::VectorXd& theta) = 0;
  Eigen::Index parameter_count() const { return parameters().size(); }

  /// Returns H(state) and writes dH/dtheta into `grad` (resized as needed).
  virtual double energy_and_gradient(const LatticeState& state, Eigen::VectorXd& grad) const = 0;

  /// Human-meaningful scalar parameters (natural units) for training traces.
  virtual std::vector<std::pair<std::string, double>> scalar_summary() const = 0;

  virtual std::unique_ptr<TrainableModel> clone() const = 0;
};

}  // namespace ncpm
