#pragma once

#include "ncpm/analytic.hpp"
#include "ncpm/energy_model.hpp"
#include "ncpm/lattice.hpp"
#include "ncpm/random.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ncpm {

/// Everything needed to synthesise one family of lattice snapshots.
struct ScenarioSpec {
  int width = 100;
  int height = 100;
  std::vector<int> type_counts{25, 25};  ///< cells per type, type 1 first
  AnalyticParams params;
  Neighborhood neighborhood{NeighborhoodKind::Moore8};
  double temperature = 1.0;
  double radius = 25.0;   ///< cells are seeded inside this centred circle
  double sweeps = 200.0;  ///< Metropolis sweeps before a snapshot is taken
  /// Directed-motion bias toward the poles (bi-polar generation only).
  double motion_strength = 0.0;
  TypeId polar_type = 2;
  /// When false, flips that would remove a cell's last site are rejected,
  /// so every snapshot keeps all of its cells.
  bool allow_vanishing = false;

  int total_cells() const;
  /// Every invalid field, one message each.
  std::vector<std::string> problems() const;
  void validate() const;

  /// Contact tables of the synthetic scenarios; types are medium, 1, 2.
  static Eigen::MatrixXd contact_table(const std::array<double, 6>& lower);
  static ScenarioSpec cellsort_a();
  static ScenarioSpec cellsort_b();
  /// Potential coupling is set per sample from a digit image.
  static ScenarioSpec cellular_mnist();
  static ScenarioSpec bipolar();
};

/// One single-pixel cell per distinct site inside the centred circle;
/// cells 1..k get type 1, the next ones type 2, and so on.
LatticeState init_scatter(const ScenarioSpec& spec, Rng& rng);

/// init_scatter followed by `spec.sweeps` sequential Metropolis sweeps.
/// Sample i draws from rng.substream(i).
std::vector<LatticeState> generate_cellsort(const ScenarioSpec& spec, int n, const Rng& rng);

/// 28x28-style 8-bit greyscale images.
struct ImageSet {
  int rows = 0, cols = 0;
  std::vector<std::vector<std::uint8_t>> images;
  std::vector<int> labels;  ///< optional, same length as images when present
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// IDX u8 image container (magic 2051, big-endian dims).
ImageSet read_idx(std::istream& in);
ImageSet load_idx(const std::filesystem::path& path);
void write_idx(std::ostream& out, const ImageSet& set);

/// Procedural seven-segment style digits 0-9, 28x28, for offline use.
ImageSet synthetic_digits();

/// Exact Euclidean distance from every pixel to the nearest `true` pixel
/// (0 on foreground). Throws ConfigError when the mask has no foreground.
Eigen::ArrayXXd distance_transform(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& foreground);

/// Keys (a = -0.5) bicubic resampling with pixel-centre alignment and edge clamping.
Eigen::ArrayXXd bicubic_resize(const Eigen::ArrayXXd& src, int out_rows, int out_cols);

struct PotentialImage {
  Eigen::ArrayXXd phi;
  int source = -1;
  double threshold = 127.5;
};

/// Threshold at half brightness, distance transform, bicubic resize,
/// negative overshoot clamped to zero.
PotentialImage build_digit_potential(const std::vector<std::uint8_t>& image, int rows, int cols, int out_rows,
                                     int out_cols, double threshold = 127.5);

struct LabelledDataset {
  std::vector<LatticeState> states;
  std::vector<int> labels;   ///< digit label per state (-1 when unknown)
  std::vector<int> sources;  ///< index into the image set
};

/// Like generate_cellsort, with each sample coupled (through spec.params'
/// potential coupling) to the potential of a uniformly drawn image.
LabelledDataset generate_mnist(const ScenarioSpec& spec, const ImageSet& digits, int n, const Rng& rng);

/// Adds -strength * (centroid shift . direction) for the donor and the
/// receiving cell of each flip on top of an analytic energy difference.
class DirectedMotionModel final : public EnergyModel {
 public:
  DirectedMotionModel(AnalyticParams params, Neighborhood nb, std::vector<std::array<double, 2>> direction,
                      double strength)
      : base_(std::move(params), nb), direction_(std::move(direction)), strength_(strength) {}

  /// The motion bias is kinetic only; the reported energy is the analytic one.
  double energy(const LatticeState& state) const override { return base_.energy(state); }
  double delta(const LatticeState& state, const CellStats& stats, Flip flip) const override;

 private:
  double centroid_gain(const LatticeState& state, const CellStats& stats, CellId cell, int site, int sign) const;

  AnalyticModel base_;
  std::vector<std::array<double, 2>> direction_;  ///< (drow, dcol) per cell id
  double strength_;
};

/// Scattered cluster whose polar-type cells are split evenly between the two
/// poles along the column axis (by seed column, so each goes to the nearer
/// pole) and pushed toward them while equilibrating.
std::vector<LatticeState> generate_bipolar(const ScenarioSpec& spec, int n, const Rng& rng);

/// Element k in [0, 8) of the square's symmetry group: k & 3 quarter turns
/// counter-clockwise, then a left-right mirror when k >= 4.
LatticeState dihedral_transform(const LatticeState& state, int k);
LatticeState augment_rotate(const LatticeState& state, Rng& rng);

/// Mean volume of the non-medium cells over every state.
double mean_cell_volume(std::span<const LatticeState> states);

/// Volume multiplier whose Gaussian fluctuations match the observed volume
/// spread, T / (2 Var V), over the cells present in `states`.
double volume_lambda_estimate(std::span<const LatticeState> states, double temperature);

}  // namespace ncpm
