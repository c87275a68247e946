#pragma once

#include "ncpm/lattice.hpp"

#include <Eigen/Core>

#include <span>
#include <stdexcept>
#include <vector>

namespace ncpm {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Smallest, largest and mean volume of the cells present in a dataset.
struct VolumeBounds {
  double v_min = 0.0;
  double v_max = 0.0;
  double v_mean = 0.0;

  static VolumeBounds measure(std::span<const LatticeState> states);
  double lower() const { return v_min - 0.1 * v_mean; }
  double upper() const { return v_max + 0.1 * v_mean; }
};

struct BioIndicators {
  double p_volume = 0.0;
  double p_unfragmented = 0.0;
};

/// Every registered non-medium cell (vanished ones count with volume 0)
/// lies within [bounds.lower(), bounds.upper()].
bool volumes_within(const LatticeState& state, const VolumeBounds& bounds);

/// Fraction of states whose volumes pass volumes_within, and fraction with
/// at most `max_fragmented` fragmented cells.
BioIndicators biological_indicators(std::span<const LatticeState> states, const VolumeBounds& bounds,
                                    Neighborhood nb, int max_fragmented = 3);

/// exp(mean_x KL(p(y|x) || mean_x' p(y|x'))), natural log, 0 log 0 = 0.
double classifier_score(std::span<const Eigen::VectorXd> outputs);

struct AxialStats {
  double frac_axis = 0.0;  ///< var_axis / (var_axis + var_orth)
  double var_axis = 0.0;
  double var_orth = 0.0;
  bool present = false;    ///< the type has at least one pixel
};

struct AxialResult {
  bool degenerate = false;  ///< fewer than two polar pixels or zero spread
  Eigen::Vector2d axis{1.0, 0.0};  ///< (x = column, y = row), x >= 0
  std::vector<AxialStats> per_type;  ///< indexed by type id; medium left empty
};

/// Principal axis of the polar type's pixel coordinates, and for every cell
/// type the (population) variance of its pixels along and across that axis.
AxialResult axial_alignment(const LatticeState& state, TypeId polar_type);

/// Dataset means of (type-1 along, type-1 across, type-2 along, type-2 across)
/// variances; non-degenerate states only.
Eigen::Vector4d mean_axial_statistics(std::span<const LatticeState> states, TypeId polar_type);

/// RMSE between the mean_axial_statistics of two datasets.
double axial_rmse(std::span<const LatticeState> simulated, std::span<const LatticeState> reference,
                  TypeId polar_type);

enum class TemperatureMode { T1, TStar };

/// RMSE between canonical parameter vectors, optionally after the optimal
/// global temperature rescaling of `learned`.
double param_rmse(const Eigen::VectorXd& learned, const Eigen::VectorXd& truth, TemperatureMode mode);

/// Nearest-centroid classifier over block-averaged occupancy masks of one
/// cell type. A small stand-in for score demos; its scores are not
/// comparable with a properly trained digit classifier.
class NearestCentroidClassifier {
 public:
  NearestCentroidClassifier(TypeId type, int grid = 7, double sharpness = 20.0)
      : type_(type), grid_(grid), sharpness_(sharpness) {}

  void fit(std::span<const LatticeState> states, std::span<const int> labels, int num_classes);
  Eigen::VectorXd features(const LatticeState& state) const;
  /// softmax(-sharpness * squared distance to each class centroid)
  Eigen::VectorXd predict_proba(const LatticeState& state) const;
  int num_classes() const { return static_cast<int>(centroids_.rows()); }

 private:
  TypeId type_;
  int grid_;
  double sharpness_;
  Eigen::MatrixXd centroids_;  ///< class x feature
};

}  // namespace ncpm
