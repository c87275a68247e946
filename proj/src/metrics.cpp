#include "ncpm/metrics.hpp"

#include "ncpm/trainer.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ncpm {

VolumeBounds VolumeBounds::measure(std::span<const LatticeState> states) {
  VolumeBounds b{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  double total = 0.0;
  std::int64_t count = 0;
  for (const auto& s : states) {
    const auto v = cell_volumes(s);
    for (std::size_t c = 1; c < v.size(); ++c) {
      if (v[c] == 0) continue;
      const double x = static_cast<double>(v[c]);
      b.v_min = std::min(b.v_min, x);
      b.v_max = std::max(b.v_max, x);
      total += x;
      ++count;
    }
  }
  if (count == 0) throw MetricError("no cells found to measure volume bounds");
  b.v_mean = total / static_cast<double>(count);
  return b;
}

bool volumes_within(const LatticeState& state, const VolumeBounds& bounds) {
  const auto v = cell_volumes(state);
  for (std::size_t c = 1; c < v.size(); ++c) {
    const double x = static_cast<double>(v[c]);
    if (x < bounds.lower() || x > bounds.upper()) return false;
  }
  return true;
}

BioIndicators biological_indicators(std::span<const LatticeState> states, const VolumeBounds& bounds,
                                    Neighborhood nb, int max_fragmented) {
  if (states.empty()) throw MetricError("biological_indicators needs at least one state");
  int vol_ok = 0, frag_ok = 0;
  for (const auto& s : states) {
    vol_ok += volumes_within(s, bounds);
    frag_ok += fragment_count(s, nb) <= max_fragmented;
  }
  const double n = static_cast<double>(states.size());
  return {vol_ok / n, frag_ok / n};
}

double classifier_score(std::span<const Eigen::VectorXd> outputs) {
  if (outputs.empty()) throw MetricError("classifier_score needs at least one output");
  const Eigen::Index k = outputs[0].size();
  Eigen::VectorXd marginal = Eigen::VectorXd::Zero(k);
  for (const auto& p : outputs) {
    if (p.size() != k) throw MetricError("classifier outputs have inconsistent class counts");
    if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-9)
      throw MetricError("classifier output is not a probability vector");
    marginal += p;
  }
  marginal /= static_cast<double>(outputs.size());
  double mean_kl = 0.0;
  for (const auto& p : outputs) {
    double kl = 0.0;
    for (Eigen::Index y = 0; y < k; ++y) {
      if (p[y] == 0.0) continue;
      if (marginal[y] == 0.0) throw MetricError("KL divergence is infinite (zero marginal for class " + std::to_string(y) + ")");
      kl += p[y] * std::log(p[y] / marginal[y]);
    }
    mean_kl += kl;
  }
  return std::exp(mean_kl / static_cast<double>(outputs.size()));
}

AxialResult axial_alignment(const LatticeState& state, TypeId polar_type) {
  const TypeId types = std::max<TypeId>(state.num_types(), polar_type + 1);
  // per-type coordinate moments: count, sum x, sum y, sum xx, sum yy, sum xy
  std::vector<std::array<double, 6>> m(types, {0, 0, 0, 0, 0, 0});
  for (int site = 0; site < state.size(); ++site) {
    const TypeId t = state.type_at(site);
    const double x = state.col_of(site), y = state.row_of(site);
    auto& a = m[t];
    a[0] += 1;
    a[1] += x;
    a[2] += y;
    a[3] += x * x;
    a[4] += y * y;
    a[5] += x * y;
  }
  auto covariance = [&](TypeId t) {
    const auto& a = m[t];
    const double mx = a[1] / a[0], my = a[2] / a[0];
    Eigen::Matrix2d c;
    c(0, 0) = a[3] / a[0] - mx * mx;
    c(1, 1) = a[4] / a[0] - my * my;
    c(0, 1) = c(1, 0) = a[5] / a[0] - mx * my;
    return c;
  };

  AxialResult out;
  out.per_type.resize(types);
  if (m[polar_type][0] < 2) {
    out.degenerate = true;
    return out;
  }
  const Eigen::Matrix2d cp = covariance(polar_type);
  if (!(cp.trace() > 1e-12)) {
    out.degenerate = true;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cp);
  Eigen::Vector2d axis = eig.eigenvectors().col(1);  // eigenvalues ascending
  if (axis.x() < 0.0 || (axis.x() == 0.0 && axis.y() < 0.0)) axis = -axis;
  out.axis = axis;
  const Eigen::Vector2d orth(-axis.y(), axis.x());
  for (TypeId t = 1; t < types; ++t) {
    if (m[t][0] == 0) continue;
    const Eigen::Matrix2d c = covariance(t);
    AxialStats& s = out.per_type[t];
    s.present = true;
    s.var_axis = std::max(0.0, axis.dot(c * axis));
    s.var_orth = std::max(0.0, orth.dot(c * orth));
    const double total = s.var_axis + s.var_orth;
    s.frac_axis = total > 0.0 ? s.var_axis / total : 0.5;
  }
  return out;
}

Eigen::Vector4d mean_axial_statistics(std::span<const LatticeState> states, TypeId polar_type) {
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  int n = 0;
  for (const auto& s : states) {
    const AxialResult r = axial_alignment(s, polar_type);
    if (r.degenerate || r.per_type.size() < 3 || !r.per_type[1].present || !r.per_type[2].present) continue;
    sum += Eigen::Vector4d(r.per_type[1].var_axis, r.per_type[1].var_orth, r.per_type[2].var_axis,
                           r.per_type[2].var_orth);
    ++n;
  }
  if (n == 0) throw MetricError("no non-degenerate states for axial statistics");
  return sum / n;
}

double axial_rmse(std::span<const LatticeState> simulated, std::span<const LatticeState> reference,
                  TypeId polar_type) {
  const Eigen::Vector4d a = mean_axial_statistics(simulated, polar_type);
  const Eigen::Vector4d b = mean_axial_statistics(reference, polar_type);
  return std::sqrt((a - b).squaredNorm() / 4.0);
}

double param_rmse(const Eigen::VectorXd& learned, const Eigen::VectorXd& truth, TemperatureMode mode) {
  if (learned.size() != truth.size()) throw MetricError("parameter vectors differ in length");
  if (mode == TemperatureMode::T1) return rmse(learned, truth);
  return fit_optimal_temperature(learned, truth).rmse;
}

Eigen::VectorXd NearestCentroidClassifier::features(const LatticeState& state) const {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(grid_ * grid_);
  const double br = static_cast<double>(state.height()) / grid_, bc = static_cast<double>(state.width()) / grid_;
  Eigen::VectorXd area = Eigen::VectorXd::Zero(grid_ * grid_);
  for (int site = 0; site < state.size(); ++site) {
    const int gr = std::min(grid_ - 1, static_cast<int>(state.row_of(site) / br));
    const int gc = std::min(grid_ - 1, static_cast<int>(state.col_of(site) / bc));
    area[gr * grid_ + gc] += 1.0;
    if (state.type_at(site) == type_) f[gr * grid_ + gc] += 1.0;
  }
  return f.cwiseQuotient(area.cwiseMax(1.0));
}

void NearestCentroidClassifier::fit(std::span<const LatticeState> states, std::span<const int> labels,
                                    int num_classes) {
  if (states.size() != labels.size() || states.empty()) throw MetricError("classifier needs one label per state");
  if (num_classes < 1) throw MetricError("classifier needs at least one class");
  centroids_ = Eigen::MatrixXd::Zero(num_classes, grid_ * grid_);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(num_classes);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw MetricError("label out of range");
    centroids_.row(labels[i]) += features(states[i]).transpose();
    counts[labels[i]] += 1.0;
  }
  for (int k = 0; k < num_classes; ++k)
    if (counts[k] > 0) centroids_.row(k) /= counts[k];
}

Eigen::VectorXd NearestCentroidClassifier::predict_proba(const LatticeState& state) const {
  if (centroids_.rows() == 0) throw MetricError("classifier has not been fitted");
  const Eigen::VectorXd f = features(state);
  Eigen::VectorXd logits(centroids_.rows());
  for (Eigen::Index k = 0; k < centroids_.rows(); ++k)
    logits[k] = -sharpness_ * (centroids_.row(k).transpose() - f).squaredNorm();
  logits.array() -= logits.maxCoeff();
  Eigen::VectorXd p = logits.array().exp();
  return p / p.sum();
}

}  // namespace ncpm
