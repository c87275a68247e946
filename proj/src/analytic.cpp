#include "ncpm/analytic.hpp"

#include <cmath>
#include <string>

namespace ncpm {
namespace {

// Half of each neighbourhood: every unordered pair is visited exactly once.
std::span<const Offset> forward_offsets(Neighborhood nb) {
  static constexpr Offset kMooreHalf[] = {{0, 1}, {1, -1}, {1, 0}, {1, 1}};
  static constexpr Offset kVonNeumannHalf[] = {{0, 1}, {1, 0}};
  return nb.kind() == NeighborhoodKind::Moore8 ? std::span<const Offset>(kMooreHalf)
                                               : std::span<const Offset>(kVonNeumannHalf);
}

template <typename Fn>
void for_each_heterogeneous_pair(const LatticeState& state, Neighborhood nb, Fn&& fn) {
  const auto half = forward_offsets(nb);
  for (int r = 0; r < state.height(); ++r)
    for (int c = 0; c < state.width(); ++c) {
      const CellId a = state.at(r, c);
      for (const Offset& o : half) {
        const int rr = r + o.drow, cc = c + o.dcol;
        if (!state.contains(rr, cc)) continue;
        const CellId b = state.at(rr, cc);
        if (a != b) fn(state.type_of(a), state.type_of(b));
      }
    }
}

}  // namespace

void AnalyticParams::validate(const LatticeState& state) const {
  const auto types = static_cast<Eigen::Index>(state.num_types());
  if (contact.rows() != contact.cols()) throw ConfigError("contact matrix must be square");
  if (contact.rows() < types)
    throw ConfigError("contact matrix covers " + std::to_string(contact.rows()) + " types but state uses " +
                      std::to_string(types));
  if (!contact.isApprox(contact.transpose(), 0.0)) throw ConfigError("contact matrix must be symmetric");
  if (volume.lambda < 0.0) throw ConfigError("volume multiplier must be non-negative");
  for (CellId c = 1; c < state.num_cells(); ++c)
    if (!(volume.target_for(c) > 0.0)) throw ConfigError("missing target volume for cell " + std::to_string(c));
  if (potential && (potential->phi.rows() != state.height() || potential->phi.cols() != state.width()))
    throw ConfigError("potential field shape does not match lattice");
}

double contact_energy(const LatticeState& state, const Eigen::MatrixXd& contact, Neighborhood nb) {
  if (contact.rows() < static_cast<Eigen::Index>(state.num_types()))
    throw ConfigError("contact matrix does not cover every cell type");
  double e = 0.0;
  for_each_heterogeneous_pair(state, nb, [&](TypeId a, TypeId b) { e += contact(a, b); });
  return e;
}

double volume_energy(const LatticeState& state, const VolumeConstraint& volume) {
  const auto v = cell_volumes(state);
  double e = 0.0;
  for (CellId c = 1; c < state.num_cells(); ++c) {
    const double target = volume.target_for(c);
    if (!(target > 0.0)) throw ConfigError("missing target volume for cell " + std::to_string(c));
    const double d = static_cast<double>(v[c]) - target;
    e += volume.lambda * d * d;
  }
  return e;
}

double potential_energy(const LatticeState& state, const ExternalPotential& potential) {
  if (potential.phi.rows() != state.height() || potential.phi.cols() != state.width())
    throw ConfigError("potential field shape does not match lattice");
  double e = 0.0;
  for (int r = 0; r < state.height(); ++r)
    for (int c = 0; c < state.width(); ++c) e += potential.coupling_for(state.type_of(state.at(r, c))) * potential.phi(r, c);
  return e;
}

double total_energy(const LatticeState& state, const AnalyticParams& params, Neighborhood nb) {
  double e = contact_energy(state, params.contact, nb) + volume_energy(state, params.volume);
  if (params.potential) e += potential_energy(state, *params.potential);
  return e;
}

double delta_energy(const LatticeState& state, int site, CellId new_cell, const AnalyticParams& params,
                    Neighborhood nb, std::span<const std::int64_t> volumes) {
  const CellId old_cell = state[site];
  if (old_cell == new_cell) return 0.0;
  const TypeId old_type = state.type_of(old_cell), new_type = state.type_of(new_cell);

  double d = 0.0;
  state.for_each_neighbor(site, nb, [&](int n) {
    const CellId other = state[n];
    const TypeId t = state.type_of(other);
    if (other != new_cell) d += params.contact(new_type, t);
    if (other != old_cell) d -= params.contact(old_type, t);
  });

  const double lambda = params.volume.lambda;
  if (old_cell != kMedium) {
    const double v = static_cast<double>(volumes[old_cell]) - params.volume.target_for(old_cell);
    d += lambda * ((v - 1.0) * (v - 1.0) - v * v);
  }
  if (new_cell != kMedium) {
    const double v = static_cast<double>(volumes[new_cell]) - params.volume.target_for(new_cell);
    d += lambda * ((v + 1.0) * (v + 1.0) - v * v);
  }

  if (params.potential) {
    const auto& p = *params.potential;
    d += (p.coupling_for(new_type) - p.coupling_for(old_type)) * p.phi(state.row_of(site), state.col_of(site));
  }
  return d;
}

double delta_energy(const LatticeState& state, int site, CellId new_cell, const AnalyticParams& params,
                    Neighborhood nb) {
  const auto volumes = cell_volumes(state);
  return delta_energy(state, site, new_cell, params, nb, volumes);
}

AnalyticGradient param_gradient(const LatticeState& state, const AnalyticParams& params, Neighborhood nb) {
  AnalyticGradient g;
  g.contact = Eigen::MatrixXd::Zero(params.contact.rows(), params.contact.cols());
  for_each_heterogeneous_pair(state, nb, [&](TypeId a, TypeId b) {
    if (a <= b)
      g.contact(a, b) += 1.0;
    else
      g.contact(b, a) += 1.0;
  });
  const auto v = cell_volumes(state);
  for (CellId c = 1; c < state.num_cells(); ++c) {
    const double d = static_cast<double>(v[c]) - params.volume.target_for(c);
    g.lambda += d * d;
  }
  if (params.potential) {
    const auto& p = *params.potential;
    g.coupling = Eigen::VectorXd::Zero(std::max<Eigen::Index>(static_cast<Eigen::Index>(p.coupling.size()),
                                                              params.contact.rows()));
    for (int r = 0; r < state.height(); ++r)
      for (int c = 0; c < state.width(); ++c) g.coupling[state.type_of(state.at(r, c))] += p.phi(r, c);
  }
  return g;
}

std::vector<std::pair<int, int>> learnable_contact_pairs(int num_types) {
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < num_types; ++a)
    for (int b = a; b < num_types; ++b)
      if (a != 0 || b != 0) pairs.emplace_back(a, b);
  return pairs;
}

Eigen::VectorXd canonical_vector(const AnalyticParams& params) {
  const auto pairs = learnable_contact_pairs(static_cast<int>(params.contact.rows()));
  Eigen::VectorXd v(static_cast<Eigen::Index>(pairs.size()) + 1);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = params.contact(pairs[i].first, pairs[i].second);
  v[v.size() - 1] = params.volume.lambda;
  return v;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw ConfigError("inverse_softplus needs a positive value");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

// ---------------------------------------------------------------------------
// AnalyticModel
// ---------------------------------------------------------------------------

AnalyticModel::AnalyticModel(AnalyticParams params, Neighborhood nb, bool learn_coupling)
    : params_(std::move(params)), nb_(nb), learn_coupling_(learn_coupling && params_.potential.has_value()) {
  if (params_.contact.rows() != params_.contact.cols()) throw ConfigError("contact matrix must be square");
  if (!(params_.volume.lambda > 0.0))
    throw ConfigError("trainable volume multiplier must start positive (softplus parameterisation)");
  if (learn_coupling_ && params_.potential->coupling.size() < static_cast<std::size_t>(params_.contact.rows()))
    params_.potential->coupling.resize(static_cast<std::size_t>(params_.contact.rows()), 0.0);
}

Eigen::VectorXd AnalyticModel::parameters() const {
  const int types = static_cast<int>(params_.contact.rows());
  const auto pairs = learnable_contact_pairs(types);
  const Eigen::Index n = static_cast<Eigen::Index>(pairs.size()) + 1 + (learn_coupling_ ? types : 0);
  Eigen::VectorXd theta(n);
  Eigen::Index i = 0;
  for (auto [a, b] : pairs) theta[i++] = params_.contact(a, b);
  theta[i++] = inverse_softplus(params_.volume.lambda);
  if (learn_coupling_)
    for (int t = 0; t < types; ++t) theta[i++] = params_.potential->coupling[static_cast<std::size_t>(t)];
  return theta;
}

void AnalyticModel::set_parameters(const Eigen::VectorXd& theta) {
  const int types = static_cast<int>(params_.contact.rows());
  const auto pairs = learnable_contact_pairs(types);
  if (theta.size() != static_cast<Eigen::Index>(pairs.size()) + 1 + (learn_coupling_ ? types : 0))
    throw ConfigError("analytic parameter vector has the wrong length");
  Eigen::Index i = 0;
  for (auto [a, b] : pairs) {
    params_.contact(a, b) = theta[i];
    params_.contact(b, a) = theta[i++];
  }
  params_.volume.lambda = softplus(theta[i++]);
  if (learn_coupling_)
    for (int t = 0; t < types; ++t) params_.potential->coupling[static_cast<std::size_t>(t)] = theta[i++];
}

double AnalyticModel::energy_and_gradient(const LatticeState& state, Eigen::VectorXd& grad) const {
  const int types = static_cast<int>(params_.contact.rows());
  const auto pairs = learnable_contact_pairs(types);
  const auto g = param_gradient(state, params_, nb_);
  grad.resize(static_cast<Eigen::Index>(pairs.size()) + 1 + (learn_coupling_ ? types : 0));
  Eigen::Index i = 0;
  for (auto [a, b] : pairs) grad[i++] = g.contact(a, b);
  // dlambda/draw = sigmoid(raw) = 1 - exp(-lambda)
  grad[i++] = g.lambda * -std::expm1(-params_.volume.lambda);
  if (learn_coupling_)
    for (int t = 0; t < types; ++t) grad[i++] = t < g.coupling.size() ? g.coupling[t] : 0.0;
  return total_energy(state, params_, nb_);
}

std::vector<std::pair<std::string, double>> AnalyticModel::scalar_summary() const {
  std::vector<std::pair<std::string, double>> out;
  for (auto [a, b] : learnable_contact_pairs(static_cast<int>(params_.contact.rows())))
    out.emplace_back("J_" + std::to_string(a) + "_" + std::to_string(b), params_.contact(a, b));
  out.emplace_back("lambda_v", params_.volume.lambda);
  if (learn_coupling_)
    for (std::size_t t = 0; t < params_.potential->coupling.size(); ++t)
      out.emplace_back("mu_" + std::to_string(t), params_.potential->coupling[t]);
  return out;
}

}  // namespace ncpm
