#include "ncpm/energy_model.hpp"

namespace ncpm {

CellStats CellStats::of(const LatticeState& state) {
  CellStats s;
  s.volume.assign(state.num_cells(), 0);
  s.row_sum.assign(state.num_cells(), 0.0);
  s.col_sum.assign(state.num_cells(), 0.0);
  for (int site = 0; site < state.size(); ++site) {
    const CellId c = state[site];
    ++s.volume[c];
    s.row_sum[c] += state.row_of(site);
    s.col_sum[c] += state.col_of(site);
  }
  return s;
}

void CellStats::apply(const LatticeState& state, int site, CellId from, CellId to) {
  const double r = state.row_of(site), c = state.col_of(site);
  --volume[from];
  row_sum[from] -= r;
  col_sum[from] -= c;
  ++volume[to];
  row_sum[to] += r;
  col_sum[to] += c;
}

double EnergyModel::delta(const LatticeState& state, const CellStats&, Flip flip) const {
  LatticeState next = state;
  next[flip.site] = flip.new_cell;
  return energy(next) - energy(state);
}

void EnergyModel::deltas(const LatticeState& state, const CellStats& stats, std::span<const Flip> flips,
                         std::span<double> out) const {
  for (std::size_t i = 0; i < flips.size(); ++i) out[i] = delta(state, stats, flips[i]);
}

}  // namespace ncpm
