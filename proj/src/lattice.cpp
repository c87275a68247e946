#include "ncpm/lattice.hpp"

#include <algorithm>
#include <string>

namespace ncpm {

Neighborhood parse_neighborhood(std::string_view name) {
  if (name == "moore8" || name == "moore") return Neighborhood(NeighborhoodKind::Moore8);
  if (name == "vonneumann4" || name == "vonneumann" || name == "von-neumann")
    return Neighborhood(NeighborhoodKind::VonNeumann4);
  throw ConfigError("unknown neighborhood '" + std::string(name) + "' (expected moore8 or vonneumann4)");
}

std::string_view to_string(NeighborhoodKind kind) {
  return kind == NeighborhoodKind::Moore8 ? "moore8" : "vonneumann4";
}

LatticeState::LatticeState(int width, int height) : grid_(Grid::Zero(height, width)), cell_types_{kMediumType} {
  if (width < 0 || height < 0) throw ConfigError("lattice dimensions must be non-negative");
}

CellId LatticeState::add_cell(TypeId type) {
  if (type == kMediumType) throw ConfigError("type 0 is reserved for medium");
  cell_types_.push_back(type);
  return static_cast<CellId>(cell_types_.size() - 1);
}

TypeId LatticeState::num_types() const {
  return cell_types_.empty() ? 1 : *std::max_element(cell_types_.begin(), cell_types_.end()) + 1;
}

void LatticeState::validate() const {
  if (cell_types_.empty() || cell_types_[0] != kMediumType) throw ConfigError("medium must be registered with type 0");
  for (std::size_t c = 1; c < cell_types_.size(); ++c)
    if (cell_types_[c] == kMediumType) throw ConfigError("cell " + std::to_string(c) + " has the medium type");
  for (int s = 0; s < size(); ++s)
    if ((*this)[s] >= cell_types_.size())
      throw ConfigError("site " + std::to_string(s) + " holds unregistered cell " + std::to_string((*this)[s]));
}

OneHotStack one_hot_encode(const LatticeState& state, bool include_medium) {
  OneHotStack stack;
  for (CellId c = include_medium ? 0 : 1; c < state.num_cells(); ++c) stack.cells.push_back(c);
  const CellId first = include_medium ? 0 : 1;
  stack.planes = Tensor({static_cast<Index>(stack.cells.size()), state.height(), state.width()});
  const Index plane = Index{state.size()};
  for (int s = 0; s < state.size(); ++s) {
    const CellId c = state[s];
    if (c >= first) stack.planes[(c - first) * plane + s] = 1.0;
  }
  return stack;
}

bool is_boundary_site(const LatticeState& state, int site, Neighborhood nb) {
  const CellId here = state[site];
  const int r = state.row_of(site), c = state.col_of(site);
  for (const Offset& o : nb.offsets()) {
    const int rr = r + o.drow, cc = c + o.dcol;
    if (state.contains(rr, cc) && state.at(rr, cc) != here) return true;
  }
  return false;
}

std::vector<int> boundary_sites(const LatticeState& state, Neighborhood nb) {
  std::vector<int> sites;
  for (int s = 0; s < state.size(); ++s)
    if (is_boundary_site(state, s, nb)) sites.push_back(s);
  return sites;
}

std::vector<std::int64_t> cell_volumes(const LatticeState& state) {
  std::vector<std::int64_t> volumes(state.num_cells(), 0);
  for (int s = 0; s < state.size(); ++s) ++volumes[state[s]];
  return volumes;
}

std::vector<int> component_counts(const LatticeState& state, Neighborhood nb) {
  std::vector<int> counts(state.num_cells(), 0);
  std::vector<char> seen(static_cast<std::size_t>(state.size()), 0);
  std::vector<int> stack;
  for (int s = 0; s < state.size(); ++s) {
    const CellId cell = state[s];
    if (cell == kMedium || seen[static_cast<std::size_t>(s)]) continue;
    ++counts[cell];
    seen[static_cast<std::size_t>(s)] = 1;
    stack.push_back(s);
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      state.for_each_neighbor(cur, nb, [&](int n) {
        if (!seen[static_cast<std::size_t>(n)] && state[n] == cell) {
          seen[static_cast<std::size_t>(n)] = 1;
          stack.push_back(n);
        }
      });
    }
  }
  return counts;
}

int fragment_count(const LatticeState& state, Neighborhood nb) {
  const auto counts = component_counts(state, nb);
  return static_cast<int>(std::count_if(counts.begin(), counts.end(), [](int k) { return k > 1; }));
}

LatticeState relabel_cells(const LatticeState& state, std::span<const CellId> perm) {
  if (perm.size() != state.num_cells() || perm[0] != kMedium)
    throw ConfigError("relabel_cells needs a permutation over all cells that fixes medium");
  LatticeState out(state.width(), state.height());
  out.cell_types().assign(state.num_cells(), kMediumType);
  std::vector<char> used(state.num_cells(), 0);
  for (CellId c = 0; c < state.num_cells(); ++c) {
    if (perm[c] >= state.num_cells() || used[perm[c]]) throw ConfigError("relabel_cells map is not a permutation");
    used[perm[c]] = 1;
    out.cell_types()[perm[c]] = state.type_of(c);
  }
  for (int s = 0; s < state.size(); ++s) out[s] = perm[state[s]];
  return out;
}

LatticeState cyclic_shift(const LatticeState& state, int drow, int dcol) {
  LatticeState out = state;
  const int h = state.height(), w = state.width();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.at(((r + drow) % h + h) % h, ((c + dcol) % w + w) % w) = state.at(r, c);
  return out;
}

}  // namespace ncpm
