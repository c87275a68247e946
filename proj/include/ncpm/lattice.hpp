#pragma once

#include "ncpm/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace ncpm {

using CellId = std::uint32_t;
using TypeId = std::uint32_t;

inline constexpr CellId kMedium = 0;
inline constexpr TypeId kMediumType = 0;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Offset {
  int drow;
  int dcol;
};

enum class NeighborhoodKind { VonNeumann4, Moore8 };

class Neighborhood {
 public:
  constexpr Neighborhood(NeighborhoodKind kind = NeighborhoodKind::Moore8) : kind_(kind) {}

  constexpr NeighborhoodKind kind() const { return kind_; }
  std::span<const Offset> offsets() const {
    return kind_ == NeighborhoodKind::Moore8 ? std::span<const Offset>(kMoore) : std::span<const Offset>(kVonNeumann);
  }
  constexpr bool operator==(const Neighborhood&) const = default;

 private:
  static constexpr std::array<Offset, 4> kVonNeumann{{{-1, 0}, {0, -1}, {0, 1}, {1, 0}}};
  static constexpr std::array<Offset, 8> kMoore{
      {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};
  NeighborhoodKind kind_;
};

Neighborhood parse_neighborhood(std::string_view name);
std::string_view to_string(NeighborhoodKind kind);

/// Grid of cell ids (0 = medium) plus the cell -> type table.
///
/// Sites are addressed by their row-major linear index. Cell ids are dense:
/// every id in [0, num_cells()) is registered, and medium (id 0) always has
/// type 0. The lattice is bounded; out-of-range neighbours are simply absent.
class LatticeState {
 public:
  using Grid = Eigen::Array<CellId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  LatticeState() : LatticeState(0, 0) {}
  LatticeState(int width, int height);

  int width() const { return static_cast<int>(grid_.cols()); }
  int height() const { return static_cast<int>(grid_.rows()); }
  int size() const { return static_cast<int>(grid_.size()); }

  CellId operator[](int site) const { return grid_.data()[site]; }
  CellId& operator[](int site) { return grid_.data()[site]; }
  CellId at(int row, int col) const { return grid_(row, col); }
  CellId& at(int row, int col) { return grid_(row, col); }

  const Grid& grid() const { return grid_; }
  Grid& grid() { return grid_; }

  const std::vector<TypeId>& cell_types() const { return cell_types_; }
  std::vector<TypeId>& cell_types() { return cell_types_; }
  TypeId type_of(CellId cell) const { return cell_types_[cell]; }
  TypeId type_at(int site) const { return cell_types_[(*this)[site]]; }

  /// Registers a new cell of `type` and returns its id.
  CellId add_cell(TypeId type);

  /// Registered cells including medium.
  std::size_t num_cells() const { return cell_types_.size(); }
  /// One past the largest registered type id (at least 1 for medium).
  TypeId num_types() const;

  int row_of(int site) const { return site / width(); }
  int col_of(int site) const { return site % width(); }
  int site_of(int row, int col) const { return row * width() + col; }
  bool contains(int row, int col) const { return row >= 0 && col >= 0 && row < height() && col < width(); }

  /// Calls fn(neighbour_site) for every in-lattice neighbour of `site`.
  template <typename Fn>
  void for_each_neighbor(int site, Neighborhood nb, Fn&& fn) const {
    const int r = row_of(site), c = col_of(site);
    for (const Offset& o : nb.offsets()) {
      const int rr = r + o.drow, cc = c + o.dcol;
      if (contains(rr, cc)) fn(rr * width() + cc);
    }
  }

  /// Throws ConfigError if the invariants do not hold.
  void validate() const;

  bool operator==(const LatticeState& other) const {
    return cell_types_ == other.cell_types_ && grid_.rows() == other.grid_.rows() &&
           grid_.cols() == other.grid_.cols() && (grid_ == other.grid_).all();
  }

 private:
  Grid grid_;
  std::vector<TypeId> cell_types_;
};

/// Per-cell occupancy planes, one per cell in ascending id order.
struct OneHotStack {
  std::vector<CellId> cells;
  Tensor planes;  // [cells, height, width]
};

OneHotStack one_hot_encode(const LatticeState& state, bool include_medium);

/// Sites with at least one in-lattice neighbour holding a different cell id, ascending.
std::vector<int> boundary_sites(const LatticeState& state, Neighborhood nb);

bool is_boundary_site(const LatticeState& state, int site, Neighborhood nb);

/// Site counts indexed by cell id (length num_cells(); medium at index 0).
std::vector<std::int64_t> cell_volumes(const LatticeState& state);

/// Number of connected components formed by each registered cell's sites
/// (index 0, medium, is left at 0). Uses an explicit stack.
std::vector<int> component_counts(const LatticeState& state, Neighborhood nb);

/// Non-medium cells whose sites form more than one connected component.
int fragment_count(const LatticeState& state, Neighborhood nb);

/// Renames cells: new id of cell c is perm[c]; perm must be a permutation
/// with perm[0] == 0. Types travel with their cells.
LatticeState relabel_cells(const LatticeState& state, std::span<const CellId> perm);

/// Cyclic translation by (drow, dcol).
LatticeState cyclic_shift(const LatticeState& state, int drow, int dcol);

}  // namespace ncpm
