#pragma once

#include "ncpm/energy_model.hpp"
#include "ncpm/lattice.hpp"
#include "ncpm/neural.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncpm {

class SnapshotError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, Invalid };
  SnapshotError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// "NCPM", version 1, little-endian u32 header (width, height, num_cells,
/// num_types), row-major u32 cell ids, then (cell id, type id) u32 pairs.
void write_snapshot(std::ostream& out, const LatticeState& state);
LatticeState read_snapshot(std::istream& in);
void save_snapshot(const std::filesystem::path& path, const LatticeState& state);
LatticeState load_snapshot(const std::filesystem::path& path);

/// Snapshot files 000000.ncpm, 000001.ncpm, ... plus manifest.json, which
/// gets a "files" list added to `manifest`.
void write_dataset(const std::filesystem::path& dir, const std::vector<LatticeState>& states,
                   nlohmann::json manifest);

struct Dataset {
  std::vector<LatticeState> states;
  nlohmann::json manifest;
};
Dataset read_dataset(const std::filesystem::path& dir);

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Named float64 tensors plus free-form JSON metadata.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "NCPT", version 1, little-endian: u32 meta length, meta JSON bytes,
/// u32 tensor count, then per tensor u32 name length, name, u32 rank,
/// u64 extents, f64 values.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json architecture_to_json(const NHArchitecture& arch);
NHArchitecture architecture_from_json(const nlohmann::json& j);

/// Tensors and metadata ("model": analytic | neural | closure) for any
/// of the three trainable model kinds.
Checkpoint checkpoint_of(const TrainableModel& model);
std::unique_ptr<TrainableModel> model_from_checkpoint(const Checkpoint& ckpt);

using Rgb = std::array<std::uint8_t, 3>;

/// Medium first, then one colour per type.
std::vector<Rgb> default_palette(int num_types);

/// Binary P6 pixmap coloured by cell type, each site drawn as a
/// scale x scale block; with `boundaries`, sites touching another cell
/// (4-neighbourhood) are darkened.
std::vector<std::uint8_t> render_ppm(const LatticeState& state, const std::vector<Rgb>& palette, bool boundaries,
                                     int scale = 1);

}  // namespace ncpm
