#pragma once

#include "ncpm/datagen.hpp"
#include "ncpm/neural.hpp"
#include "ncpm/samplers.hpp"
#include "ncpm/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncpm {

/// Every problem found while reading a configuration, not just the first.
class ConfigErrors : public std::runtime_error {
 public:
  explicit ConfigErrors(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

enum class ScenarioKind { CellSort, Mnist, Bipolar };
enum class ModelKind { Analytic, Neural, Closure };

struct ModelConfig {
  ModelKind kind = ModelKind::Analytic;
  NHArchitecture arch;
  double init_lambda = 0.0;  ///< starting volume multiplier; 0 estimates it from the data
  OutputInit output_init = OutputInit::Zero;
  double w_s = 1.0;
  double w_nn = 1.0;
};

struct SampleConfig {
  Kernel kernel = Kernel::ApproxPCPM;
  double sweeps = 10.0;
  int parallel_flips = 50;
  double temperature = 1.0;
  std::int64_t snapshot_every = 0;  ///< kernel applications; 0 keeps only the final state
  int chains = 4;
  bool start_from_data = true;  ///< otherwise from init_scatter
};

struct EvalConfig {
  int max_fragmented = 3;
  TypeId polar_type = 2;
};

/// Everything a CLI run needs, read from an INI-style key = value file.
struct RunConfig {
  std::uint64_t seed = 1;
  int n = 128;  ///< dataset size for generate
  ScenarioKind scenario_kind = ScenarioKind::CellSort;
  ScenarioSpec scenario = ScenarioSpec::cellsort_a();
  std::string digits = "synthetic";  ///< IDX path for the digit scenario
  ModelConfig model;
  TrainConfig train;
  SampleConfig sample;
  EvalConfig eval;
};

/// Reads `path`; a `[profile] base = name` entry first loads name.ini from
/// `profile_dir` (or the file's own directory) and overlays this file on it.
/// Unknown sections/keys and invalid values are collected into ConfigErrors.
RunConfig load_config(const std::filesystem::path& path, const std::filesystem::path& profile_dir = {});

/// load_config followed by `section.key=value` assignments. An empty `path`
/// starts from the built-in defaults.
RunConfig load_config(const std::filesystem::path& path, const std::filesystem::path& profile_dir,
                      const std::vector<std::string>& overrides);

/// Same as load_config on profile_dir / (name + ".ini").
RunConfig load_profile(const std::string& name, const std::filesystem::path& profile_dir);

/// Parses INI text directly (no base-profile resolution).
RunConfig parse_config(const std::string& text);

/// Cross-field checks (lattice divisibility for neural models, etc.).
std::vector<std::string> validate_config(const RunConfig& cfg);

/// The scenario's cell types plus medium.
int scenario_num_types(const RunConfig& cfg);

/// A fresh trainable model for `cfg`. V* is the mean cell volume of `data`;
/// the volume multiplier is model.init_lambda or, when that is 0, the
/// volume_lambda_estimate of `data` at the training temperature.
std::unique_ptr<TrainableModel> build_model(const RunConfig& cfg, std::span<const LatticeState> data, Rng& rng);

}  // namespace ncpm
