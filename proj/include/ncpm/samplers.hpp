#pragma once

#include "ncpm/energy_model.hpp"
#include "ncpm/lattice.hpp"
#include "ncpm/random.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace ncpm {

struct SamplerConfig {
  double temperature = 1.0;
  int parallel_flips = 1;
  Neighborhood neighborhood{NeighborhoodKind::Moore8};
  /// ApproxPCPM only: evaluate and apply the P flips one after another
  /// instead of all against the previous state.
  bool sequential_merge = false;

  void validate() const;
};

/// min{1, exp(-dH / T)}.
double acceptance_probability(double delta_h, double temperature);

/// Draws u ~ U[0,1) and accepts when u < acceptance_probability(dH, T).
bool metropolis_accept(double delta_h, double temperature, Rng& rng);

/// A chain's state together with the statistics the local energy updates rely on.
struct Chain {
  LatticeState state;
  CellStats stats;

  Chain() = default;
  explicit Chain(LatticeState s) : state(std::move(s)), stats(CellStats::of(state)) {}
  void apply(Flip flip);
};

/// One sequential CPM attempt: l1 uniform over the lattice, l2 uniform over
/// its in-lattice neighbours, copy x[l2] into l1 with Metropolis acceptance.
/// Returns true when the state changed.
bool metropolis_step(Chain& chain, const EnergyModel& model, const SamplerConfig& cfg, Rng& rng);

/// What one ApproxPCPM step did, for replay and debugging.
struct ApproxStepTrace {
  std::vector<int> sampled;     ///< unique boundary sites, first-draw order
  std::vector<Flip> proposals;  ///< one per sampled site
  std::vector<double> delta_h;
  std::vector<char> accepted;
};

/// One parallel step: P i.i.d. boundary sites (duplicates dropped), each
/// proposes a differing neighbour's id, every proposal is Metropolis-corrected
/// against the same previous state, accepted flips are merged.
/// Returns the number of accepted flips.
int approx_pcpm_step(Chain& chain, const EnergyModel& model, const SamplerConfig& cfg, Rng& rng,
                     ApproxStepTrace* trace = nullptr);

/// `steps` parallel steps on every chain; chain b draws from rngs[b].
void approx_pcpm(const EnergyModel& model, std::int64_t steps, std::span<Chain> chains, const SamplerConfig& cfg,
                 std::span<Rng> rngs);

/// Heat-bath update of one uniformly chosen site over every registered id.
void gibbs_step(Chain& chain, const EnergyModel& model, const SamplerConfig& cfg, Rng& rng);

enum class Kernel { Metropolis, ApproxPCPM, Gibbs };

Kernel parse_kernel(std::string_view name);
std::string_view to_string(Kernel kernel);

/// Kernel applications that make up `sweeps` Monte Carlo sweeps: |L| * sweeps
/// single-site attempts, or ceil(|L| * sweeps / P) parallel steps.
std::int64_t kernel_steps(Kernel kernel, int lattice_sites, double sweeps, int parallel_flips);

/// Runs a chain and returns snapshots: the initial state and then every
/// `snapshot_every` kernel applications (just the final state when
/// snapshot_every <= 0).
std::vector<LatticeState> run_chain(Kernel kernel, const EnergyModel& model, LatticeState x0, double sweeps,
                                    const SamplerConfig& cfg, Rng& rng, std::int64_t snapshot_every);

}  // namespace ncpm
