#include "ncpm/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ncpm {

void SamplerConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("sampler temperature must be positive");
  if (parallel_flips < 1) throw ConfigError("parallel_flips must be at least 1");
}

double acceptance_probability(double delta_h, double temperature) {
  if (delta_h <= 0.0) return 1.0;
  return std::exp(-delta_h / temperature);
}

bool metropolis_accept(double delta_h, double temperature, Rng& rng) {
  const double p = acceptance_probability(delta_h, temperature);
  const double u = rng.uniform();
  return u < p;
}

void Chain::apply(Flip flip) {
  const CellId from = state[flip.site];
  if (from == flip.new_cell) return;
  stats.apply(state, flip.site, from, flip.new_cell);
  state[flip.site] = flip.new_cell;
}

bool metropolis_step(Chain& chain, const EnergyModel& model, const SamplerConfig& cfg, Rng& rng) {
  const LatticeState& s = chain.state;
  const int target = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.size())));
  int neighbors[8];
  int count = 0;
  s.for_each_neighbor(target, cfg.neighborhood, [&](int n) { neighbors[count++] = n; });
  if (count == 0) return false;
  const int source = neighbors[rng.below(static_cast<std::uint64_t>(count))];
  if (s[source] == s[target]) return false;
  const Flip flip{target, s[source]};
  const double dh = model.delta(s, chain.stats, flip);
  if (!metropolis_accept(dh, cfg.temperature, rng)) return false;
  chain.apply(flip);
  return true;
}

int approx_pcpm_step(Chain& chain, const EnergyModel& model, const SamplerConfig& cfg, Rng& rng,
                     ApproxStepTrace* trace) {
  const LatticeState& s = chain.state;
  const auto boundary = boundary_sites(s, cfg.neighborhood);
  if (boundary.empty()) return 0;

  std::vector<int> sampled;
  sampled.reserve(static_cast<std::size_t>(cfg.parallel_flips));
  std::vector<char> taken(static_cast<std::size_t>(s.size()), 0);
  for (int p = 0; p < cfg.parallel_flips; ++p) {
    const int site = boundary[rng.below(boundary.size())];
    if (!taken[static_cast<std::size_t>(site)]) {
      taken[static_cast<std::size_t>(site)] = 1;
      sampled.push_back(site);
    }
  }

  std::vector<Flip> flips;
  flips.reserve(sampled.size());
  for (int site : sampled) {
    int differing[8];
    int count = 0;
    s.for_each_neighbor(site, cfg.neighborhood, [&](int n) {
      if (s[n] != s[site]) differing[count++] = n;
    });
    flips.push_back({site, s[differing[rng.below(static_cast<std::uint64_t>(count))]]});
  }

  std::vector<double> dh(flips.size());
  std::vector<char> accepted(flips.size(), 0);
  int n_accepted = 0;

  if (cfg.sequential_merge) {
    for (std::size_t i = 0; i < flips.size(); ++i) {
      if (s[flips[i].site] == flips[i].new_cell) {
        dh[i] = 0.0;
        continue;
      }
      dh[i] = model.delta(s, chain.stats, flips[i]);
      if (metropolis_accept(dh[i], cfg.temperature, rng)) {
        accepted[i] = 1;
        ++n_accepted;
        chain.apply(flips[i]);
      }
    }
  } else {
    model.deltas(s, chain.stats, flips, dh);
    for (std::size_t i = 0; i < flips.size(); ++i)
      if (metropolis_accept(dh[i], cfg.temperature, rng)) accepted[i] = 1;
    // Merge in site order; sites are distinct so the order only fixes the
    // floating-point history of the running statistics.
    std::vector<std::size_t> order(flips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return flips[a].site < flips[b].site; });
    for (std::size_t i : order)
      if (accepted[i]) {
        chain.apply(flips[i]);
        ++n_accepted;
      }
  }

  if (trace) {
    trace->sampled = std::move(sampled);
    trace->proposals = std::move(flips);
    trace->delta_h = std::move(dh);
    trace->accepted = std::move(accepted);
  }
  return n_accepted;
}

void approx_pcpm(const EnergyModel& model, std::int64_t steps, std::span<Chain> chains, const SamplerConfig& cfg,
                 std::span<Rng> rngs) {
  if (rngs.size() != chains.size()) throw ConfigError("approx_pcpm needs one generator per chain");
  for (std::size_t b = 0; b < chains.size(); ++b)
    for (std::int64_t t = 0; t < steps; ++t) approx_pcpm_step(chains[b], model, cfg, rngs[b]);
}

void gibbs_step(Chain& chain, const EnergyModel& model, const SamplerConfig& cfg, Rng& rng) {
  const LatticeState& s = chain.state;
  const int site = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.size())));
  const CellId current = s[site];
  const std::size_t n = s.num_cells();

  std::vector<Flip> flips;
  flips.reserve(n);
  for (CellId c = 0; c < n; ++c)
    if (c != current) flips.push_back({site, c});
  std::vector<double> dh(flips.size());
  model.deltas(s, chain.stats, flips, dh);

  // log-weights relative to the current label, which has dH = 0
  std::vector<double> logw(n, 0.0);
  for (std::size_t i = 0; i < flips.size(); ++i) logw[flips[i].new_cell] = -dh[i] / cfg.temperature;
  const double top = *std::max_element(logw.begin(), logw.end());
  double total = 0.0;
  for (double& w : logw) total += (w = std::exp(w - top));

  const double u = rng.uniform() * total;
  double acc = 0.0;
  CellId chosen = static_cast<CellId>(n - 1);
  for (CellId c = 0; c < n; ++c) {
    acc += logw[c];
    if (u < acc) {
      chosen = c;
      break;
    }
  }
  if (chosen != current) chain.apply({site, chosen});
}

Kernel parse_kernel(std::string_view name) {
  if (name == "metropolis") return Kernel::Metropolis;
  if (name == "approx" || name == "approx-pcpm") return Kernel::ApproxPCPM;
  if (name == "gibbs") return Kernel::Gibbs;
  throw ConfigError("unknown kernel '" + std::string(name) + "' (expected metropolis, approx-pcpm or gibbs)");
}

std::string_view to_string(Kernel kernel) {
  switch (kernel) {
    case Kernel::Metropolis: return "metropolis";
    case Kernel::ApproxPCPM: return "approx-pcpm";
    case Kernel::Gibbs: return "gibbs";
  }
  return "?";
}

std::int64_t kernel_steps(Kernel kernel, int lattice_sites, double sweeps, int parallel_flips) {
  if (sweeps < 0.0) throw ConfigError("sweeps must be non-negative");
  const auto flips = static_cast<std::int64_t>(std::llround(sweeps * lattice_sites));
  if (kernel != Kernel::ApproxPCPM) return flips;
  return (flips + parallel_flips - 1) / parallel_flips;
}

std::vector<LatticeState> run_chain(Kernel kernel, const EnergyModel& model, LatticeState x0, double sweeps,
                                    const SamplerConfig& cfg, Rng& rng, std::int64_t snapshot_every) {
  cfg.validate();
  const std::int64_t total = kernel_steps(kernel, x0.size(), sweeps, cfg.parallel_flips);
  std::vector<LatticeState> trajectory{x0};
  Chain chain(std::move(x0));
  for (std::int64_t t = 1; t <= total; ++t) {
    switch (kernel) {
      case Kernel::Metropolis: metropolis_step(chain, model, cfg, rng); break;
      case Kernel::ApproxPCPM: approx_pcpm_step(chain, model, cfg, rng); break;
      case Kernel::Gibbs: gibbs_step(chain, model, cfg, rng); break;
    }
    if ((snapshot_every > 0 && t % snapshot_every == 0) || (snapshot_every <= 0 && t == total))
      trajectory.push_back(chain.state);
  }
  return trajectory;
}

}  // namespace ncpm
