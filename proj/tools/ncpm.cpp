#include "ncpm/config.hpp"
#include "ncpm/datagen.hpp"
#include "ncpm/io.hpp"
#include "ncpm/metrics.hpp"
#include "ncpm/samplers.hpp"
#include "ncpm/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef NCPM_PROFILE_DIR
#define NCPM_PROFILE_DIR "profiles"
#endif

using namespace ncpm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string profile;
  std::string profile_dir = NCPM_PROFILE_DIR;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  auto* cfg = cmd->add_option("--config", c.config, "INI run configuration");
  cmd->add_option("--profile", c.profile, "shipped profile name, e.g. cellsort-a")->excludes(cfg);
  cmd->add_option("--profile-dir", c.profile_dir, "where --profile and [profile] base look for files");
  cmd->add_option("--set", c.set, "override a config entry, section.key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "override [run] seed");
}

RunConfig resolve(const Common& c, std::vector<std::string> extra = {}) {
  std::vector<std::string> overrides = c.set;
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  if (c.seed) overrides.push_back("run.seed=" + std::to_string(*c.seed));
  fs::path path;
  if (!c.profile.empty()) path = fs::path(c.profile_dir) / (c.profile + ".ini");
  else if (!c.config.empty()) path = c.config;
  return load_config(path, c.profile_dir, overrides);
}

std::string scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::CellSort: return "cellsort";
    case ScenarioKind::Mnist: return "cellular-mnist";
    case ScenarioKind::Bipolar: return "bipolar";
  }
  return "?";
}

// Writes go to a sibling staging path that replaces `target` only once
// everything succeeded.
class Staged {
 public:
  explicit Staged(fs::path target) : target_(std::move(target)) {
    staging_ = target_;
    staging_ += ".partial";
    fs::remove_all(staging_);
  }
  ~Staged() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }
  const fs::path& path() const { return staging_; }
  void commit() {
    if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
    fs::remove_all(target_);
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_, staging_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

Rng root_rng(const RunConfig& cfg) { return Rng(cfg.seed); }

// ---------------------------------------------------------------------------

int cmd_generate(const Common& c, const std::string& out, std::optional<int> n) {
  std::vector<std::string> extra;
  if (n) extra.push_back("run.n=" + std::to_string(*n));
  const RunConfig cfg = resolve(c, extra);
  const Rng rng = root_rng(cfg).substream(1);
  json manifest{{"kind", "dataset"},
                {"scenario", scenario_name(cfg.scenario_kind)},
                {"seed", cfg.seed},
                {"width", cfg.scenario.width},
                {"height", cfg.scenario.height}};
  std::vector<LatticeState> states;
  switch (cfg.scenario_kind) {
    case ScenarioKind::CellSort: states = generate_cellsort(cfg.scenario, cfg.n, rng); break;
    case ScenarioKind::Bipolar: states = generate_bipolar(cfg.scenario, cfg.n, rng); break;
    case ScenarioKind::Mnist: {
      const ImageSet digits = cfg.digits == "synthetic" ? synthetic_digits() : load_idx(cfg.digits);
      auto d = generate_mnist(cfg.scenario, digits, cfg.n, rng);
      states = std::move(d.states);
      manifest["labels"] = d.labels;
      manifest["sources"] = d.sources;
      manifest["digits"] = cfg.digits;
      break;
    }
  }
  Staged staged(out);
  write_dataset(staged.path(), states, manifest);
  staged.commit();
  std::cout << "wrote " << states.size() << " snapshots to " << out << "\n";
  return 0;
}

Checkpoint annotated(const TrainableModel& model, const RunConfig& cfg, const std::string& which) {
  Checkpoint ck = checkpoint_of(model);
  ck.meta["parameters"] = which;
  ck.meta["seed"] = cfg.seed;
  ck.meta["neighborhood"] = std::string(to_string(cfg.scenario.neighborhood.kind()));
  return ck;
}

int cmd_fit(const Common& c, const std::string& data_dir, const std::string& out, std::optional<std::int64_t> steps,
            int progress) {
  std::vector<std::string> extra;
  if (steps) extra.push_back("train.steps=" + std::to_string(*steps));
  const RunConfig cfg = resolve(c, extra);
  const Dataset data = read_dataset(data_dir);
  if (data.states.empty()) throw std::runtime_error("dataset " + data_dir + " is empty");

  Rng root = root_rng(cfg);
  Rng init_rng = root.substream(2), train_rng = root.substream(3);
  auto model = build_model(cfg, data.states, init_rng);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainObserver observer = [&](const TraceRow& row) {
    if (progress > 0 && row.step % progress == 0) {
      std::cerr << "step " << row.step << " loss " << row.loss << " pos " << row.mean_pos << " neg " << row.mean_neg
                << "\n";
    }
  };
  TrainResult result = pcd_train(data.states, *model, cfg.train, train_rng, observer);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Staged staged(out);
  fs::create_directories(staged.path());
  save_checkpoint(staged.path() / "model_raw.ncpt", annotated(*model, cfg, "final"));
  std::string which = "final";
  if (cfg.train.ewa_alpha > 0.0) {
    model->set_parameters(result.ewa_params);
    which = "ewa";
  }
  save_checkpoint(staged.path() / "model.ncpt", annotated(*model, cfg, which));
  std::ostringstream trace;
  result.trace.write_csv(trace);
  write_text(staged.path() / "trace.csv", trace.str());
  json summary{{"steps", cfg.train.steps}, {"seed", cfg.seed}, {"seconds", seconds}, {"model_parameters", which}};
  for (const auto& [name, value] : model->scalar_summary()) summary["scalars"][name] = value;
  write_text(staged.path() / "summary.json", summary.dump(2) + "\n");
  staged.commit();
  std::cout << "trained " << cfg.train.steps << " steps in " << std::fixed << std::setprecision(1) << seconds
            << " s; wrote " << out << "\n";
  return 0;
}

int cmd_sample(const Common& c, const std::string& checkpoint, const std::string& data_dir, const std::string& out,
               std::optional<double> sweeps, std::optional<int> chains) {
  std::vector<std::string> extra;
  if (sweeps) {
    std::ostringstream s;
    s << std::setprecision(17) << *sweeps;
    extra.push_back("sample.sweeps=" + s.str());
  }
  if (chains) extra.push_back("sample.chains=" + std::to_string(*chains));
  const RunConfig cfg = resolve(c, extra);
  const auto model = model_from_checkpoint(load_checkpoint(checkpoint));

  std::vector<LatticeState> starts;
  Rng root = root_rng(cfg).substream(4);
  if (cfg.sample.start_from_data) {
    if (data_dir.empty()) throw std::runtime_error("sampling from data starts needs --data (or [sample] start = scatter)");
    starts = read_dataset(data_dir).states;
    if (starts.empty()) throw std::runtime_error("dataset " + data_dir + " is empty");
  }
  const SamplerConfig sc{cfg.sample.temperature, cfg.sample.parallel_flips, cfg.scenario.neighborhood, false};
  sc.validate();

  std::vector<LatticeState> snapshots;
  json chain_of = json::array(), index_in_chain = json::array();
  for (int b = 0; b < cfg.sample.chains; ++b) {
    Rng rng = root.substream(static_cast<std::uint64_t>(b));
    LatticeState x0 = cfg.sample.start_from_data ? starts[static_cast<std::size_t>(b) % starts.size()]
                                                 : init_scatter(cfg.scenario, rng);
    auto traj = run_chain(cfg.sample.kernel, *model, std::move(x0), cfg.sample.sweeps, sc, rng, cfg.sample.snapshot_every);
    for (std::size_t k = 0; k < traj.size(); ++k) {
      chain_of.push_back(b);
      index_in_chain.push_back(k);
      snapshots.push_back(std::move(traj[k]));
    }
  }
  json manifest{{"kind", "samples"},
                {"seed", cfg.seed},
                {"checkpoint", checkpoint},
                {"kernel", std::string(to_string(cfg.sample.kernel))},
                {"sweeps", cfg.sample.sweeps},
                {"temperature", cfg.sample.temperature},
                {"snapshot_every", cfg.sample.snapshot_every},
                {"chain", chain_of},
                {"snapshot", index_in_chain}};
  Staged staged(out);
  write_dataset(staged.path(), snapshots, manifest);
  staged.commit();
  std::cout << "wrote " << snapshots.size() << " snapshots from " << cfg.sample.chains << " chains to " << out << "\n";
  return 0;
}

// Last snapshot of every chain when the manifest records chains.
std::vector<LatticeState> final_states(const Dataset& d) {
  if (!d.manifest.contains("chain")) return d.states;
  std::vector<LatticeState> out;
  const auto& chain = d.manifest["chain"];
  for (std::size_t i = 0; i < d.states.size(); ++i)
    if (i + 1 == d.states.size() || chain[i + 1] != chain[i]) out.push_back(d.states[i]);
  return out;
}

std::string canonical_name(int a, int b) { return "J" + std::to_string(a) + std::to_string(b); }

int cmd_evaluate(const Common& c, const std::string& mode, const std::string& checkpoint, const std::string& samples_dir,
                 const std::string& data_dir, const std::string& out) {
  const RunConfig cfg = resolve(c);
  std::vector<std::pair<std::string, double>> rows;
  auto need = [](const std::string& v, const char* flag) {
    if (v.empty()) throw std::runtime_error(std::string("this mode needs ") + flag);
  };

  if (mode == "param-rmse") {
    need(checkpoint, "--checkpoint");
    const auto model = model_from_checkpoint(load_checkpoint(checkpoint));
    const AnalyticParams* learned = nullptr;
    if (const auto* a = dynamic_cast<const AnalyticModel*>(model.get())) learned = &a->params();
    if (const auto* cl = dynamic_cast<const ClosureModel*>(model.get())) learned = &cl->analytic().params();
    if (!learned) throw std::runtime_error("param-rmse needs an analytic or closure checkpoint");
    if (learned->contact.rows() != cfg.scenario.params.contact.rows())
      throw std::runtime_error("checkpoint and scenario disagree on the number of cell types");
    const Eigen::VectorXd lv = canonical_vector(*learned), tv = canonical_vector(cfg.scenario.params);
    const auto fit = fit_optimal_temperature(lv, tv);
    rows.push_back({"t_star", fit.temperature});
    rows.push_back({"rmse_t1", param_rmse(lv, tv, TemperatureMode::T1)});
    rows.push_back({"rmse_t_star", fit.rmse});
    const auto pairs = learnable_contact_pairs(static_cast<int>(learned->contact.rows()));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto name = canonical_name(pairs[k].first, pairs[k].second);
      rows.push_back({"learned." + name, lv[static_cast<Eigen::Index>(k)]});
      rows.push_back({"truth." + name, tv[static_cast<Eigen::Index>(k)]});
    }
    rows.push_back({"learned.lambda", lv[lv.size() - 1]});
    rows.push_back({"truth.lambda", tv[tv.size() - 1]});
  } else if (mode == "bio" || mode == "axial" || mode == "cs") {
    need(samples_dir, "--samples");
    need(data_dir, "--data");
    const auto samples = final_states(read_dataset(samples_dir));
    const Dataset data = read_dataset(data_dir);
    rows.push_back({"n_samples", static_cast<double>(samples.size())});
    if (mode == "bio") {
      const auto bounds = VolumeBounds::measure(data.states);
      const auto bio = biological_indicators(samples, bounds, cfg.scenario.neighborhood, cfg.eval.max_fragmented);
      rows.push_back({"p_volume", bio.p_volume});
      rows.push_back({"p_unfragmented", bio.p_unfragmented});
      rows.push_back({"v_min", bounds.v_min});
      rows.push_back({"v_max", bounds.v_max});
      rows.push_back({"v_mean", bounds.v_mean});
    } else if (mode == "axial") {
      const Eigen::Vector4d s = mean_axial_statistics(samples, cfg.eval.polar_type);
      const Eigen::Vector4d r = mean_axial_statistics(data.states, cfg.eval.polar_type);
      rows.push_back({"axial_rmse", axial_rmse(samples, data.states, cfg.eval.polar_type)});
      const char* names[] = {"type1_along", "type1_across", "type2_along", "type2_across"};
      for (int i = 0; i < 4; ++i) {
        rows.push_back({std::string("samples.") + names[i], s[i]});
        rows.push_back({std::string("data.") + names[i], r[i]});
      }
    } else {
      if (!data.manifest.contains("labels")) throw std::runtime_error("cs needs a labelled dataset (cellular-mnist)");
      const auto labels = data.manifest["labels"].get<std::vector<int>>();
      int classes = 0;
      for (int l : labels) classes = std::max(classes, l + 1);
      if (classes < 1) throw std::runtime_error("dataset labels are missing");
      TypeId type = 1;
      if (cfg.scenario.params.potential)
        for (std::size_t t = 0; t < cfg.scenario.params.potential->coupling.size(); ++t)
          if (cfg.scenario.params.potential->coupling[t] != 0.0) type = static_cast<TypeId>(t);
      NearestCentroidClassifier clf(type);
      clf.fit(data.states, labels, classes);
      auto score = [&](const std::vector<LatticeState>& states) {
        std::vector<Eigen::VectorXd> p;
        for (const auto& s : states) p.push_back(clf.predict_proba(s));
        return classifier_score(p);
      };
      rows.push_back({"cs_samples", score(samples)});
      rows.push_back({"cs_data", score(data.states)});
    }
  } else {
    throw std::runtime_error("unknown mode '" + mode + "' (param-rmse, bio, axial, cs)");
  }

  std::ostringstream csv;
  csv << "# columns: metric = name of the quantity, value = its value\n";
  if (mode == "axial")
    csv << "# axial_rmse = sqrt(mean over the four stats of (samples - data)^2); each stat is the dataset mean of the\n"
           "# variance of a type's pixel coordinates along / across the principal axis of the polar-type pixels\n";
  csv << "metric,value\n" << std::setprecision(17);
  for (const auto& [k, v] : rows) csv << k << "," << v << "\n";
  Staged staged(out);
  write_text(staged.path(), csv.str());
  staged.commit();
  std::cout << csv.str().substr(csv.str().find('\n') + 1);
  return 0;
}

int cmd_render(const std::string& input, const std::string& out, int scale, bool boundaries) {
  if (scale < 1) throw std::runtime_error("--scale must be at least 1");
  std::vector<std::pair<std::string, LatticeState>> items;
  if (fs::is_directory(input)) {
    const Dataset d = read_dataset(input);
    const auto& files = d.manifest["files"];
    for (std::size_t i = 0; i < d.states.size(); ++i)
      items.emplace_back(fs::path(files[i].get<std::string>()).stem().string(), d.states[i]);
  } else {
    items.emplace_back(fs::path(input).stem().string(), load_snapshot(input));
  }
  Staged staged(out);
  fs::create_directories(staged.path());
  for (const auto& [name, state] : items) {
    const auto bytes = render_ppm(state, default_palette(static_cast<int>(state.num_types())), boundaries, scale);
    write_text(staged.path() / (name + ".ppm"), std::string(bytes.begin(), bytes.end()));
  }
  staged.commit();
  std::cout << "rendered " << items.size() << " images to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cellular Potts simulation with analytic and neural Hamiltonians"};
  app.require_subcommand(1);

  Common gen_c, fit_c, sample_c, eval_c;
  std::string gen_out, fit_data, fit_out, sample_ckpt, sample_data, sample_out, eval_mode, eval_ckpt, eval_samples,
      eval_data, eval_out, render_in, render_out;
  std::optional<int> gen_n, sample_chains;
  std::optional<std::int64_t> fit_steps;
  std::optional<double> sample_sweeps;
  int progress = 0, render_scale = 4;
  bool render_boundaries = false;

  auto* gen = app.add_subcommand("generate", "synthesise a dataset of equilibrated snapshots");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--n", gen_n, "number of snapshots (overrides [run] n)");

  auto* fit = app.add_subcommand("fit", "train a model on a dataset with contrastive divergence");
  add_common(fit, fit_c);
  fit->add_option("--data", fit_data, "dataset directory")->required();
  fit->add_option("--out", fit_out, "output directory for checkpoints and the trace")->required();
  fit->add_option("--steps", fit_steps, "optimiser steps (overrides [train] steps)");
  fit->add_option("--progress", progress, "print a progress line every N steps");

  auto* sample = app.add_subcommand("sample", "run chains under a trained model");
  add_common(sample, sample_c);
  sample->add_option("--checkpoint", sample_ckpt, "model checkpoint")->required();
  sample->add_option("--data", sample_data, "dataset providing the chain starts");
  sample->add_option("--out", sample_out, "output directory for trajectory snapshots")->required();
  sample->add_option("--sweeps", sample_sweeps, "Monte Carlo sweeps per chain (overrides [sample] sweeps)");
  sample->add_option("--chains", sample_chains, "number of chains (overrides [sample] chains)");

  auto* eval = app.add_subcommand("evaluate", "compute metrics and write them as CSV");
  add_common(eval, eval_c);
  eval->add_option("--mode", eval_mode, "param-rmse | bio | axial | cs")->required();
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint (param-rmse)");
  eval->add_option("--samples", eval_samples, "sampled dataset (bio, axial, cs)");
  eval->add_option("--data", eval_data, "reference dataset (bio, axial, cs)");
  eval->add_option("--out", eval_out, "metrics CSV file")->required();

  auto* render = app.add_subcommand("render", "draw snapshots as PPM images");
  render->add_option("--input", render_in, "snapshot file or dataset directory")->required();
  render->add_option("--out", render_out, "output directory")->required();
  render->add_option("--scale", render_scale, "pixels per lattice site");
  render->add_flag("--boundaries", render_boundaries, "darken sites on cell boundaries");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_c, gen_out, gen_n);
    if (fit->parsed()) return cmd_fit(fit_c, fit_data, fit_out, fit_steps, progress);
    if (sample->parsed()) return cmd_sample(sample_c, sample_ckpt, sample_data, sample_out, sample_sweeps, sample_chains);
    if (eval->parsed()) return cmd_evaluate(eval_c, eval_mode, eval_ckpt, eval_samples, eval_data, eval_out);
    if (render->parsed()) return cmd_render(render_in, render_out, render_scale, render_boundaries);
  } catch (const ConfigErrors& e) {
    std::cerr << "ncpm: invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ncpm: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
