#include "ncpm/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

namespace ncpm {
namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t");
  const auto b = s.find_last_not_of(" \t");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

double to_double(const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError("'" + s + "' is not a finite number");
  return v;
}

std::int64_t to_int(const std::string& s) {
  const std::string t = trim(s);
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError("'" + s + "' is not an integer");
  return v;
}

bool to_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "no" || t == "0") return false;
  throw ConfigError("'" + s + "' is not a boolean (true/false)");
}

template <typename T, typename Conv>
std::vector<T> to_list(const std::string& s, Conv conv) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<T>(conv(item)));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

Eigen::MatrixXd contact_from_lower(const std::vector<double>& lower) {
  // n (n + 1) / 2 values, row by row: (0,0), (1,0), (1,1), (2,0), ...
  int n = 0;
  while (n * (n + 1) / 2 < static_cast<int>(lower.size())) ++n;
  if (n * (n + 1) / 2 != static_cast<int>(lower.size()))
    throw ConfigError("contact needs n(n+1)/2 lower-triangle values, got " + std::to_string(lower.size()));
  Eigen::MatrixXd j(n, n);
  int k = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) j(r, c) = j(c, r) = lower[k++];
  return j;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

// Keys applied before every other key of their section, because they reset
// the section to a preset.
const std::map<std::string, std::string> kPresetKeys = {{"scenario", "kind"}, {"model", "architecture"}};

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"run",
       {
           {"seed", [](RunConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int(v)); }},
           {"n", [](RunConfig& c, const std::string& v) { c.n = static_cast<int>(to_int(v)); }},
       }},
      {"scenario",
       {
           {"kind",
            [](RunConfig& c, const std::string& v) {
              const std::string k = trim(v);
              if (k == "cellsort-a") {
                c.scenario_kind = ScenarioKind::CellSort;
                c.scenario = ScenarioSpec::cellsort_a();
              } else if (k == "cellsort-b") {
                c.scenario_kind = ScenarioKind::CellSort;
                c.scenario = ScenarioSpec::cellsort_b();
              } else if (k == "cellular-mnist") {
                c.scenario_kind = ScenarioKind::Mnist;
                c.scenario = ScenarioSpec::cellular_mnist();
              } else if (k == "bipolar") {
                c.scenario_kind = ScenarioKind::Bipolar;
                c.scenario = ScenarioSpec::bipolar();
              } else {
                throw ConfigError("unknown scenario '" + k + "' (cellsort-a, cellsort-b, cellular-mnist, bipolar)");
              }
            }},
           {"width", [](RunConfig& c, const std::string& v) { c.scenario.width = static_cast<int>(to_int(v)); }},
           {"height", [](RunConfig& c, const std::string& v) { c.scenario.height = static_cast<int>(to_int(v)); }},
           {"cells", [](RunConfig& c, const std::string& v) { c.scenario.type_counts = to_list<int>(v, to_int); }},
           {"contact",
            [](RunConfig& c, const std::string& v) {
              c.scenario.params.contact = contact_from_lower(to_list<double>(v, to_double));
            }},
           {"lambda", [](RunConfig& c, const std::string& v) { c.scenario.params.volume.lambda = to_double(v); }},
           {"target_volume",
            [](RunConfig& c, const std::string& v) { c.scenario.params.volume.target = to_double(v); }},
           {"coupling",
            [](RunConfig& c, const std::string& v) {
              if (!c.scenario.params.potential) c.scenario.params.potential = ExternalPotential{};
              c.scenario.params.potential->coupling = to_list<double>(v, to_double);
            }},
           {"temperature", [](RunConfig& c, const std::string& v) { c.scenario.temperature = to_double(v); }},
           {"radius", [](RunConfig& c, const std::string& v) { c.scenario.radius = to_double(v); }},
           {"sweeps", [](RunConfig& c, const std::string& v) { c.scenario.sweeps = to_double(v); }},
           {"neighborhood",
            [](RunConfig& c, const std::string& v) { c.scenario.neighborhood = parse_neighborhood(trim(v)); }},
           {"motion_strength", [](RunConfig& c, const std::string& v) { c.scenario.motion_strength = to_double(v); }},
           {"polar_type",
            [](RunConfig& c, const std::string& v) { c.scenario.polar_type = static_cast<TypeId>(to_int(v)); }},
           {"allow_vanishing", [](RunConfig& c, const std::string& v) { c.scenario.allow_vanishing = to_bool(v); }},
           {"digits", [](RunConfig& c, const std::string& v) { c.digits = trim(v); }},
       }},
      {"model",
       {
           {"kind",
            [](RunConfig& c, const std::string& v) {
              const std::string k = trim(v);
              if (k == "analytic") c.model.kind = ModelKind::Analytic;
              else if (k == "neural") c.model.kind = ModelKind::Neural;
              else if (k == "closure") c.model.kind = ModelKind::Closure;
              else throw ConfigError("unknown model kind '" + k + "' (analytic, neural, closure)");
            }},
           {"architecture",
            [](RunConfig& c, const std::string& v) {
              const std::string k = trim(v);
              if (k == "cellular-mnist") c.model.arch = NHArchitecture::cellular_mnist();
              else if (k == "bipolar") c.model.arch = NHArchitecture::bipolar();
              else throw ConfigError("unknown architecture '" + k + "' (cellular-mnist, bipolar)");
            }},
           {"embed_kernel", [](RunConfig& c, const std::string& v) { c.model.arch.embed_kernel = static_cast<int>(to_int(v)); }},
           {"embed_channels",
            [](RunConfig& c, const std::string& v) { c.model.arch.embed_channels = static_cast<int>(to_int(v)); }},
           {"hidden_dims", [](RunConfig& c, const std::string& v) { c.model.arch.hidden_dims = to_list<int>(v, to_int); }},
           {"pool_rates", [](RunConfig& c, const std::string& v) { c.model.arch.pool_rates = to_list<int>(v, to_int); }},
           {"head_channels",
            [](RunConfig& c, const std::string& v) { c.model.arch.head_channels = static_cast<int>(to_int(v)); }},
           {"include_medium", [](RunConfig& c, const std::string& v) { c.model.arch.include_medium = to_bool(v); }},
           {"init_lambda",
            [](RunConfig& c, const std::string& v) { c.model.init_lambda = trim(v) == "auto" ? 0.0 : to_double(v); }},
           {"output_init",
            [](RunConfig& c, const std::string& v) {
              const std::string k = trim(v);
              if (k == "zero") c.model.output_init = OutputInit::Zero;
              else if (k == "he") c.model.output_init = OutputInit::HeNormal;
              else throw ConfigError("output_init must be zero or he");
            }},
           {"w_s", [](RunConfig& c, const std::string& v) { c.model.w_s = to_double(v); }},
           {"w_nn", [](RunConfig& c, const std::string& v) { c.model.w_nn = to_double(v); }},
       }},
      {"train",
       {
           {"batch", [](RunConfig& c, const std::string& v) { c.train.batch = static_cast<int>(to_int(v)); }},
           {"steps", [](RunConfig& c, const std::string& v) { c.train.steps = to_int(v); }},
           {"mc_sweeps", [](RunConfig& c, const std::string& v) { c.train.mc_sweeps = to_double(v); }},
           {"parallel_flips",
            [](RunConfig& c, const std::string& v) { c.train.parallel_flips = static_cast<int>(to_int(v)); }},
           {"reset_prob", [](RunConfig& c, const std::string& v) { c.train.reset_prob = to_double(v); }},
           {"reg", [](RunConfig& c, const std::string& v) { c.train.reg = to_double(v); }},
           {"ewa_alpha", [](RunConfig& c, const std::string& v) { c.train.ewa_alpha = to_double(v); }},
           {"lr", [](RunConfig& c, const std::string& v) { c.train.adam.lr = to_double(v); }},
           {"beta1", [](RunConfig& c, const std::string& v) { c.train.adam.beta1 = to_double(v); }},
           {"beta2", [](RunConfig& c, const std::string& v) { c.train.adam.beta2 = to_double(v); }},
           {"eps", [](RunConfig& c, const std::string& v) { c.train.adam.eps = to_double(v); }},
           {"temperature", [](RunConfig& c, const std::string& v) { c.train.temperature = to_double(v); }},
           {"sequential_merge", [](RunConfig& c, const std::string& v) { c.train.sequential_merge = to_bool(v); }},
           {"permute_types_on_reset",
            [](RunConfig& c, const std::string& v) { c.train.permute_types_on_reset = to_bool(v); }},
           {"augment_dihedral", [](RunConfig& c, const std::string& v) { c.train.augment_dihedral = to_bool(v); }},
           {"divergence_bound", [](RunConfig& c, const std::string& v) { c.train.divergence_bound = to_double(v); }},
           {"divergence_patience",
            [](RunConfig& c, const std::string& v) { c.train.divergence_patience = static_cast<int>(to_int(v)); }},
       }},
      {"sample",
       {
           {"kernel", [](RunConfig& c, const std::string& v) { c.sample.kernel = parse_kernel(trim(v)); }},
           {"sweeps", [](RunConfig& c, const std::string& v) { c.sample.sweeps = to_double(v); }},
           {"parallel_flips",
            [](RunConfig& c, const std::string& v) { c.sample.parallel_flips = static_cast<int>(to_int(v)); }},
           {"temperature", [](RunConfig& c, const std::string& v) { c.sample.temperature = to_double(v); }},
           {"snapshot_every", [](RunConfig& c, const std::string& v) { c.sample.snapshot_every = to_int(v); }},
           {"chains", [](RunConfig& c, const std::string& v) { c.sample.chains = static_cast<int>(to_int(v)); }},
           {"start",
            [](RunConfig& c, const std::string& v) {
              const std::string k = trim(v);
              if (k == "data") c.sample.start_from_data = true;
              else if (k == "scatter") c.sample.start_from_data = false;
              else throw ConfigError("start must be data or scatter");
            }},
       }},
      {"evaluate",
       {
           {"max_fragmented",
            [](RunConfig& c, const std::string& v) { c.eval.max_fragmented = static_cast<int>(to_int(v)); }},
           {"polar_type", [](RunConfig& c, const std::string& v) { c.eval.polar_type = static_cast<TypeId>(to_int(v)); }},
       }},
  };
  return table;
}

RunConfig apply_tree(const pt::ptree& tree) {
  std::vector<std::string> problems;
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (section == "profile") continue;
    if (body.empty() && !body.data().empty()) {
      problems.push_back("key '" + section + "' must appear inside a [section]");
      continue;
    }
    const auto sec = table.find(section);
    if (sec == table.end()) {
      problems.push_back("unknown section [" + section + "]");
      continue;
    }
    auto apply = [&](const std::string& key, const std::string& value) {
      const auto it = sec->second.find(key);
      if (it == sec->second.end()) {
        problems.push_back("unknown key [" + section + "] " + key);
        return;
      }
      try {
        it->second(cfg, value);
      } catch (const std::exception& e) {
        problems.push_back("[" + section + "] " + key + ": " + e.what());
      }
    };
    const auto preset = kPresetKeys.find(section);
    if (preset != kPresetKeys.end())
      if (const auto v = body.get_optional<std::string>(preset->second)) apply(preset->second, *v);
    for (const auto& [key, value] : body) {
      if (preset != kPresetKeys.end() && key == preset->second) continue;
      apply(key, value.data());
    }
  }
  if (!problems.empty()) throw ConfigErrors(problems);
  auto more = validate_config(cfg);
  if (!more.empty()) throw ConfigErrors(more);
  return cfg;
}

pt::ptree read_tree(const fs::path& path, const fs::path& profile_dir, int depth) {
  if (depth > 8) throw ConfigErrors({"profile base chain is too deep (cycle?)"});
  if (!fs::exists(path)) throw ConfigErrors({"config file not found: " + path.string()});
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigErrors({std::string("cannot parse ") + path.string() + ": " + e.what()});
  }
  const auto base = tree.get_optional<std::string>("profile.base");
  if (!base) return tree;
  for (const auto& [key, value] : tree.get_child("profile"))
    if (key != "base") throw ConfigErrors({"unknown key [profile] " + key});
  const fs::path dir = profile_dir.empty() ? path.parent_path() : profile_dir;
  pt::ptree merged = read_tree(dir / (*base + ".ini"), profile_dir, depth + 1);
  for (const auto& [section, body] : tree) {
    if (section == "profile") continue;
    for (const auto& [key, value] : body) merged.put(pt::ptree::path_type(section + "." + key, '.'), value.data());
  }
  return merged;
}

}  // namespace

ConfigErrors::ConfigErrors(std::vector<std::string> problems)
    : std::runtime_error(join(problems, "; ")), problems_(std::move(problems)) {}

RunConfig load_config(const fs::path& path, const fs::path& profile_dir) {
  return apply_tree(read_tree(path, profile_dir, 0));
}

RunConfig load_config(const fs::path& path, const fs::path& profile_dir, const std::vector<std::string>& overrides) {
  pt::ptree tree = path.empty() ? pt::ptree() : read_tree(path, profile_dir, 0);
  std::vector<std::string> problems;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const std::string key = trim(o.substr(0, eq));
    if (eq == std::string::npos || key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.') {
      problems.push_back("override '" + o + "' is not section.key=value");
      continue;
    }
    tree.put(key, trim(o.substr(eq + 1)));
  }
  if (!problems.empty()) throw ConfigErrors(problems);
  return apply_tree(tree);
}

RunConfig load_profile(const std::string& name, const fs::path& profile_dir) {
  return load_config(profile_dir / (name + ".ini"), profile_dir);
}

RunConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigErrors({std::string("cannot parse config: ") + e.what()});
  }
  if (tree.get_child_optional("profile")) throw ConfigErrors({"[profile] base needs a file path to resolve against"});
  return apply_tree(tree);
}

int scenario_num_types(const RunConfig& cfg) { return static_cast<int>(cfg.scenario.type_counts.size()) + 1; }

std::vector<std::string> validate_config(const RunConfig& cfg) {
  std::vector<std::string> problems;
  auto check = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(std::string(what) + ": " + e.what());
    }
  };
  for (const auto& p : cfg.scenario.problems()) problems.push_back("[scenario] " + p);
  for (const auto& p : cfg.train.problems()) problems.push_back("[train] " + p);
  if (cfg.n < 1) problems.push_back("[run] n must be at least 1");
  if (cfg.sample.sweeps < 0.0) problems.push_back("[sample] sweeps must be non-negative");
  if (cfg.sample.parallel_flips < 1) problems.push_back("[sample] parallel_flips must be at least 1");
  if (!(cfg.sample.temperature > 0.0)) problems.push_back("[sample] temperature must be positive");
  if (cfg.sample.chains < 1) problems.push_back("[sample] chains must be at least 1");
  if (cfg.eval.max_fragmented < 0) problems.push_back("[evaluate] max_fragmented must be non-negative");
  if (cfg.model.init_lambda < 0.0) problems.push_back("[model] init_lambda must be positive or auto");
  if (cfg.scenario.params.contact.rows() > scenario_num_types(cfg))
    problems.push_back("[scenario] contact table covers " + std::to_string(cfg.scenario.params.contact.rows()) +
                       " types but cells lists " + std::to_string(scenario_num_types(cfg) - 1) + " plus medium");
  if (cfg.scenario_kind == ScenarioKind::Mnist) {
    if (!cfg.scenario.params.potential) problems.push_back("[scenario] digit scenario needs a coupling");
    if (cfg.digits != "synthetic" && !fs::exists(cfg.digits))
      problems.push_back("[scenario] digits file not found: " + cfg.digits);
  }
  if (cfg.scenario_kind == ScenarioKind::Bipolar && cfg.scenario.polar_type >= static_cast<TypeId>(scenario_num_types(cfg)))
    problems.push_back("[scenario] polar_type is not one of the scenario's types");
  if (cfg.train.augment_dihedral && cfg.scenario.width != cfg.scenario.height)
    problems.push_back("[train] augment_dihedral needs a square lattice");
  if (cfg.model.kind != ModelKind::Analytic) {
    NHArchitecture arch = cfg.model.arch;
    arch.num_types = scenario_num_types(cfg);
    check("[model]", [&] { arch.validate(); });
    try {
      const int d = arch.downsampling();
      if (cfg.scenario.width % d != 0 || cfg.scenario.height % d != 0)
        problems.push_back("[model] lattice " + std::to_string(cfg.scenario.width) + "x" +
                           std::to_string(cfg.scenario.height) + " is not divisible by the network's downsampling " +
                           std::to_string(d));
    } catch (const std::exception&) {
    }
  }
  return problems;
}

std::unique_ptr<TrainableModel> build_model(const RunConfig& cfg, std::span<const LatticeState> data, Rng& rng) {
  const int types = scenario_num_types(cfg);
  AnalyticParams init;
  init.contact = Eigen::MatrixXd::Zero(types, types);
  const double lambda =
      cfg.model.init_lambda > 0.0 ? cfg.model.init_lambda : volume_lambda_estimate(data, cfg.train.temperature);
  init.volume = {lambda, mean_cell_volume(data), {}};
  NHArchitecture arch = cfg.model.arch;
  arch.num_types = types;
  switch (cfg.model.kind) {
    case ModelKind::Analytic: return std::make_unique<AnalyticModel>(init, cfg.scenario.neighborhood);
    case ModelKind::Neural:
      return std::make_unique<NeuralModel>(NHParams::initialize(arch, rng, cfg.model.output_init));
    case ModelKind::Closure:
      return std::make_unique<ClosureModel>(AnalyticModel(init, cfg.scenario.neighborhood),
                                            NeuralModel(NHParams::initialize(arch, rng, cfg.model.output_init)),
                                            cfg.model.w_s, cfg.model.w_nn);
  }
  throw ConfigError("unknown model kind");
}

}  // namespace ncpm
