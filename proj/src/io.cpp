#include "ncpm/io.hpp"

#include "ncpm/analytic.hpp"

#include <bit>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace ncpm {
namespace fs = std::filesystem;

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

template <typename Fail>
std::uint32_t get_u32(std::istream& in, Fail&& fail) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail();
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

template <typename Fail>
std::uint64_t get_u64(std::istream& in, Fail&& fail) {
  const std::uint64_t lo = get_u32(in, fail);
  return lo | (std::uint64_t{get_u32(in, fail)} << 32);
}

constexpr char kSnapshotMagic[4] = {'N', 'C', 'P', 'M'};
constexpr char kCheckpointMagic[4] = {'N', 'C', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// snapshots

void write_snapshot(std::ostream& out, const LatticeState& state) {
  out.write(kSnapshotMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(state.width()));
  put_u32(out, static_cast<std::uint32_t>(state.height()));
  put_u32(out, static_cast<std::uint32_t>(state.num_cells()));
  put_u32(out, state.num_types());
  for (int s = 0; s < state.size(); ++s) put_u32(out, state[s]);
  for (CellId c = 0; c < state.num_cells(); ++c) {
    put_u32(out, c);
    put_u32(out, state.type_of(c));
  }
}

LatticeState read_snapshot(std::istream& in) {
  auto truncated = [] { throw SnapshotError(SnapshotError::Kind::Truncated, "snapshot is truncated"); };
  char magic[4];
  if (!in.read(magic, 4)) truncated();
  if (!std::equal(magic, magic + 4, kSnapshotMagic)) throw SnapshotError(SnapshotError::Kind::BadMagic, "bad magic");
  const std::uint32_t version = get_u32(in, truncated);
  if (version != kVersion)
    throw SnapshotError(SnapshotError::Kind::VersionMismatch,
                        "snapshot version " + std::to_string(version) + " is not supported (expected 1)");
  const std::uint32_t width = get_u32(in, truncated), height = get_u32(in, truncated);
  const std::uint32_t num_cells = get_u32(in, truncated), num_types = get_u32(in, truncated);
  if (num_cells == 0) throw SnapshotError(SnapshotError::Kind::Invalid, "snapshot registers no cells (medium missing)");
  if (std::uint64_t{width} * height > (std::uint64_t{1} << 31))
    throw SnapshotError(SnapshotError::Kind::Invalid, "snapshot lattice is too large");

  LatticeState state(static_cast<int>(width), static_cast<int>(height));
  for (int s = 0; s < state.size(); ++s) state[s] = get_u32(in, truncated);
  std::vector<TypeId> types(num_cells);
  for (std::uint32_t i = 0; i < num_cells; ++i) {
    const std::uint32_t cell = get_u32(in, truncated), type = get_u32(in, truncated);
    if (cell != i) throw SnapshotError(SnapshotError::Kind::Invalid, "snapshot cell table is not in id order");
    types[i] = type;
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw SnapshotError(SnapshotError::Kind::Invalid, "trailing bytes after snapshot footer");
  state.cell_types() = std::move(types);
  try {
    state.validate();
  } catch (const ConfigError& e) {
    throw SnapshotError(SnapshotError::Kind::Invalid, std::string("invalid snapshot: ") + e.what());
  }
  if (state.num_types() > num_types)
    throw SnapshotError(SnapshotError::Kind::Invalid, "snapshot uses more types than its header declares");
  return state;
}

void save_snapshot(const fs::path& path, const LatticeState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_snapshot(out, state);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

LatticeState load_snapshot(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_snapshot(in);
}

// ---------------------------------------------------------------------------
// datasets

void write_dataset(const fs::path& dir, const std::vector<LatticeState>& states, nlohmann::json manifest) {
  fs::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".ncpm";
    save_snapshot(dir / name.str(), states[i]);
    files.push_back(name.str());
  }
  manifest["count"] = states.size();
  manifest["files"] = files;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing manifest in " + dir.string());
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  Dataset d;
  try {
    d.manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  if (!d.manifest.contains("files") || !d.manifest["files"].is_array())
    throw std::runtime_error("manifest in " + dir.string() + " has no file list");
  for (const auto& f : d.manifest["files"]) d.states.push_back(load_snapshot(dir / f.get<std::string>()));
  return d;
}

// ---------------------------------------------------------------------------
// checkpoints

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kCheckpointMagic, 4);
  put_u32(out, kVersion);
  const std::string meta = ckpt.meta.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (Index d : t.value.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.value.size(); ++i) put_f64(out, t.value[i]);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  auto truncated = [] { throw CheckpointError("checkpoint is truncated"); };
  char magic[4];
  if (!in.read(magic, 4)) truncated();
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) throw CheckpointError("bad checkpoint magic");
  if (get_u32(in, truncated) != kVersion) throw CheckpointError("unsupported checkpoint version");
  Checkpoint ckpt;
  std::string meta(get_u32(in, truncated), '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta.size()))) truncated();
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const std::uint32_t count = get_u32(in, truncated);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name.resize(get_u32(in, truncated));
    if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) truncated();
    const std::uint32_t rank = get_u32(in, truncated);
    if (rank > 8) throw CheckpointError("tensor '" + t.name + "' has implausible rank");
    Tensor::Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(get_u64(in, truncated));
    t.value = Tensor(shape);
    for (Index i = 0; i < t.value.size(); ++i) t.value[i] = std::bit_cast<double>(get_u64(in, truncated));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, ckpt);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

nlohmann::json architecture_to_json(const NHArchitecture& a) {
  return {{"num_types", a.num_types},           {"embed_kernel", a.embed_kernel},
          {"embed_channels", a.embed_channels}, {"hidden_dims", a.hidden_dims},
          {"pool_rates", a.pool_rates},         {"head_channels", a.head_channels},
          {"include_medium", a.include_medium}};
}

NHArchitecture architecture_from_json(const nlohmann::json& j) {
  NHArchitecture a;
  try {
    a.num_types = j.at("num_types").get<int>();
    a.embed_kernel = j.at("embed_kernel").get<int>();
    a.embed_channels = j.at("embed_channels").get<int>();
    a.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    a.pool_rates = j.at("pool_rates").get<std::vector<int>>();
    a.head_channels = j.at("head_channels").get<int>();
    a.include_medium = j.at("include_medium").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad architecture description: ") + e.what());
  }
  a.validate();
  return a;
}

namespace {

Tensor vector_tensor(const std::vector<double>& v) {
  Tensor t({static_cast<Index>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<Index>(i)] = v[i];
  return t;
}

Tensor matrix_tensor(const Eigen::MatrixXd& m) {
  Tensor t({m.rows(), m.cols()});
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) t(r, c) = m(r, c);
  return t;
}

Eigen::MatrixXd tensor_matrix(const Tensor& t) {
  if (t.rank() != 2) throw CheckpointError("expected a matrix tensor");
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = t(r, c);
  return m;
}

std::vector<double> tensor_vector(const Tensor& t) { return {t.data(), t.data() + t.size()}; }

void add_analytic(Checkpoint& ck, const AnalyticModel& m) {
  const AnalyticParams& p = m.params();
  ck.meta["neighborhood"] = std::string(to_string(m.neighborhood().kind()));
  ck.meta["learn_coupling"] = m.learns_coupling();
  ck.tensors.push_back({"analytic.contact", matrix_tensor(p.contact)});
  ck.tensors.push_back({"analytic.volume", vector_tensor({p.volume.lambda, p.volume.target})});
  if (!p.volume.per_cell.empty()) ck.tensors.push_back({"analytic.target_per_cell", vector_tensor(p.volume.per_cell)});
  if (p.potential) {
    ck.tensors.push_back({"analytic.coupling", vector_tensor(p.potential->coupling)});
    ck.tensors.push_back({"analytic.phi", matrix_tensor(p.potential->phi.matrix())});
  }
}

AnalyticModel read_analytic(const Checkpoint& ck) {
  AnalyticParams p;
  p.contact = tensor_matrix(ck.get("analytic.contact"));
  const auto vol = tensor_vector(ck.get("analytic.volume"));
  if (vol.size() != 2) throw CheckpointError("analytic.volume must hold lambda and target");
  p.volume.lambda = vol[0];
  p.volume.target = vol[1];
  if (ck.has("analytic.target_per_cell")) p.volume.per_cell = tensor_vector(ck.get("analytic.target_per_cell"));
  if (ck.has("analytic.coupling"))
    p.potential = ExternalPotential{tensor_matrix(ck.get("analytic.phi")).array(),
                                    tensor_vector(ck.get("analytic.coupling"))};
  const Neighborhood nb = parse_neighborhood(ck.meta.value("neighborhood", std::string("moore8")));
  return AnalyticModel(std::move(p), nb, ck.meta.value("learn_coupling", false));
}

void add_neural(Checkpoint& ck, const NeuralModel& m) {
  ck.meta["architecture"] = architecture_to_json(m.params().arch);
  m.params().visit([&](const std::string& name, const Tensor& t) { ck.tensors.push_back({"nh." + name, t}); });
}

NeuralModel read_neural(const Checkpoint& ck) {
  if (!ck.meta.contains("architecture")) throw CheckpointError("checkpoint has no architecture description");
  NHParams p = NHParams::zeros(architecture_from_json(ck.meta["architecture"]));
  p.visit([&](const std::string& name, Tensor& t) {
    const Tensor& src = ck.get("nh." + name);
    if (src.shape() != t.shape()) throw CheckpointError("tensor nh." + name + " has shape " + src.shape_string());
    t = src;
  });
  return NeuralModel(std::move(p));
}

}  // namespace

Checkpoint checkpoint_of(const TrainableModel& model) {
  Checkpoint ck;
  if (const auto* a = dynamic_cast<const AnalyticModel*>(&model)) {
    ck.meta["model"] = "analytic";
    add_analytic(ck, *a);
  } else if (const auto* n = dynamic_cast<const NeuralModel*>(&model)) {
    ck.meta["model"] = "neural";
    add_neural(ck, *n);
  } else if (const auto* c = dynamic_cast<const ClosureModel*>(&model)) {
    ck.meta["model"] = "closure";
    ck.tensors.push_back({"closure.weights", vector_tensor({c->w_s(), c->w_nn()})});
    add_analytic(ck, c->analytic());
    add_neural(ck, c->neural());
  } else {
    throw CheckpointError("unsupported model type");
  }
  return ck;
}

std::unique_ptr<TrainableModel> model_from_checkpoint(const Checkpoint& ck) {
  const std::string kind = ck.meta.value("model", std::string());
  if (kind == "analytic") return std::make_unique<AnalyticModel>(read_analytic(ck));
  if (kind == "neural") return std::make_unique<NeuralModel>(read_neural(ck));
  if (kind == "closure") {
    const auto w = tensor_vector(ck.get("closure.weights"));
    if (w.size() != 2) throw CheckpointError("closure.weights must hold two values");
    return std::make_unique<ClosureModel>(read_analytic(ck), read_neural(ck), w[0], w[1]);
  }
  throw CheckpointError("checkpoint names unknown model kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// rendering

std::vector<Rgb> default_palette(int num_types) {
  static const Rgb base[] = {{245, 245, 240}, {230, 159, 0},  {86, 180, 233}, {0, 158, 115},
                             {213, 94, 0},    {204, 121, 167}, {240, 228, 66}, {0, 114, 178}};
  std::vector<Rgb> p;
  for (int t = 0; t < num_types; ++t) p.push_back(base[t % 8]);
  return p;
}

std::vector<std::uint8_t> render_ppm(const LatticeState& state, const std::vector<Rgb>& palette, bool boundaries,
                                     int scale) {
  if (scale < 1) throw ConfigError("render scale must be at least 1");
  if (palette.size() < state.num_types())
    throw ConfigError("palette has " + std::to_string(palette.size()) + " colours but the state uses " +
                      std::to_string(state.num_types()) + " types");
  const int w = state.width() * scale, h = state.height() * scale;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(w) * h * 3);
  const Neighborhood vn(NeighborhoodKind::VonNeumann4);
  std::vector<Rgb> colour(static_cast<std::size_t>(state.size()));
  for (int s = 0; s < state.size(); ++s) {
    Rgb c = palette[state.type_at(s)];
    if (boundaries) {
      bool edge = false;
      state.for_each_neighbor(s, vn, [&](int n) { edge |= state[n] != state[s]; });
      if (edge)
        for (auto& ch : c) ch = static_cast<std::uint8_t>(ch * 3 / 5);
    }
    colour[static_cast<std::size_t>(s)] = c;
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Rgb& c = colour[static_cast<std::size_t>(state.site_of(y / scale, x / scale))];
      out.insert(out.end(), c.begin(), c.end());
    }
  return out;
}

}  // namespace ncpm
