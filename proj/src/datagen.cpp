#include "ncpm/datagen.hpp"

#include "ncpm/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace ncpm {

Eigen::MatrixXd ScenarioSpec::contact_table(const std::array<double, 6>& lower) {
  Eigen::MatrixXd j(3, 3);
  j << lower[0], lower[1], lower[3],  //
      lower[1], lower[2], lower[4],   //
      lower[3], lower[4], lower[5];
  return j;
}

int ScenarioSpec::total_cells() const {
  int n = 0;
  for (int c : type_counts) n += c;
  return n;
}

std::vector<std::string> ScenarioSpec::problems() const {
  std::vector<std::string> out;
  if (width < 1 || height < 1) out.push_back("lattice dimensions must be positive");
  if (type_counts.empty()) out.push_back("scenario needs at least one cell type");
  for (int c : type_counts)
    if (c < 1) {
      out.push_back("every cell type needs at least one cell");
      break;
    }
  if (params.contact.rows() < static_cast<Eigen::Index>(type_counts.size() + 1))
    out.push_back("contact table does not cover every cell type");
  if (!(temperature > 0.0)) out.push_back("temperature must be positive");
  if (!(radius > 0.0)) out.push_back("seeding radius must be positive");
  else if (2.0 * radius > std::min(width, height)) out.push_back("seeding circle does not fit the lattice");
  if (sweeps < 0.0) out.push_back("sweeps must be non-negative");
  if (params.volume.lambda < 0.0 || !(params.volume.target > 0.0)) out.push_back("invalid volume constraint");
  if (motion_strength < 0.0) out.push_back("motion strength must be non-negative");
  return out;
}

void ScenarioSpec::validate() const {
  const auto p = problems();
  if (!p.empty()) throw ConfigError(p.front());
}

ScenarioSpec ScenarioSpec::cellsort_a() {
  ScenarioSpec s;
  s.params.contact = contact_table({0.0, 0.5, 0.333333, 0.5, 0.2, 0.266667});
  s.params.volume = {0.1, 60.0, {}};
  return s;
}

ScenarioSpec ScenarioSpec::cellsort_b() {
  ScenarioSpec s;
  s.params.contact = contact_table({0.0, 2.5, 1.0, 1.0, 4.5, 1.0});
  s.params.volume = {0.5, 60.0, {}};
  return s;
}

ScenarioSpec ScenarioSpec::cellular_mnist() {
  ScenarioSpec s;
  s.width = s.height = 108;
  s.radius = 27.0;
  s.params.contact = contact_table({0.0, 6.0, 3.0, 6.0, 6.0, 3.0});
  s.params.volume = {0.974, 100.0, {}};
  s.params.potential = ExternalPotential{Eigen::ArrayXXd(), {0.0, 0.0, 10.0}};
  return s;
}

ScenarioSpec ScenarioSpec::bipolar() {
  ScenarioSpec s;
  s.width = s.height = 120;
  s.type_counts = {20, 20};
  s.radius = 30.0;
  s.temperature = 2.0;
  s.params.contact = contact_table({0.0, 16.0, 6.0, 16.0, 16.0, 6.0});
  s.params.volume = {1.0, 150.0, {}};
  s.motion_strength = 150.0;
  return s;
}

LatticeState init_scatter(const ScenarioSpec& spec, Rng& rng) {
  spec.validate();
  const double cr = (spec.height - 1) / 2.0, cc = (spec.width - 1) / 2.0;
  std::vector<int> inside;
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c)
      if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= spec.radius * spec.radius) inside.push_back(r * spec.width + c);
  const int n = spec.total_cells();
  if (n > static_cast<int>(inside.size()))
    throw ConfigError("seeding circle holds " + std::to_string(inside.size()) + " sites but " + std::to_string(n) +
                      " cells were requested");

  // partial Fisher-Yates: the first n entries become a uniform sample
  for (int i = 0; i < n; ++i) std::swap(inside[i], inside[i + rng.below(inside.size() - i)]);

  LatticeState state(spec.width, spec.height);
  int k = 0;
  for (std::size_t t = 0; t < spec.type_counts.size(); ++t)
    for (int i = 0; i < spec.type_counts[t]; ++i) state[inside[k++]] = state.add_cell(static_cast<TypeId>(t + 1));
  return state;
}

namespace {

// Infinite cost for taking the last site away from a cell.
class KeepCells final : public EnergyModel {
 public:
  explicit KeepCells(const EnergyModel& inner) : inner_(inner) {}
  double energy(const LatticeState& state) const override { return inner_.energy(state); }
  double delta(const LatticeState& state, const CellStats& stats, Flip flip) const override {
    const CellId from = state[flip.site];
    if (from != kMedium && stats.volume[from] == 1) return std::numeric_limits<double>::infinity();
    return inner_.delta(state, stats, flip);
  }

 private:
  const EnergyModel& inner_;
};

LatticeState equilibrate(LatticeState x0, const EnergyModel& model, const ScenarioSpec& spec, Rng& rng) {
  const SamplerConfig cfg{spec.temperature, 1, spec.neighborhood, false};
  Chain chain(std::move(x0));
  const std::int64_t steps = kernel_steps(Kernel::Metropolis, chain.state.size(), spec.sweeps, 1);
  const KeepCells guarded(model);
  const EnergyModel& m = spec.allow_vanishing ? model : guarded;
  for (std::int64_t t = 0; t < steps; ++t) metropolis_step(chain, m, cfg, rng);
  return std::move(chain.state);
}

}  // namespace

std::vector<LatticeState> generate_cellsort(const ScenarioSpec& spec, int n, const Rng& rng) {
  spec.validate();
  const AnalyticModel model(spec.params, spec.neighborhood);
  std::vector<LatticeState> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    Rng r = rng.substream(static_cast<std::uint64_t>(i));
    LatticeState x0 = init_scatter(spec, r);
    spec.params.validate(x0);
    out.push_back(equilibrate(std::move(x0), model, spec, r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("IDX header is truncated");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

ImageSet read_idx(std::istream& in) {
  const std::uint32_t magic = read_be32(in);
  if (magic != 2051) throw FormatError("bad IDX magic " + std::to_string(magic) + " (expected 2051)");
  const std::uint32_t n = read_be32(in), rows = read_be32(in), cols = read_be32(in);
  if (rows == 0 || cols == 0) throw FormatError("IDX image dimensions must be positive");
  ImageSet set;
  set.rows = static_cast<int>(rows);
  set.cols = static_cast<int>(cols);
  const std::size_t per = std::size_t{rows} * cols;
  set.images.resize(n);
  for (auto& img : set.images) {
    img.resize(per);
    if (!in.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(per)))
      throw FormatError("IDX payload is shorter than the header declares");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("IDX payload is longer than the header declares");
  return set;
}

ImageSet load_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file " + path.string());
  return read_idx(in);
}

void write_idx(std::ostream& out, const ImageSet& set) {
  write_be32(out, 2051);
  write_be32(out, static_cast<std::uint32_t>(set.images.size()));
  write_be32(out, static_cast<std::uint32_t>(set.rows));
  write_be32(out, static_cast<std::uint32_t>(set.cols));
  for (const auto& img : set.images) {
    if (img.size() != static_cast<std::size_t>(set.rows) * set.cols) throw FormatError("image size mismatch");
    out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
}

ImageSet synthetic_digits() {
  //   aaa
  //  f   b
  //   ggg
  //  e   c
  //   ddd
  struct Box {
    int r0, r1, c0, c1;
  };
  const Box seg[7] = {
      {4, 6, 7, 20},    // a
      {4, 13, 18, 20},  // b
      {13, 23, 18, 20}, // c
      {21, 23, 7, 20},  // d
      {13, 23, 7, 9},   // e
      {4, 13, 7, 9},    // f
      {12, 14, 7, 20},  // g
  };
  const char* lit[10] = {"abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"};
  ImageSet set;
  set.rows = set.cols = 28;
  for (int d = 0; d < 10; ++d) {
    std::vector<std::uint8_t> img(28 * 28, 0);
    for (const char* s = lit[d]; *s; ++s) {
      const Box& b = seg[*s - 'a'];
      for (int r = b.r0; r <= b.r1; ++r)
        for (int c = b.c0; c <= b.c1; ++c) img[r * 28 + c] = 255;
    }
    set.images.push_back(std::move(img));
    set.labels.push_back(d);
  }
  return set;
}

// ---------------------------------------------------------------------------
// distance transform and resampling

namespace {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), squared distances.
void squared_dt_1d(const double* f, double* d, int n, int stride, std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto meet = [&](int q, int p) {
    return ((f[q * stride] + double(q) * q) - (f[p * stride] + double(p) * p)) / (2.0 * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    double s = meet(q, v[k]);
    while (s <= z[k]) s = meet(q, v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q * stride] = diff * diff + f[v[k] * stride];
  }
}

}  // namespace

Eigen::ArrayXXd distance_transform(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& foreground) {
  if (!foreground.any()) throw ConfigError("distance transform needs at least one foreground pixel");
  const int rows = static_cast<int>(foreground.rows()), cols = static_cast<int>(foreground.cols());
  constexpr double kFar = 1e20;
  // row-major scratch so both passes index with explicit strides
  std::vector<double> f(static_cast<std::size_t>(rows) * cols), g(f.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) f[r * cols + c] = foreground(r, c) ? 0.0 : kFar;
  std::vector<int> v;
  std::vector<double> z;
  for (int r = 0; r < rows; ++r) squared_dt_1d(&f[r * cols], &g[r * cols], cols, 1, v, z);
  for (int c = 0; c < cols; ++c) squared_dt_1d(&g[c], &f[c], rows, cols, v, z);
  Eigen::ArrayXXd out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = std::sqrt(f[r * cols + c]);
  return out;
}

namespace {

double keys_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

// out = W * src along one axis; W is out_n x in_n.
Eigen::MatrixXd cubic_weights(int in_n, int out_n) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out_n, in_n);
  const double scale = static_cast<double>(in_n) / out_n;
  for (int o = 0; o < out_n; ++o) {
    const double x = (o + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(x));
    for (int k = base - 1; k <= base + 2; ++k) w(o, std::clamp(k, 0, in_n - 1)) += keys_weight(x - k);
  }
  return w;
}

}  // namespace

Eigen::ArrayXXd bicubic_resize(const Eigen::ArrayXXd& src, int out_rows, int out_cols) {
  if (out_rows < 1 || out_cols < 1 || src.size() == 0) throw ConfigError("bicubic_resize: empty input or output");
  const Eigen::MatrixXd wr = cubic_weights(static_cast<int>(src.rows()), out_rows);
  const Eigen::MatrixXd wc = cubic_weights(static_cast<int>(src.cols()), out_cols);
  return (wr * src.matrix() * wc.transpose()).array();
}

PotentialImage build_digit_potential(const std::vector<std::uint8_t>& image, int rows, int cols, int out_rows,
                                     int out_cols, double threshold) {
  if (image.size() != static_cast<std::size_t>(rows) * cols) throw ConfigError("image size does not match dims");
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> fg(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) fg(r, c) = image[r * cols + c] > threshold;
  if (!fg.any()) throw ConfigError("digit image has no foreground above the threshold");
  PotentialImage p;
  p.threshold = threshold;
  p.phi = bicubic_resize(distance_transform(fg), out_rows, out_cols).max(0.0);
  return p;
}

LabelledDataset generate_mnist(const ScenarioSpec& spec, const ImageSet& digits, int n, const Rng& rng) {
  spec.validate();
  if (digits.images.empty()) throw ConfigError("no digit images supplied");
  if (!spec.params.potential) throw ConfigError("scenario has no potential coupling");
  LabelledDataset out;
  for (int i = 0; i < n; ++i) {
    Rng r = rng.substream(static_cast<std::uint64_t>(i));
    const int src = static_cast<int>(r.below(digits.images.size()));
    AnalyticParams params = spec.params;
    params.potential->phi =
        build_digit_potential(digits.images[src], digits.rows, digits.cols, spec.height, spec.width).phi;
    LatticeState x0 = init_scatter(spec, r);
    params.validate(x0);
    const AnalyticModel model(params, spec.neighborhood);
    out.states.push_back(equilibrate(std::move(x0), model, spec, r));
    out.sources.push_back(src);
    out.labels.push_back(src < static_cast<int>(digits.labels.size()) ? digits.labels[src] : -1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// bi-polar aggregates

double DirectedMotionModel::centroid_gain(const LatticeState& state, const CellStats& stats, CellId cell, int site,
                                          int sign) const {
  if (cell == kMedium || cell >= direction_.size()) return 0.0;
  const auto& d = direction_[cell];
  if (d[0] == 0.0 && d[1] == 0.0) return 0.0;
  const double v = static_cast<double>(stats.volume[cell]);
  const double nv = v + sign;
  if (v <= 0.0 || nv <= 0.0) return 0.0;
  const double r = stats.row_sum[cell], c = stats.col_sum[cell];
  const double dr = (r + sign * state.row_of(site)) / nv - r / v;
  const double dc = (c + sign * state.col_of(site)) / nv - c / v;
  return dr * d[0] + dc * d[1];
}

double DirectedMotionModel::delta(const LatticeState& state, const CellStats& stats, Flip flip) const {
  const double base = base_.delta(state, stats, flip);
  const double gain = centroid_gain(state, stats, flip.new_cell, flip.site, +1) +
                      centroid_gain(state, stats, state[flip.site], flip.site, -1);
  return base - strength_ * gain;
}

std::vector<LatticeState> generate_bipolar(const ScenarioSpec& spec, int n, const Rng& rng) {
  spec.validate();
  std::vector<LatticeState> out;
  for (int i = 0; i < n; ++i) {
    Rng r = rng.substream(static_cast<std::uint64_t>(i));
    LatticeState x0 = init_scatter(spec, r);
    spec.params.validate(x0);
    std::vector<CellId> polar;
    for (CellId c = 1; c < x0.num_cells(); ++c)
      if (x0.type_of(c) == spec.polar_type) polar.push_back(c);
    if (polar.size() % 2 != 0) throw ConfigError("the polar cell type needs an even cell count");
    // Each cell heads for the nearer pole: the left half of the seeds by
    // column go left, the rest go right.
    std::vector<int> seed_col(x0.num_cells(), 0);
    for (int i = 0; i < x0.size(); ++i) seed_col[x0[i]] = x0.col_of(i);
    std::stable_sort(polar.begin(), polar.end(), [&](CellId a, CellId b) { return seed_col[a] < seed_col[b]; });
    std::vector<std::array<double, 2>> dir(x0.num_cells(), {0.0, 0.0});
    for (std::size_t k = 0; k < polar.size(); ++k) dir[polar[k]] = {0.0, k < polar.size() / 2 ? -1.0 : 1.0};
    const DirectedMotionModel model(spec.params, spec.neighborhood, std::move(dir), spec.motion_strength);
    out.push_back(equilibrate(std::move(x0), model, spec, r));
  }
  return out;
}

LatticeState dihedral_transform(const LatticeState& state, int k) {
  if (k < 0 || k >= 8) throw ConfigError("dihedral element must lie in [0, 8)");
  if (state.width() != state.height()) throw ConfigError("dihedral transforms need a square lattice");
  const int n = state.width();
  LatticeState out = state;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      int rr = r, cc = c;
      for (int q = 0; q < (k & 3); ++q) {
        const int t = rr;
        rr = n - 1 - cc;
        cc = t;
      }
      if (k >= 4) cc = n - 1 - cc;
      out.at(rr, cc) = state.at(r, c);
    }
  return out;
}

LatticeState augment_rotate(const LatticeState& state, Rng& rng) {
  return dihedral_transform(state, static_cast<int>(rng.below(8)));
}

double mean_cell_volume(std::span<const LatticeState> states) {
  double total = 0.0;
  std::int64_t cells = 0;
  for (const auto& s : states) {
    const auto v = cell_volumes(s);
    for (std::size_t c = 1; c < v.size(); ++c)
      if (v[c] > 0) {
        total += static_cast<double>(v[c]);
        ++cells;
      }
  }
  if (cells == 0) throw ConfigError("no cells to average over");
  return total / static_cast<double>(cells);
}

double volume_lambda_estimate(std::span<const LatticeState> states, double temperature) {
  const double mean = mean_cell_volume(states);
  double ss = 0.0;
  std::int64_t cells = 0;
  for (const auto& s : states) {
    const auto v = cell_volumes(s);
    for (std::size_t c = 1; c < v.size(); ++c)
      if (v[c] > 0) {
        ss += (static_cast<double>(v[c]) - mean) * (static_cast<double>(v[c]) - mean);
        ++cells;
      }
  }
  const double var = ss / static_cast<double>(cells);
  if (!(var > 0.0)) throw ConfigError("cell volumes do not vary; cannot estimate a volume multiplier");
  return temperature / (2.0 * var);
}

}  // namespace ncpm
