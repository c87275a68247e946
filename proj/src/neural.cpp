#include "ncpm/neural.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace ncpm {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor he_normal(Tensor::Shape shape, Index fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

ConvParams make_conv(Index out, Index in, Index k, Rng* rng) {
  ConvParams p{Tensor({out, in, k, k}), Tensor({out})};
  if (rng) p.weight = he_normal({out, in, k, k}, in * k * k, *rng);
  return p;
}

LinearParams make_linear(Index out, Index in, Rng* rng) {
  LinearParams p{Tensor({out, in}), Tensor({out})};
  if (rng) p.weight = he_normal({out, in}, in, *rng);
  return p;
}

NHParams build(const NHArchitecture& arch, Rng* rng, OutputInit output) {
  arch.validate();
  NHParams p;
  p.arch = arch;
  p.embed = make_conv(arch.embed_channels, arch.num_types, arch.embed_kernel, rng);
  Index in = arch.embed_channels;
  for (std::size_t l = 0; l < arch.hidden_dims.size(); ++l) {
    const Index d = arch.hidden_dims[l];
    NHLayerParams layer;
    layer.phi1 = make_conv(d, in, 3, rng);
    layer.phi2 = make_conv(d, d, 3, rng);
    layer.psi1 = make_conv(d, in + d, 3, rng);
    layer.psi2 = make_conv(d, d, 3, rng);
    if (in != d) layer.proj = make_conv(d, in, 1, rng);
    layer.pool_rate = arch.pool_rates[l];
    p.layers.push_back(std::move(layer));
    in = d;
  }
  p.head = make_linear(arch.head_channels, in, rng);
  p.mlp1 = make_linear(arch.head_channels, arch.head_channels, rng);
  p.mlp2 = make_linear(arch.head_channels, arch.head_channels, rng);
  p.out = make_linear(1, arch.head_channels, output == OutputInit::HeNormal ? rng : nullptr);
  return p;
}

// weight[:, begin:end] of a [O, I, k, k] tensor
Tensor slice_in_channels(const Tensor& w, Index begin, Index end) {
  const Index out = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3);
  Tensor s({out, end - begin, w.dim(2), w.dim(3)});
  for (Index o = 0; o < out; ++o)
    std::copy(w.data() + (o * in + begin) * kk, w.data() + (o * in + end) * kk, s.data() + o * (end - begin) * kk);
  return s;
}

void add_in_channels(Tensor& w, Index begin, const Tensor& part) {
  const Index out = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3), n = part.dim(1);
  for (Index o = 0; o < out; ++o) {
    double* dst = w.data() + (o * in + begin) * kk;
    const double* src = part.data() + o * n * kk;
    for (Index i = 0; i < n * kk; ++i) dst[i] += src[i];
  }
}

// Sum over the cell axis of [N, C, h, w] -> [1, C, h, w].
Tensor sum_cells(const Tensor& x) {
  Tensor s({1, x.dim(1), x.dim(2), x.dim(3)});
  const Index per = x.size() / x.dim(0);
  for (Index n = 0; n < x.dim(0); ++n)
    s.vec() += x.vec().segment(n * per, per);
  return s;
}

void broadcast_add_cells(Tensor& x, const Tensor& shared) {
  const Index per = shared.size();
  for (Index n = 0; n < x.dim(0); ++n) x.vec().segment(n * per, per) += shared.vec();
}

Eigen::VectorXd silu_vec(const Eigen::VectorXd& x) {
  Eigen::VectorXd y(x.size());
  for (Index i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
  return y;
}

Eigen::VectorXd silu_grad_vec(const Eigen::VectorXd& pre, const Eigen::VectorXd& up) {
  Eigen::VectorXd g(pre.size());
  for (Index i = 0; i < pre.size(); ++i) {
    const double s = sigmoid(pre[i]);
    g[i] = up[i] * s * (1.0 + pre[i] * (1.0 - s));
  }
  return g;
}

Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) { return {t.data(), t.dim(0), t.size() / t.dim(0)}; }
Eigen::Map<RowMatrix> as_matrix(Tensor& t) { return {t.data(), t.dim(0), t.size() / t.dim(0)}; }
Eigen::Map<const Eigen::VectorXd> as_vector(const Tensor& t) { return {t.data(), t.size()}; }
Eigen::Map<Eigen::VectorXd> as_vector(Tensor& t) { return {t.data(), t.size()}; }

}  // namespace

// ---------------------------------------------------------------------------
// architecture and parameters
// ---------------------------------------------------------------------------

int NHArchitecture::downsampling() const {
  return std::accumulate(pool_rates.begin(), pool_rates.end(), embed_kernel, std::multiplies<>());
}

void NHArchitecture::validate() const {
  if (num_types < 2) throw ConfigError("network needs at least medium and one cell type");
  if (embed_kernel < 1 || embed_channels < 1 || head_channels < 1) throw ConfigError("network sizes must be positive");
  if (hidden_dims.empty()) throw ConfigError("network needs at least one NH layer");
  if (hidden_dims.size() != pool_rates.size()) throw ConfigError("hidden_dims and pool_rates differ in length");
  for (std::size_t i = 0; i < hidden_dims.size(); ++i)
    if (hidden_dims[i] < 1 || pool_rates[i] < 1) throw ConfigError("hidden dims and pool rates must be positive");
}

NHArchitecture NHArchitecture::cellular_mnist(int num_types) {
  return NHArchitecture{num_types, 3, 8, {8, 16, 32, 32}, {3, 2, 1, 1}, 32, true};
}

NHArchitecture NHArchitecture::bipolar(int num_types) {
  return NHArchitecture{num_types, 5, 16, {16, 32, 32, 64, 64, 64}, {2, 1, 2, 1, 2, 1}, 32, true};
}

NHParams NHParams::initialize(const NHArchitecture& arch, Rng& rng, OutputInit output) {
  return build(arch, &rng, output);
}

NHParams NHParams::zeros(const NHArchitecture& arch) { return build(arch, nullptr, OutputInit::Zero); }

Eigen::Index NHParams::parameter_count() const {
  Eigen::Index n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Eigen::VectorXd NHParams::flatten() const {
  Eigen::VectorXd theta(parameter_count());
  Eigen::Index at = 0;
  visit([&](const std::string&, const Tensor& t) {
    theta.segment(at, t.size()) = t.vec();
    at += t.size();
  });
  return theta;
}

void NHParams::unflatten(const Eigen::VectorXd& theta) {
  if (theta.size() != parameter_count()) throw ConfigError("neural parameter vector has the wrong length");
  Eigen::Index at = 0;
  visit([&](const std::string&, Tensor& t) {
    t.vec() = theta.segment(at, t.size());
    at += t.size();
  });
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

void check_compatible(const LatticeState& state, const NHArchitecture& arch) {
  const int f = arch.downsampling();
  if (state.width() % f != 0 || state.height() % f != 0)
    throw ConfigError("lattice " + std::to_string(state.width()) + "x" + std::to_string(state.height()) +
                      " is not divisible by the network downsampling factor " + std::to_string(f));
  if (static_cast<int>(state.num_types()) > arch.num_types)
    throw ConfigError("state uses " + std::to_string(state.num_types()) + " types but the network encodes " +
                      std::to_string(arch.num_types));
}

Tensor embed_cells(const LatticeState& state, const NHParams& params, NHTape* tape) {
  const auto& arch = params.arch;
  const int s = arch.embed_kernel;
  const Index c0 = arch.embed_channels, types = arch.num_types;
  const CellId first = arch.include_medium ? 0 : 1;
  const Index n = static_cast<Index>(state.num_cells()) - first;
  const int oh = state.height() / s, ow = state.width() / s;
  const Index pixels = Index{oh} * ow;

  Tensor out({n, c0, oh, ow});
  for (Index slot = 0; slot < n; ++slot)
    for (Index c = 0; c < c0; ++c) out.vec().segment((slot * c0 + c) * pixels, pixels).setConstant(params.embed.bias[c]);

  const Tensor& w = params.embed.weight;
  for (int r = 0; r < state.height(); ++r)
    for (int col = 0; col < state.width(); ++col) {
      const CellId cell = state.at(r, col);
      if (cell < first) continue;
      const Index slot = cell - first;
      const Index t = state.type_of(cell);
      const Index pix = Index{r / s} * ow + col / s;
      const Index koff = (t * s + r % s) * s + col % s;
      for (Index c = 0; c < c0; ++c) out[(slot * c0 + c) * pixels + pix] += w[c * types * s * s + koff];
    }

  if (tape) {
    tape->height = state.height();
    tape->width = state.width();
    tape->slot_type.resize(static_cast<std::size_t>(n));
    for (Index slot = 0; slot < n; ++slot) tape->slot_type[static_cast<std::size_t>(slot)] = state.type_of(static_cast<CellId>(slot + first));
    tape->site_slot.resize(static_cast<std::size_t>(state.size()));
    for (int site = 0; site < state.size(); ++site)
      tape->site_slot[static_cast<std::size_t>(site)] = state[site] < first ? -1 : static_cast<int>(state[site] - first);
  }
  return out;
}

Tensor nh_layer(const Tensor& hs, const NHLayerParams& layer, NHLayerTape* tape) {
  const Index cin = hs.dim(1);
  const Index d = layer.phi1.weight.dim(0);
  if (layer.phi1.weight.dim(1) != cin || layer.psi1.weight.dim(1) != cin + d)
    throw ShapeError("NH layer input has " + std::to_string(cin) + " channels, parameters disagree");

  Tensor phi_pre1 = conv2d(hs, layer.phi1.weight, layer.phi1.bias);
  Tensor phi_act1 = silu(phi_pre1);
  Tensor phi_pre2 = conv2d(phi_act1, layer.phi2.weight, layer.phi2.bias);
  Tensor hprime = silu(phi_pre2);
  Tensor context = sum_cells(hprime);

  // psi's first convolution over concat(h_c, A) splits into a per-cell part
  // and a part shared by every cell.
  Tensor psi_pre1 = conv2d(hs, slice_in_channels(layer.psi1.weight, 0, cin), layer.psi1.bias);
  broadcast_add_cells(psi_pre1, conv2d(context, slice_in_channels(layer.psi1.weight, cin, cin + d), Tensor()));
  Tensor psi_act1 = silu(psi_pre1);
  Tensor psi_pre2 = conv2d(psi_act1, layer.psi2.weight, layer.psi2.bias);
  Tensor pre_pool = silu(psi_pre2);
  if (layer.proj)
    pre_pool += conv2d(hs, layer.proj->weight, layer.proj->bias);
  else
    pre_pool += hs;

  Tensor out;
  std::vector<Index> argmax;
  if (layer.pool_rate > 1) {
    auto pooled = maxpool2d(pre_pool, layer.pool_rate);
    out = std::move(pooled.output);
    argmax = std::move(pooled.argmax);
  } else {
    out = pre_pool;
  }

  if (tape) {
    tape->input = hs;
    tape->phi_pre1 = std::move(phi_pre1);
    tape->phi_act1 = std::move(phi_act1);
    tape->phi_pre2 = std::move(phi_pre2);
    tape->hprime = std::move(hprime);
    tape->context = std::move(context);
    tape->psi_pre1 = std::move(psi_pre1);
    tape->psi_act1 = std::move(psi_act1);
    tape->psi_pre2 = std::move(psi_pre2);
    tape->pre_pool = std::move(pre_pool);
    tape->argmax = std::move(argmax);
  }
  return out;
}

double nh_energy(const LatticeState& state, const NHParams& params, NHTape* tape) {
  check_compatible(state, params.arch);
  Tensor h = embed_cells(state, params, tape);
  if (tape) tape->layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    h = nh_layer(h, params.layers[l], tape ? &tape->layers[l] : nullptr);

  // The head is pixel-wise linear, so pooling over cells and pixels commutes with it.
  const Index d = h.dim(1), pixels = h.dim(2) * h.dim(3);
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(d);
  for (Index n = 0; n < h.dim(0); ++n)
    pooled += Eigen::Map<const RowMatrix>(h.data() + n * d * pixels, d, pixels).rowwise().sum();
  const double count = static_cast<double>(h.dim(0) * pixels);

  Eigen::VectorXd z0 = as_matrix(params.head.weight) * pooled + count * as_vector(params.head.bias);
  Eigen::VectorXd pre1 = as_matrix(params.mlp1.weight) * z0 + as_vector(params.mlp1.bias);
  Eigen::VectorXd z1 = z0 + silu_vec(pre1);
  Eigen::VectorXd pre2 = as_matrix(params.mlp2.weight) * z1 + as_vector(params.mlp2.bias);
  Eigen::VectorXd z2 = z1 + silu_vec(pre2);
  const double energy = as_vector(params.out.weight).dot(z2) + params.out.bias[0];

  if (tape) {
    tape->final_features = std::move(h);
    tape->z0 = std::move(z0);
    tape->pre1 = std::move(pre1);
    tape->z1 = std::move(z1);
    tape->pre2 = std::move(pre2);
    tape->z2 = std::move(z2);
    tape->energy = energy;
  }
  return energy;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

Tensor nh_layer_backward(const NHLayerTape& tape, const NHLayerParams& layer, const Tensor& grad_output,
                         NHLayerParams& grads) {
  const Index cin = tape.input.dim(1);
  const Index d = layer.phi1.weight.dim(0);

  const Tensor d_pre_pool =
      layer.pool_rate > 1 ? maxpool2d_backward(tape.pre_pool.shape(), tape.argmax, grad_output) : grad_output;

  Tensor d_input(tape.input.shape());
  if (layer.proj) {
    auto g = conv2d_backward(tape.input, layer.proj->weight, d_pre_pool);
    grads.proj->weight += g.weight;
    grads.proj->bias += g.bias;
    d_input += g.input;
  } else {
    d_input += d_pre_pool;
  }

  // psi
  const Tensor d_psi_pre2 = silu_backward(tape.psi_pre2, d_pre_pool);
  auto g_psi2 = conv2d_backward(tape.psi_act1, layer.psi2.weight, d_psi_pre2);
  grads.psi2.weight += g_psi2.weight;
  grads.psi2.bias += g_psi2.bias;
  const Tensor d_psi_pre1 = silu_backward(tape.psi_pre1, g_psi2.input);

  auto g_psi1_h = conv2d_backward(tape.input, slice_in_channels(layer.psi1.weight, 0, cin), d_psi_pre1);
  add_in_channels(grads.psi1.weight, 0, g_psi1_h.weight);
  grads.psi1.bias += g_psi1_h.bias;
  d_input += g_psi1_h.input;

  auto g_psi1_a = conv2d_backward(tape.context, slice_in_channels(layer.psi1.weight, cin, cin + d), sum_cells(d_psi_pre1));
  add_in_channels(grads.psi1.weight, cin, g_psi1_a.weight);

  // A = sum_c h'_c, so every cell receives the full context gradient.
  Tensor d_hprime(tape.hprime.shape());
  broadcast_add_cells(d_hprime, g_psi1_a.input);

  // phi
  const Tensor d_phi_pre2 = silu_backward(tape.phi_pre2, d_hprime);
  auto g_phi2 = conv2d_backward(tape.phi_act1, layer.phi2.weight, d_phi_pre2);
  grads.phi2.weight += g_phi2.weight;
  grads.phi2.bias += g_phi2.bias;
  const Tensor d_phi_pre1 = silu_backward(tape.phi_pre1, g_phi2.input);
  auto g_phi1 = conv2d_backward(tape.input, layer.phi1.weight, d_phi_pre1);
  grads.phi1.weight += g_phi1.weight;
  grads.phi1.bias += g_phi1.bias;
  d_input += g_phi1.input;
  return d_input;
}

LayerGrads nh_param_gradient(const LatticeState& state, const NHParams& params, double* energy) {
  NHTape tape;
  const double h = nh_energy(state, params, &tape);
  if (energy) *energy = h;
  LayerGrads g = NHParams::zeros(params.arch);

  // MLP head, upstream dH/dH = 1
  const Eigen::VectorXd d_z2 = as_vector(params.out.weight);
  as_vector(g.out.weight) = tape.z2;
  g.out.bias[0] = 1.0;
  const Eigen::VectorXd d_pre2 = silu_grad_vec(tape.pre2, d_z2);
  as_matrix(g.mlp2.weight) = d_pre2 * tape.z1.transpose();
  as_vector(g.mlp2.bias) = d_pre2;
  const Eigen::VectorXd d_z1 = d_z2 + as_matrix(params.mlp2.weight).transpose() * d_pre2;
  const Eigen::VectorXd d_pre1 = silu_grad_vec(tape.pre1, d_z1);
  as_matrix(g.mlp1.weight) = d_pre1 * tape.z0.transpose();
  as_vector(g.mlp1.bias) = d_pre1;
  const Eigen::VectorXd d_z0 = d_z1 + as_matrix(params.mlp1.weight).transpose() * d_pre1;

  // head + global sum pooling
  const Tensor& feats = tape.final_features;
  const Index d = feats.dim(1), pixels = feats.dim(2) * feats.dim(3);
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(d);
  for (Index n = 0; n < feats.dim(0); ++n)
    pooled += Eigen::Map<const RowMatrix>(feats.data() + n * d * pixels, d, pixels).rowwise().sum();
  as_matrix(g.head.weight) = d_z0 * pooled.transpose();
  as_vector(g.head.bias) = static_cast<double>(feats.dim(0) * pixels) * d_z0;
  const Eigen::VectorXd d_feat = as_matrix(params.head.weight).transpose() * d_z0;
  Tensor grad(feats.shape());
  for (Index n = 0; n < feats.dim(0); ++n)
    Eigen::Map<RowMatrix>(grad.data() + n * d * pixels, d, pixels).colwise() = d_feat;

  for (std::size_t l = params.layers.size(); l-- > 0;)
    grad = nh_layer_backward(tape.layers[l], params.layers[l], grad, g.layers[l]);

  // embedding: scatter the per-pixel gradient back onto the weights each site touched
  const auto& arch = params.arch;
  const int s = arch.embed_kernel;
  const Index c0 = arch.embed_channels, types = arch.num_types;
  const int ow = tape.width / s;
  const Index epix = grad.dim(2) * grad.dim(3);
  for (Index slot = 0; slot < grad.dim(0); ++slot)
    for (Index c = 0; c < c0; ++c) g.embed.bias[c] += grad.vec().segment((slot * c0 + c) * epix, epix).sum();
  for (int r = 0; r < tape.height; ++r)
    for (int col = 0; col < tape.width; ++col) {
      const int slot = tape.site_slot[static_cast<std::size_t>(r * tape.width + col)];
      if (slot < 0) continue;
      const Index t = tape.slot_type[static_cast<std::size_t>(slot)];
      const Index pix = Index{r / s} * ow + col / s;
      const Index koff = (t * s + r % s) * s + col % s;
      for (Index c = 0; c < c0; ++c) g.embed.weight[c * types * s * s + koff] += grad[(slot * c0 + c) * epix + pix];
    }
  return g;
}

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------

void NeuralModel::deltas(const LatticeState& state, const CellStats&, std::span<const Flip> flips,
                         std::span<double> out) const {
  const double base = nh_energy(state, params_);
  LatticeState candidate = state;
  for (std::size_t i = 0; i < flips.size(); ++i) {
    const CellId old = candidate[flips[i].site];
    candidate[flips[i].site] = flips[i].new_cell;
    out[i] = nh_energy(candidate, params_) - base;
    candidate[flips[i].site] = old;
  }
}

double NeuralModel::energy_and_gradient(const LatticeState& state, Eigen::VectorXd& grad) const {
  double h = 0.0;
  grad = nh_param_gradient(state, params_, &h).flatten();
  return h;
}

double ClosureModel::energy(const LatticeState& state) const {
  return w_s_ * analytic_.energy(state) + w_nn_ * neural_.energy(state);
}

double closure_energy(const LatticeState& state, const ClosureModel& model) { return model.energy(state); }

double ClosureModel::delta(const LatticeState& state, const CellStats& stats, Flip flip) const {
  double nn = 0.0;
  neural_.deltas(state, stats, std::span<const Flip>(&flip, 1), std::span<double>(&nn, 1));
  return w_s_ * analytic_.delta(state, stats, flip) + w_nn_ * nn;
}

void ClosureModel::deltas(const LatticeState& state, const CellStats& stats, std::span<const Flip> flips,
                          std::span<double> out) const {
  if (w_nn_ != 0.0)
    neural_.deltas(state, stats, flips, out);
  else
    std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < flips.size(); ++i) out[i] = w_s_ * analytic_.delta(state, stats, flips[i]) + w_nn_ * out[i];
}

Eigen::VectorXd ClosureModel::parameters() const {
  const Eigen::VectorXd a = analytic_.parameters(), n = neural_.parameters();
  Eigen::VectorXd theta(2 + a.size() + n.size());
  theta << w_s_, w_nn_, a, n;
  return theta;
}

void ClosureModel::set_parameters(const Eigen::VectorXd& theta) {
  const Index na = analytic_.parameter_count();
  const Index nn = neural_.params().parameter_count();
  if (theta.size() != 2 + na + nn) throw ConfigError("closure parameter vector has the wrong length");
  w_s_ = theta[0];
  w_nn_ = theta[1];
  analytic_.set_parameters(theta.segment(2, na));
  neural_.set_parameters(theta.segment(2 + na, nn));
}

double ClosureModel::energy_and_gradient(const LatticeState& state, Eigen::VectorXd& grad) const {
  Eigen::VectorXd ga, gn;
  const double ha = analytic_.energy_and_gradient(state, ga);
  const double hn = neural_.energy_and_gradient(state, gn);
  grad.resize(2 + ga.size() + gn.size());
  grad << ha, hn, w_s_ * ga, w_nn_ * gn;
  return w_s_ * ha + w_nn_ * hn;
}

std::vector<std::pair<std::string, double>> ClosureModel::scalar_summary() const {
  std::vector<std::pair<std::string, double>> out{{"w_s", w_s_}, {"w_nn", w_nn_}};
  for (auto& kv : analytic_.scalar_summary()) out.push_back(kv);
  return out;
}

}  // namespace ncpm
