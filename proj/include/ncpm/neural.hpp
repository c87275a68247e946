#pragma once

#include "ncpm/analytic.hpp"
#include "ncpm/energy_model.hpp"
#include "ncpm/lattice.hpp"
#include "ncpm/random.hpp"
#include "ncpm/tensor.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace ncpm {

/// Shape of a Neural Hamiltonian. The embedding is a kernel == stride
/// convolution applied to each cell's occupancy plane, placed in the input
/// channel of the cell's type so same-type cells share embedding weights.
struct NHArchitecture {
  int num_types = 3;  ///< input channels, medium included
  int embed_kernel = 3;
  int embed_channels = 8;
  std::vector<int> hidden_dims{8, 16, 32, 32};
  std::vector<int> pool_rates{3, 2, 1, 1};
  int head_channels = 32;  ///< also the MLP width
  bool include_medium = true;

  /// embed stride times the product of all pool rates
  int downsampling() const;
  void validate() const;

  static NHArchitecture cellular_mnist(int num_types = 3);
  static NHArchitecture bipolar(int num_types = 3);
};

struct ConvParams {
  Tensor weight;  ///< [out, in, k, k]
  Tensor bias;    ///< [out]
};

struct LinearParams {
  Tensor weight;  ///< [out, in]
  Tensor bias;    ///< [out]
};

/// phi: per-cell network, psi: cell-interaction network over concat(h_c, A).
struct NHLayerParams {
  ConvParams phi1, phi2;
  ConvParams psi1, psi2;  ///< psi1 weight is [D, Cin + D, 3, 3]; h_c channels first
  std::optional<ConvParams> proj;  ///< 1x1 residual projection when Cin != D
  int pool_rate = 1;
};

enum class OutputInit { Zero, HeNormal };

/// All learnable tensors of a Neural Hamiltonian. Gradients use the same
/// layout (see LayerGrads), so the flat ordering of visit() is shared.
struct NHParams {
  NHArchitecture arch;
  ConvParams embed;
  std::vector<NHLayerParams> layers;
  LinearParams head;  ///< pixel-wise 1x1 convolution to head_channels
  LinearParams mlp1, mlp2;
  LinearParams out;

  /// He-normal weights (fan-in), zero biases. With OutputInit::Zero the final
  /// linear layer starts at zero so an untrained network contributes no energy.
  static NHParams initialize(const NHArchitecture& arch, Rng& rng, OutputInit output = OutputInit::Zero);
  /// Same layout, every tensor zero.
  static NHParams zeros(const NHArchitecture& arch);

  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

  Eigen::Index parameter_count() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& theta);

 private:
  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn& fn) {
    auto conv = [&](const std::string& name, auto& p) {
      fn(name + ".weight", p.weight);
      fn(name + ".bias", p.bias);
    };
    conv("embed", self.embed);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string prefix = "layers." + std::to_string(l);
      conv(prefix + ".phi.0", layer.phi1);
      conv(prefix + ".phi.1", layer.phi2);
      conv(prefix + ".psi.0", layer.psi1);
      conv(prefix + ".psi.1", layer.psi2);
      if (layer.proj) conv(prefix + ".proj", *layer.proj);
    }
    conv("head", self.head);
    conv("mlp.0", self.mlp1);
    conv("mlp.1", self.mlp2);
    conv("out", self.out);
  }
};

/// Parameter gradients, keyed by the same paths as NHParams.
using LayerGrads = NHParams;

struct NHLayerTape {
  Tensor input;
  Tensor phi_pre1, phi_act1, phi_pre2, hprime;
  Tensor context;  ///< A, shape [1, D, h, w]
  Tensor psi_pre1, psi_act1, psi_pre2;
  Tensor pre_pool;
  std::vector<Index> argmax;
};

/// Everything the backward pass needs from a forward pass.
struct NHTape {
  std::vector<TypeId> slot_type;   ///< type of each cell slot
  std::vector<int> site_slot;      ///< slot of each site, -1 when not encoded
  int height = 0, width = 0;
  std::vector<NHLayerTape> layers;
  Tensor final_features;  ///< [N, D_last, h, w]
  Eigen::VectorXd z0, pre1, z1, pre2, z2;
  double energy = 0.0;
};

/// Per-cell embedding of the type-tagged one-hot planes: [N, C0, H/s, W/s].
/// Equivalent to conv2d with kernel == stride on the dense one-hot input.
Tensor embed_cells(const LatticeState& state, const NHParams& params, NHTape* tape = nullptr);

/// One NH layer: h'_c = phi(h_c), A = sum_c h'_c, o_c = psi(concat(h_c, A)),
/// output = maxpool(o_c + residual(h_c)).
Tensor nh_layer(const Tensor& hs, const NHLayerParams& layer, NHLayerTape* tape = nullptr);

/// Backward through nh_layer; accumulates parameter gradients into `grads`
/// and returns the gradient with respect to the layer input.
Tensor nh_layer_backward(const NHLayerTape& tape, const NHLayerParams& layer, const Tensor& grad_output,
                         NHLayerParams& grads);

/// Throws ConfigError when `state` cannot be fed to a network with `arch`.
void check_compatible(const LatticeState& state, const NHArchitecture& arch);

double nh_energy(const LatticeState& state, const NHParams& params, NHTape* tape = nullptr);

/// Exact reverse-mode gradient of nh_energy with respect to every parameter.
LayerGrads nh_param_gradient(const LatticeState& state, const NHParams& params, double* energy = nullptr);

/// Neural Hamiltonian behind the TrainableModel interface.
class NeuralModel final : public TrainableModel {
 public:
  explicit NeuralModel(NHParams params) : params_(std::move(params)) {}

  const NHParams& params() const { return params_; }
  NHParams& params() { return params_; }

  double energy(const LatticeState& state) const override { return nh_energy(state, params_); }
  void deltas(const LatticeState& state, const CellStats& stats, std::span<const Flip> flips,
              std::span<double> out) const override;

  Eigen::VectorXd parameters() const override { return params_.flatten(); }
  void set_parameters(const Eigen::VectorXd& theta) override { params_.unflatten(theta); }
  double energy_and_gradient(const LatticeState& state, Eigen::VectorXd& grad) const override;
  std::vector<std::pair<std::string, double>> scalar_summary() const override { return {}; }
  std::unique_ptr<TrainableModel> clone() const override { return std::make_unique<NeuralModel>(*this); }

 private:
  NHParams params_;
};

/// H = w_s * H_analytic + w_nn * H_neural.
///
/// Parameter layout: w_s, w_nn, analytic parameters, neural parameters.
class ClosureModel final : public TrainableModel {
 public:
  ClosureModel(AnalyticModel analytic, NeuralModel neural, double w_s = 1.0, double w_nn = 1.0)
      : analytic_(std::move(analytic)), neural_(std::move(neural)), w_s_(w_s), w_nn_(w_nn) {}

  const AnalyticModel& analytic() const { return analytic_; }
  const NeuralModel& neural() const { return neural_; }
  double w_s() const { return w_s_; }
  double w_nn() const { return w_nn_; }
  void set_weights(double w_s, double w_nn) {
    w_s_ = w_s;
    w_nn_ = w_nn;
  }

  double energy(const LatticeState& state) const override;
  double delta(const LatticeState& state, const CellStats& stats, Flip flip) const override;
  void deltas(const LatticeState& state, const CellStats& stats, std::span<const Flip> flips,
              std::span<double> out) const override;

  Eigen::VectorXd parameters() const override;
  void set_parameters(const Eigen::VectorXd& theta) override;
  double energy_and_gradient(const LatticeState& state, Eigen::VectorXd& grad) const override;
  std::vector<std::pair<std::string, double>> scalar_summary() const override;
  std::unique_ptr<TrainableModel> clone() const override { return std::make_unique<ClosureModel>(*this); }

 private:
  AnalyticModel analytic_;
  NeuralModel neural_;
  double w_s_, w_nn_;
};

/// w_s * analytic_total + w_nn * nh_energy.
double closure_energy(const LatticeState& state, const ClosureModel& model);

}  // namespace ncpm
