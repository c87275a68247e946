#pragma once

// Dense tensors and the handful of differentiable kernels the neural
// Hamiltonian is built from. Every forward kernel has a matching *_backward
// that returns exact vector-Jacobian products; there is no autodiff graph.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ncpm {

using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
class TensorT {
 public:
  using Shape = std::vector<Index>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  TensorT() = default;
  explicit TensorT(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Vector::Constant(count(shape_), fill)) {}
  TensorT(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    if (static_cast<Index>(values.size()) != count(shape_))
      throw ShapeError("tensor initializer length does not match shape");
    data_.resize(count(shape_));
    std::copy(values.begin(), values.end(), data_.data());
  }

  static Index count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  template <typename... I>
  Scalar& operator()(I... idx) { return data_[offset(idx...)]; }
  template <typename... I>
  Scalar operator()(I... idx) const { return data_[offset(idx...)]; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  void reshape(Shape shape) {
    if (count(shape) != data_.size()) throw ShapeError("reshape changes element count");
    shape_ = std::move(shape);
  }

  void set_zero() { data_.setZero(); }

  bool all_finite() const { return data_.allFinite(); }

  TensorT& operator+=(const TensorT& other) {
    require_same_shape(other);
    data_ += other.data_;
    return *this;
  }

  void require_same_shape(const TensorT& other) const {
    if (shape_ != other.shape_) throw ShapeError("tensor shape mismatch");
  }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + "]";
  }

 private:
  template <typename... I>
  Index offset(I... idx) const {
    const Index indices[] = {static_cast<Index>(idx)...};
    Index off = 0;
    for (std::size_t a = 0; a < sizeof...(I); ++a) off = off * shape_[a] + indices[a];
    return off;
  }

  Shape shape_;
  Vector data_;
};

using Tensor = TensorT<double>;

enum class Padding { Periodic, Zero };

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  Index batch, in_channels, height, width;
  Index out_channels, kernel, stride, pad;
  Index out_height, out_width;
  // Source row/column for each (kernel offset, output position); -1 marks zero padding.
  std::vector<Index> rows, cols;
};

template <typename Scalar>
ConvGeometry conv_geometry(const TensorT<Scalar>& input, const TensorT<Scalar>& weight, Index stride,
                           Padding padding) {
  if (input.rank() != 4) throw ShapeError("conv2d input must be [N,C,H,W], got " + input.shape_string());
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
    throw ShapeError("conv2d weight must be [Cout,Cin,k,k], got " + weight.shape_string());
  if (weight.dim(1) != input.dim(1)) throw ShapeError("conv2d channel mismatch");
  if (stride < 1) throw ShapeError("conv2d stride must be positive");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
                 stride, 0, 0, 0, {}, {}};
  if ((g.kernel - stride) % 2 != 0 || g.kernel < stride)
    throw ShapeError("conv2d kernel/stride combination has no centred padding");
  if (g.height % stride != 0 || g.width % stride != 0)
    throw ShapeError("conv2d spatial extent not divisible by stride");
  g.pad = (g.kernel - stride) / 2;
  g.out_height = g.height / stride;
  g.out_width = g.width / stride;
  auto table = [&](Index extent, Index out_extent) {
    std::vector<Index> t(static_cast<std::size_t>(g.kernel * out_extent));
    for (Index k = 0; k < g.kernel; ++k)
      for (Index o = 0; o < out_extent; ++o) {
        Index src = o * stride + k - g.pad;
        if (padding == Padding::Periodic)
          src = ((src % extent) + extent) % extent;
        else if (src < 0 || src >= extent)
          src = -1;
        t[static_cast<std::size_t>(k * out_extent + o)] = src;
      }
    return t;
  };
  g.rows = table(g.height, g.out_height);
  g.cols = table(g.width, g.out_width);
  return g;
}

// Column block of `col` for one image; col has in_channels*k*k rows and
// `ld` columns, of which this image fills [first, first + out pixels).
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, Scalar* col, Index ld, Index first) {
  const Index k = g.kernel;
  for (Index c = 0; c < g.in_channels; ++c) {
    const Scalar* plane = image + c * g.height * g.width;
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* dst = col + ((c * k + ky) * k + kx) * ld + first;
        const Index* rows = g.rows.data() + ky * g.out_height;
        const Index* cols = g.cols.data() + kx * g.out_width;
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const Index sy = rows[oy];
          if (sy < 0) {
            std::fill(dst, dst + g.out_width, Scalar(0));
            dst += g.out_width;
            continue;
          }
          const Scalar* src = plane + sy * g.width;
          for (Index ox = 0; ox < g.out_width; ++ox) {
            const Index sx = cols[ox];
            *dst++ = sx < 0 ? Scalar(0) : src[sx];
          }
        }
      }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, Index ld, Index first, const ConvGeometry& g, Scalar* image) {
  const Index k = g.kernel;
  for (Index c = 0; c < g.in_channels; ++c) {
    Scalar* plane = image + c * g.height * g.width;
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* src = col + ((c * k + ky) * k + kx) * ld + first;
        const Index* rows = g.rows.data() + ky * g.out_height;
        const Index* cols = g.cols.data() + kx * g.out_width;
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const Index sy = rows[oy];
          if (sy < 0) {
            src += g.out_width;
            continue;
          }
          Scalar* dst = plane + sy * g.width;
          for (Index ox = 0; ox < g.out_width; ++ox, ++src) {
            const Index sx = cols[ox];
            if (sx >= 0) dst[sx] += *src;
          }
        }
      }
  }
}

// All images side by side: [in_channels*k*k, batch*out pixels].
template <typename Scalar>
void im2col_batch(const TensorT<Scalar>& input, const ConvGeometry& g, RowMatrix<Scalar>& col) {
  const Index pixels = g.out_height * g.out_width;
  col.resize(g.in_channels * g.kernel * g.kernel, g.batch * pixels);
  for (Index n = 0; n < g.batch; ++n)
    im2col(input.data() + n * g.in_channels * g.height * g.width, g, col.data(), col.cols(), n * pixels);
}

}  // namespace detail

/// 2-D cross-correlation over a batch: input [N,Cin,H,W], weight [Cout,Cin,k,k],
/// bias [Cout] (or empty). Output is [N,Cout,H/stride,W/stride]; padding is
/// (k - stride)/2 on each side, so k must be odd when stride is 1.
template <typename Scalar>
TensorT<Scalar> conv2d(const TensorT<Scalar>& input, const TensorT<Scalar>& weight, const TensorT<Scalar>& bias,
                       Index stride = 1, Padding padding = Padding::Periodic) {
  const auto g = detail::conv_geometry(input, weight, stride, padding);
  if (bias.size() != 0 && bias.size() != g.out_channels) throw ShapeError("conv2d bias length mismatch");
  TensorT<Scalar> out({g.batch, g.out_channels, g.out_height, g.out_width});
  const Index ckk = g.in_channels * g.kernel * g.kernel;
  const Index pixels = g.out_height * g.out_width;
  Eigen::Map<const detail::RowMatrix<Scalar>> w(weight.data(), g.out_channels, ckk);
  detail::RowMatrix<Scalar> col;
  detail::im2col_batch(input, g, col);
  const detail::RowMatrix<Scalar> o = w * col;
  for (Index n = 0; n < g.batch; ++n) {
    Eigen::Map<detail::RowMatrix<Scalar>> dst(out.data() + n * g.out_channels * pixels, g.out_channels, pixels);
    dst = o.middleCols(n * pixels, pixels);
    if (bias.size() != 0)
      dst.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.data(), g.out_channels);
  }
  return out;
}

/// Convenience overload for a single [C,H,W] image.
template <typename Scalar>
TensorT<Scalar> conv2d_image(const TensorT<Scalar>& image, const TensorT<Scalar>& weight,
                             const TensorT<Scalar>& bias, Index stride = 1, Padding padding = Padding::Periodic) {
  if (image.rank() != 3) throw ShapeError("conv2d_image expects [C,H,W]");
  TensorT<Scalar> batched = image;
  batched.reshape({1, image.dim(0), image.dim(1), image.dim(2)});
  auto out = conv2d(batched, weight, bias, stride, padding);
  out.reshape({out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

template <typename Scalar>
struct Conv2dGrads {
  TensorT<Scalar> input;  // empty when not requested
  TensorT<Scalar> weight;
  TensorT<Scalar> bias;
};

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const TensorT<Scalar>& input, const TensorT<Scalar>& weight,
                                    const TensorT<Scalar>& grad_output, Index stride = 1,
                                    Padding padding = Padding::Periodic, bool want_input = true) {
  const auto g = detail::conv_geometry(input, weight, stride, padding);
  if (grad_output.shape() != typename TensorT<Scalar>::Shape{g.batch, g.out_channels, g.out_height, g.out_width})
    throw ShapeError("conv2d_backward upstream shape mismatch");
  const Index ckk = g.in_channels * g.kernel * g.kernel;
  const Index pixels = g.out_height * g.out_width;
  Conv2dGrads<Scalar> grads{want_input ? TensorT<Scalar>(input.shape()) : TensorT<Scalar>(),
                            TensorT<Scalar>(weight.shape()), TensorT<Scalar>({g.out_channels})};
  Eigen::Map<const detail::RowMatrix<Scalar>> w(weight.data(), g.out_channels, ckk);
  Eigen::Map<detail::RowMatrix<Scalar>> gw(grads.weight.data(), g.out_channels, ckk);
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gb(grads.bias.data(), g.out_channels);
  detail::RowMatrix<Scalar> col, up(g.out_channels, g.batch * pixels);
  for (Index n = 0; n < g.batch; ++n)
    up.middleCols(n * pixels, pixels) = Eigen::Map<const detail::RowMatrix<Scalar>>(
        grad_output.data() + n * g.out_channels * pixels, g.out_channels, pixels);
  detail::im2col_batch(input, g, col);
  gw.noalias() = up * col.transpose();
  gb = up.rowwise().sum();
  if (want_input) {
    const detail::RowMatrix<Scalar> dcol = w.transpose() * up;
    for (Index n = 0; n < g.batch; ++n)
      detail::col2im_add(dcol.data(), dcol.cols(), n * pixels, g,
                         grads.input.data() + n * g.in_channels * g.height * g.width);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// elementwise and pooling primitives
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
}

template <typename Scalar>
TensorT<Scalar> silu(const TensorT<Scalar>& x) {
  TensorT<Scalar> y(x.shape());
  for (Index i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
  return y;
}

/// d silu / dx = s(x) (1 + x (1 - s(x))), evaluated at the pre-activation.
template <typename Scalar>
TensorT<Scalar> silu_backward(const TensorT<Scalar>& pre, const TensorT<Scalar>& grad_output) {
  pre.require_same_shape(grad_output);
  TensorT<Scalar> g(pre.shape());
  for (Index i = 0; i < pre.size(); ++i) {
    const Scalar s = sigmoid(pre[i]);
    g[i] = grad_output[i] * s * (Scalar(1) + pre[i] * (Scalar(1) - s));
  }
  return g;
}

template <typename Scalar>
struct MaxPoolResult {
  TensorT<Scalar> output;
  std::vector<Index> argmax;  // flat input index per output element
};

/// Non-overlapping max pooling over the last two axes. Ties resolve to the
/// first position in row-major window order.
template <typename Scalar>
MaxPoolResult<Scalar> maxpool2d(const TensorT<Scalar>& input, Index rate) {
  if (input.rank() < 2) throw ShapeError("maxpool2d needs at least two axes");
  const Index h = input.dim(input.rank() - 2), w = input.dim(input.rank() - 1);
  if (rate < 1 || h % rate != 0 || w % rate != 0) throw ShapeError("maxpool2d rate does not divide extent");
  auto shape = input.shape();
  shape[shape.size() - 2] = h / rate;
  shape[shape.size() - 1] = w / rate;
  MaxPoolResult<Scalar> r{TensorT<Scalar>(shape), {}};
  r.argmax.resize(static_cast<std::size_t>(r.output.size()));
  const Index planes = input.size() / (h * w);
  const Index oh = h / rate, ow = w / rate;
  Index o = 0;
  for (Index p = 0; p < planes; ++p) {
    const Index base = p * h * w;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox, ++o) {
        Index best = base + (oy * rate) * w + ox * rate;
        for (Index dy = 0; dy < rate; ++dy)
          for (Index dx = 0; dx < rate; ++dx) {
            const Index i = base + (oy * rate + dy) * w + ox * rate + dx;
            if (input[i] > input[best]) best = i;
          }
        r.output[o] = input[best];
        r.argmax[static_cast<std::size_t>(o)] = best;
      }
  }
  return r;
}

template <typename Scalar>
TensorT<Scalar> maxpool2d_backward(const typename TensorT<Scalar>::Shape& input_shape,
                                   const std::vector<Index>& argmax, const TensorT<Scalar>& grad_output) {
  if (static_cast<Index>(argmax.size()) != grad_output.size()) throw ShapeError("maxpool2d_backward tape mismatch");
  TensorT<Scalar> g(input_shape);
  for (Index o = 0; o < grad_output.size(); ++o) g[argmax[static_cast<std::size_t>(o)]] += grad_output[o];
  return g;
}

/// Sums over the listed axes; the reduced axes are removed from the shape.
/// Reducing every axis yields a shape-{1} tensor.
template <typename Scalar>
TensorT<Scalar> sum_pool(const TensorT<Scalar>& input, std::vector<Index> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (Index a : axes)
    if (a < 0 || a >= input.rank()) throw ShapeError("sum_pool axis out of range");
  typename TensorT<Scalar>::Shape out_shape;
  for (Index a = 0; a < input.rank(); ++a)
    if (!std::binary_search(axes.begin(), axes.end(), a)) out_shape.push_back(input.dim(a));
  if (out_shape.empty()) out_shape.push_back(1);
  TensorT<Scalar> out(out_shape);
  std::vector<Index> idx(static_cast<std::size_t>(input.rank()), 0);
  for (Index i = 0; i < input.size(); ++i) {
    Index o = 0;
    for (Index a = 0; a < input.rank(); ++a)
      if (!std::binary_search(axes.begin(), axes.end(), a)) o = o * input.dim(a) + idx[static_cast<std::size_t>(a)];
    out[o] += input[i];
    for (Index a = input.rank() - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < input.dim(a)) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  return out;
}

template <typename Scalar>
TensorT<Scalar> sum_pool_backward(const typename TensorT<Scalar>::Shape& input_shape, std::vector<Index> axes,
                                  const TensorT<Scalar>& grad_output) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  TensorT<Scalar> g(input_shape);
  const Index rank = static_cast<Index>(input_shape.size());
  std::vector<Index> idx(input_shape.size(), 0);
  for (Index i = 0; i < g.size(); ++i) {
    Index o = 0;
    for (Index a = 0; a < rank; ++a)
      if (!std::binary_search(axes.begin(), axes.end(), a)) o = o * input_shape[static_cast<std::size_t>(a)] + idx[static_cast<std::size_t>(a)];
    g[i] = grad_output[o];
    for (Index a = rank - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < input_shape[static_cast<std::size_t>(a)]) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  return g;
}

/// y = W x + b for x of shape [in] or [N,in]; W is [out,in].
template <typename Scalar>
TensorT<Scalar> linear(const TensorT<Scalar>& input, const TensorT<Scalar>& weight, const TensorT<Scalar>& bias) {
  if (weight.rank() != 2) throw ShapeError("linear weight must be [out,in]");
  const Index in = weight.dim(1), out = weight.dim(0);
  if (input.dim(input.rank() - 1) != in || input.rank() > 2) throw ShapeError("linear input width mismatch");
  if (bias.size() != 0 && bias.size() != out) throw ShapeError("linear bias length mismatch");
  const Index rows = input.rank() == 2 ? input.dim(0) : 1;
  TensorT<Scalar> y(input.rank() == 2 ? typename TensorT<Scalar>::Shape{rows, out} : typename TensorT<Scalar>::Shape{out});
  Eigen::Map<const detail::RowMatrix<Scalar>> x(input.data(), rows, in), w(weight.data(), out, in);
  Eigen::Map<detail::RowMatrix<Scalar>> ym(y.data(), rows, out);
  ym.noalias() = x * w.transpose();
  if (bias.size() != 0)
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.data(), out);
  return y;
}

template <typename Scalar>
struct LinearGrads {
  TensorT<Scalar> input;
  TensorT<Scalar> weight;
  TensorT<Scalar> bias;
};

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const TensorT<Scalar>& input, const TensorT<Scalar>& weight,
                                    const TensorT<Scalar>& grad_output) {
  const Index in = weight.dim(1), out = weight.dim(0);
  const Index rows = input.rank() == 2 ? input.dim(0) : 1;
  if (grad_output.size() != rows * out) throw ShapeError("linear_backward upstream shape mismatch");
  LinearGrads<Scalar> g{TensorT<Scalar>(input.shape()), TensorT<Scalar>(weight.shape()), TensorT<Scalar>({out})};
  Eigen::Map<const detail::RowMatrix<Scalar>> x(input.data(), rows, in), w(weight.data(), out, in),
      up(grad_output.data(), rows, out);
  Eigen::Map<detail::RowMatrix<Scalar>>(g.input.data(), rows, in).noalias() = up * w;
  Eigen::Map<detail::RowMatrix<Scalar>>(g.weight.data(), out, in).noalias() = up.transpose() * x;
  Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(g.bias.data(), out) = up.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

/// Largest |analytic - central difference| / max(1, |central difference|)
/// over all coordinates of `params`.
template <typename Scalar>
Scalar grad_check(const std::function<Scalar(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&)>& f,
                  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& analytic,
                  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> params, Scalar h) {
  if (analytic.size() != params.size()) throw ShapeError("grad_check gradient/parameter length mismatch");
  Scalar worst = 0;
  for (Index i = 0; i < params.size(); ++i) {
    const Scalar saved = params[i];
    params[i] = saved + h;
    const Scalar up = f(params);
    params[i] = saved - h;
    const Scalar down = f(params);
    params[i] = saved;
    const Scalar numeric = (up - down) / (Scalar(2) * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(Scalar(1), std::abs(numeric)));
  }
  return worst;
}

}  // namespace ncpm
