#include "doctest.h"
#include "ncpm/tensor.hpp"
#include "oracles.hpp"

using namespace ncpm;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b);
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

// Weighted sum of the output; its gradient with respect to the output is `probe`.
double dot(const Tensor& a, const Tensor& b) { return a.vec().dot(b.vec()); }

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("identity 1x1 kernel copies the input") {
    Rng rng(31);
    auto x = oracle::random_tensor({2, 1, 4, 5}, rng);
    Tensor w({1, 1, 1, 1}, 1.0);
    CHECK(max_abs_diff(conv2d(x, w, Tensor()), x) == 0.0);
  }

  TEST_CASE("all-ones 3x3 kernel counts wrapped window occupancy") {
    Tensor x({1, 1, 5, 5});
    x(0, 0, 0, 0) = 1.0;
    x(0, 0, 2, 3) = 1.0;
    Tensor w({1, 1, 3, 3}, 1.0);
    auto y = conv2d(x, w, Tensor());
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) {
        double count = 0.0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) count += x(0, 0, (r + dr + 5) % 5, (c + dc + 5) % 5);
        CHECK(y(0, 0, r, c) == count);
      }
  }

  TEST_CASE("conv2d matches the direct loop oracle") {
    Rng rng(32);
    struct Case {
      Index k, stride;
    };
    for (Case cs : {Case{1, 1}, Case{3, 1}, Case{5, 1}, Case{2, 2}, Case{3, 3}, Case{5, 5}, Case{4, 2}})
      for (Padding pad : {Padding::Periodic, Padding::Zero}) {
        const Index h = 6 * cs.stride, w = 3 * cs.stride;
        auto x = oracle::random_tensor({2, 3, h, w}, rng);
        auto wt = oracle::random_tensor({4, 3, cs.k, cs.k}, rng);
        auto b = oracle::random_tensor({4}, rng);
        CHECK(max_abs_diff(conv2d(x, wt, b, cs.stride, pad), oracle::naive_conv(x, wt, b, static_cast<int>(cs.stride), pad)) <= 1e-12);
      }
  }

  TEST_CASE("periodic conv commutes with cyclic shifts") {
    Rng rng(33);
    auto x = oracle::random_tensor({1, 2, 6, 7}, rng);
    auto wt = oracle::random_tensor({3, 2, 3, 3}, rng);
    auto b = oracle::random_tensor({3}, rng);
    auto shift = [](const Tensor& t, Index dr, Index dc) {
      Tensor s(t.shape());
      for (Index n = 0; n < t.dim(0); ++n)
        for (Index c = 0; c < t.dim(1); ++c)
          for (Index r = 0; r < t.dim(2); ++r)
            for (Index q = 0; q < t.dim(3); ++q) s(n, c, (r + dr) % t.dim(2), (q + dc) % t.dim(3)) = t(n, c, r, q);
      return s;
    };
    CHECK(max_abs_diff(conv2d(shift(x, 2, 5), wt, b), shift(conv2d(x, wt, b), 2, 5)) <= 1e-12);
  }

  TEST_CASE("conv2d rejects bad shapes") {
    Tensor x({1, 2, 5, 5});
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 3, 3, 3}), Tensor()), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 2, 2}), Tensor()), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 3, 3}), Tensor(), 3), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor({1, 2, 3, 3}), Tensor({2})), ShapeError);
  }

  TEST_CASE("primitive values") {
    CHECK(silu(Tensor({1}, {0.0}))[0] == 0.0);
    auto p = maxpool2d(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}), 2);
    CHECK(p.output.shape() == Tensor::Shape{1, 1});
    CHECK(p.output[0] == 4.0);
    CHECK(p.argmax[0] == 3);
    auto tie = maxpool2d(Tensor({2, 2}, {5.0, 5.0, 5.0, 5.0}), 2);
    CHECK(tie.argmax[0] == 0);
    CHECK_THROWS_AS(maxpool2d(Tensor({3, 3}), 2), ShapeError);

    Tensor plane({4, 4});
    for (Index i : {0, 5, 6, 10, 15}) plane[i] = 1.0;
    auto total = sum_pool(plane, {0, 1});
    CHECK(total.shape() == Tensor::Shape{1});
    CHECK(total[0] == 5.0);

    auto y = linear(Tensor({2}, {1.0, -2.0}), Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}), Tensor({2}, {0.5, 0.0}));
    CHECK(y[0] == doctest::Approx(-2.5));
    CHECK(y[1] == doctest::Approx(-5.0));
  }

  TEST_CASE("sum_pool gradient is all ones and linear weight gradient is an outer product") {
    Rng rng(34);
    auto x = oracle::random_tensor({2, 3, 4}, rng);
    auto g = sum_pool_backward<double>(x.shape(), {0, 1, 2}, Tensor({1}, {1.0}));
    CHECK(g.vec().isOnes());
    auto partial = sum_pool(x, {1});
    CHECK(partial.shape() == Tensor::Shape{2, 4});
    CHECK(partial(1, 2) == doctest::Approx(x(1, 0, 2) + x(1, 1, 2) + x(1, 2, 2)));

    auto in = oracle::random_tensor({3}, rng);
    auto w = oracle::random_tensor({2, 3}, rng);
    auto up = oracle::random_tensor({2}, rng);
    auto lg = linear_backward(in, w, up);
    for (Index o = 0; o < 2; ++o)
      for (Index i = 0; i < 3; ++i) CHECK(lg.weight(o, i) == doctest::Approx(up[o] * in[i]));
  }

  TEST_CASE("maxpool backward routes to the argmax only") {
    Rng rng(35);
    auto x = oracle::random_tensor({1, 2, 4, 6}, rng);
    auto p = maxpool2d(x, 2);
    auto up = oracle::random_tensor(p.output.shape(), rng);
    auto g = maxpool2d_backward<double>(x.shape(), p.argmax, up);
    Index nonzero = 0;
    for (Index i = 0; i < g.size(); ++i) nonzero += g[i] != 0.0;
    CHECK(nonzero == up.size());
    for (Index o = 0; o < up.size(); ++o) CHECK(g[p.argmax[static_cast<std::size_t>(o)]] == up[o]);
  }

  TEST_CASE("grad_check is exact on a quadratic") {
    Eigen::VectorXd w(1);
    w << 3.0;
    Eigen::VectorXd g(1);
    g << 6.0;
    const double err = grad_check<double>([](const Eigen::VectorXd& v) { return v[0] * v[0]; }, g, w, 1e-5);
    CHECK(err <= 1e-9);
  }

  TEST_CASE("silu backward matches finite differences") {
    Rng rng(36);
    auto x = oracle::random_tensor({10}, rng, 2.0);
    auto up = oracle::random_tensor({10}, rng);
    auto g = silu_backward(x, up);
    const double err = grad_check<double>(
        [&](const Eigen::VectorXd& v) {
          Tensor t(x.shape());
          t.vec() = v;
          return dot(silu(t), up);
        },
        g.vec(), x.vec(), 1e-5);
    CHECK(err <= 1e-6);
  }

  TEST_CASE("composite network gradients match finite differences") {
    // conv -> silu -> maxpool -> conv(stride 2) -> sum over cells/pixels -> linear
    Rng rng(37);
    for (Padding pad : {Padding::Periodic, Padding::Zero}) {
      auto x = oracle::random_tensor({2, 2, 8, 8}, rng);
      auto w1 = oracle::random_tensor({3, 2, 3, 3}, rng, 0.5);
      auto b1 = oracle::random_tensor({3}, rng, 0.1);
      auto w2 = oracle::random_tensor({4, 3, 2, 2}, rng, 0.5);
      auto b2 = oracle::random_tensor({4}, rng, 0.1);
      auto lw = oracle::random_tensor({1, 4}, rng);

      auto forward = [&](const Tensor& xin, const Tensor& a, const Tensor& ab, const Tensor& c, const Tensor& cb) {
        auto pre = conv2d(xin, a, ab, 1, pad);
        auto act = silu(pre);
        auto pool = maxpool2d(act, 2);
        auto z = conv2d(pool.output, c, cb, 2, pad);
        auto s = sum_pool(z, {0, 2, 3});
        return linear(s, lw, Tensor())[0];
      };

      auto pre = conv2d(x, w1, b1, 1, pad);
      auto act = silu(pre);
      auto pool = maxpool2d(act, 2);
      auto z = conv2d(pool.output, w2, b2, 2, pad);
      auto s = sum_pool(z, {0, 2, 3});
      auto dl = linear_backward(s, lw, Tensor({1}, {1.0}));
      auto dz = sum_pool_backward<double>(z.shape(), {0, 2, 3}, dl.input);
      auto g2 = conv2d_backward(pool.output, w2, dz, 2, pad);
      auto dact = maxpool2d_backward<double>(act.shape(), pool.argmax, g2.input);
      auto dpre = silu_backward(pre, dact);
      auto g1 = conv2d_backward(x, w1, dpre, 1, pad);

      auto wrap = [](const Tensor& like, const Eigen::VectorXd& v) {
        Tensor t(like.shape());
        t.vec() = v;
        return t;
      };
      const double h = 1e-5;
      CHECK(grad_check<double>([&](const Eigen::VectorXd& v) { return forward(x, wrap(w1, v), b1, w2, b2); }, g1.weight.vec(), w1.vec(), h) <= 1e-4);
      CHECK(grad_check<double>([&](const Eigen::VectorXd& v) { return forward(x, w1, wrap(b1, v), w2, b2); }, g1.bias.vec(), b1.vec(), h) <= 1e-4);
      CHECK(grad_check<double>([&](const Eigen::VectorXd& v) { return forward(x, w1, b1, wrap(w2, v), b2); }, g2.weight.vec(), w2.vec(), h) <= 1e-4);
      CHECK(grad_check<double>([&](const Eigen::VectorXd& v) { return forward(x, w1, b1, w2, wrap(b2, v)); }, g2.bias.vec(), b2.vec(), h) <= 1e-4);
      CHECK(grad_check<double>([&](const Eigen::VectorXd& v) { return forward(wrap(x, v), w1, b1, w2, b2); }, g1.input.vec(), x.vec(), h) <= 1e-4);
    }
  }
}
