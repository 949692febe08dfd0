#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avse/tensor.hpp"

#include <cmath>

using namespace avse;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng, bool grad = false) {
  std::vector<double> d(static_cast<size_t>(shape_size(shape)));
  for (auto& v : d) v = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(d), grad);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Direct quadruple-loop convolution, independent of the im2col path.
std::vector<double> conv2d_naive(const Tensor& x, const Tensor& k, int sf, int st, int pf,
                                 int pt, int& Fo, int& To) {
  const int B = x.dim(0), Ci = x.dim(1), F = x.dim(2), T = x.dim(3);
  const int Co = k.dim(0), kF = k.dim(2), kT = k.dim(3);
  Fo = (F + 2 * pf - kF) / sf + 1;
  To = (T + 2 * pt - kT) / st + 1;
  std::vector<double> y(static_cast<size_t>(B) * Co * Fo * To, 0.0);
  auto xd = x.data();
  auto kd = k.data();
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int fo = 0; fo < Fo; ++fo)
        for (int to = 0; to < To; ++to) {
          double acc = 0.0;
          for (int ci = 0; ci < Ci; ++ci)
            for (int df = 0; df < kF; ++df)
              for (int dt = 0; dt < kT; ++dt) {
                const int fi = fo * sf + df - pf;
                const int ti = to * st + dt - pt;
                if (fi < 0 || fi >= F || ti < 0 || ti >= T) continue;
                acc += xd[((static_cast<size_t>(b) * Ci + ci) * F + fi) * T + ti] *
                       kd[((static_cast<size_t>(co) * Ci + ci) * kF + df) * kT + dt];
              }
          y[((static_cast<size_t>(b) * Co + co) * Fo + fo) * To + to] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("elementwise ops match scalar math") {
  Rng rng(1);
  Tensor a = randn({2, 5}, rng);
  Tensor b = randn({2, 5}, rng);
  Tensor s = add(a, b), d = sub(a, b), m = mul(a, b);
  Tensor n = neg(a), ab = abs(a), r = relu(a), sg = sigmoid(a), th = tanh(a), el = elu(a);
  for (int i = 0; i < 10; ++i) {
    const double x = a.data()[i], y = b.data()[i];
    CHECK(s.data()[i] == x + y);
    CHECK(d.data()[i] == x - y);
    CHECK(m.data()[i] == x * y);
    CHECK(n.data()[i] == -x);
    CHECK(ab.data()[i] == std::fabs(x));
    CHECK(r.data()[i] == (x > 0 ? x : 0.0));
    CHECK(sg.data()[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x))).epsilon(1e-14));
    CHECK(th.data()[i] == doctest::Approx(std::tanh(x)).epsilon(1e-14));
    CHECK(el.data()[i] == doctest::Approx(x > 0 ? x : std::exp(x) - 1.0).epsilon(1e-14));
  }
}

TEST_CASE("binary op shape mismatch throws") {
  Rng rng(2);
  Tensor a = randn({2, 3}, rng);
  Tensor b = randn({3, 2}, rng);
  CHECK_THROWS_AS((void)add(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)mul(a, b), std::invalid_argument);
}

TEST_CASE("scalar broadcast in binary ops") {
  Rng rng(3);
  Tensor a = randn({4, 3}, rng);
  Tensor c = Tensor::scalar(2.5);
  Tensor y = mul(a, c);
  for (int i = 0; i < 12; ++i) CHECK(y.data()[i] == a.data()[i] * 2.5);
  Tensor z = add(a, c);
  for (int i = 0; i < 12; ++i) CHECK(z.data()[i] == a.data()[i] + 2.5);
}

TEST_CASE("linear matches manual matmul") {
  Rng rng(4);
  Tensor x = randn({3, 4}, rng);
  Tensor W = randn({2, 4}, rng);
  Tensor b = randn({2}, rng);
  Tensor y = linear(x, W, b);
  REQUIRE(y.shape() == std::vector<int>{3, 2});
  for (int i = 0; i < 3; ++i)
    for (int o = 0; o < 2; ++o) {
      double acc = b.data()[o];
      for (int j = 0; j < 4; ++j) acc += x.data()[i * 4 + j] * W.data()[o * 4 + j];
      CHECK(y.data()[i * 2 + o] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("conv2d matches direct convolution") {
  Rng rng(5);
  struct Geo {
    int B, Ci, F, T, Co, kF, kT, sf, st, pf, pt;
  };
  for (const Geo g : {Geo{2, 3, 8, 7, 4, 3, 3, 2, 1, 1, 1}, Geo{1, 1, 5, 5, 2, 3, 2, 1, 1, 0, 0},
                      Geo{3, 2, 9, 6, 5, 2, 3, 2, 1, 0, 1}}) {
    Tensor x = randn({g.B, g.Ci, g.F, g.T}, rng);
    Tensor k = randn({g.Co, g.Ci, g.kF, g.kT}, rng);
    Tensor y = conv2d(x, k, {g.sf, g.st}, {g.pf, g.pt});
    int Fo, To;
    std::vector<double> ref = conv2d_naive(x, k, g.sf, g.st, g.pf, g.pt, Fo, To);
    REQUIRE(y.shape() == std::vector<int>{g.B, g.Co, Fo, To});
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-11));
  }
}

TEST_CASE("conv2d_transpose is the exact adjoint of conv2d") {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const int B = static_cast<int>(rng.uniform_int(1, 3));
    const int Ci = static_cast<int>(rng.uniform_int(1, 4));
    const int Co = static_cast<int>(rng.uniform_int(1, 4));
    const int kF = static_cast<int>(rng.uniform_int(1, 3));
    const int kT = static_cast<int>(rng.uniform_int(1, 3));
    const int sf = static_cast<int>(rng.uniform_int(1, 2));
    const int st = static_cast<int>(rng.uniform_int(1, 2));
    const int pf = static_cast<int>(rng.uniform_int(0, kF - 1));
    const int pt = static_cast<int>(rng.uniform_int(0, kT - 1));
    // pick F, T so the strided geometry inverts exactly: (F + 2p - k) % s == 0
    int F = static_cast<int>(rng.uniform_int(4, 10));
    while ((F + 2 * pf - kF) < 0 || (F + 2 * pf - kF) % sf != 0) ++F;
    int T = static_cast<int>(rng.uniform_int(4, 10));
    while ((T + 2 * pt - kT) < 0 || (T + 2 * pt - kT) % st != 0) ++T;
    Tensor x = randn({B, Ci, F, T}, rng);
    Tensor k = randn({Co, Ci, kF, kT}, rng);
    Tensor Ax = conv2d(x, k, {sf, st}, {pf, pt});
    Tensor y = randn(Ax.shape(), rng);
    Tensor Aty = conv2d_transpose(y, k, {sf, st}, {pf, pt});
    REQUIRE(Aty.shape() == x.shape());
    const double lhs = dot(Ax.data(), y.data());
    const double rhs = dot(x.data(), Aty.data());
    CHECK(std::fabs(lhs - rhs) <= 1e-10 * std::max(1.0, std::fabs(lhs)));
  }
}

TEST_CASE("lstm_layer matches a scalar reference implementation") {
  Rng rng(7);
  const int B = 2, T = 4, I = 3, H = 5;
  Tensor x = randn({B, T, I}, rng);
  Tensor Wx = randn({4 * H, I}, rng);
  Tensor Wh = randn({4 * H, H}, rng);
  Tensor b = randn({4 * H}, rng);
  Tensor y = lstm_layer(x, Wx, Wh, b);
  REQUIRE(y.shape() == std::vector<int>{B, T, H});

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int bb = 0; bb < B; ++bb) {
    std::vector<double> h(H, 0.0), c(H, 0.0);
    for (int t = 0; t < T; ++t) {
      std::vector<double> gates(4 * H);
      for (int g = 0; g < 4 * H; ++g) {
        double acc = b.data()[g];
        for (int i = 0; i < I; ++i) acc += Wx.data()[g * I + i] * x.data()[(bb * T + t) * I + i];
        for (int j = 0; j < H; ++j) acc += Wh.data()[g * H + j] * h[j];
        gates[g] = acc;
      }
      for (int j = 0; j < H; ++j) {
        const double ig = sig(gates[j]);
        const double fg = sig(gates[H + j]);
        const double gg = std::tanh(gates[2 * H + j]);
        const double og = sig(gates[3 * H + j]);
        c[j] = fg * c[j] + ig * gg;
        h[j] = og * std::tanh(c[j]);
        CHECK(y.data()[(bb * T + t) * H + j] == doctest::Approx(h[j]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("soft_threshold applies the shrinkage law with broadcasting") {
  Rng rng(8);
  Tensor x = randn({2, 3, 4, 5}, rng);
  Tensor tau = Tensor::from_data({2, 3}, {0.1, 0.4, 0.0, 0.8, 0.25, 1.3});
  Tensor y = soft_threshold(x, tau);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 20; ++i) {
        const size_t idx = static_cast<size_t>((b * 3 + c) * 20 + i);
        const double xv = x.data()[idx], tv = tau.data()[b * 3 + c];
        const double expect = std::fabs(xv) > tv ? (xv > 0 ? xv - tv : xv + tv) : 0.0;
        CHECK(y.data()[idx] == expect);  // exact 64-bit
      }
}

TEST_CASE("soft_threshold scale equivariance") {
  Rng rng(9);
  Tensor x = randn({30}, rng);
  Tensor tau = Tensor::from_data({30}, std::vector<double>(30, 0.3));
  const double c = 2.0;  // power of two: exact scaling
  Tensor xs = mul_scalar(x, c);
  Tensor taus = mul_scalar(tau, c);
  Tensor y = soft_threshold(x, tau);
  Tensor ys = soft_threshold(xs, taus);
  for (int i = 0; i < 30; ++i) CHECK(ys.data()[i] == c * y.data()[i]);
}

TEST_CASE("soft_threshold rejects negative thresholds") {
  Rng rng(10);
  Tensor x = randn({2, 2, 2, 2}, rng);
  Tensor tau = Tensor::from_data({2, 2}, {0.1, -0.2, 0.3, 0.4});
  CHECK_THROWS_AS((void)soft_threshold(x, tau), std::invalid_argument);
}

TEST_CASE("global_avg_pool_abs computes per-channel mean magnitude") {
  Rng rng(11);
  Tensor x = randn({2, 3, 4, 5}, rng);
  Tensor p = global_avg_pool_abs(x);
  REQUIRE(p.shape() == std::vector<int>{2, 3});
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int i = 0; i < 20; ++i) acc += std::fabs(x.data()[(b * 3 + c) * 20 + i]);
      CHECK(p.data()[b * 3 + c] == doctest::Approx(acc / 20.0).epsilon(1e-13));
    }
}

TEST_CASE("concat and reshape round trips") {
  Rng rng(12);
  Tensor a = randn({2, 2, 3, 4}, rng);
  Tensor b = randn({2, 5, 3, 4}, rng);
  Tensor cc = concat_channels(a, b);
  REQUIRE(cc.shape() == std::vector<int>{2, 7, 3, 4});
  for (int bb = 0; bb < 2; ++bb) {
    for (int i = 0; i < 2 * 12; ++i) CHECK(cc.data()[bb * 84 + i] == a.data()[bb * 24 + i]);
    for (int i = 0; i < 5 * 12; ++i) CHECK(cc.data()[bb * 84 + 24 + i] == b.data()[bb * 60 + i]);
  }

  Tensor x = randn({2, 3, 4, 5}, rng);
  Tensor f = flatten_per_time(x);
  REQUIRE(f.shape() == std::vector<int>{2, 5, 12});
  for (int bb = 0; bb < 2; ++bb)
    for (int c = 0; c < 3; ++c)
      for (int fr = 0; fr < 4; ++fr)
        for (int t = 0; t < 5; ++t)
          CHECK(f.data()[(bb * 5 + t) * 12 + c * 4 + fr] ==
                x.data()[((bb * 3 + c) * 4 + fr) * 5 + t]);
  Tensor u = unflatten_per_time(f, 3, 4);
  REQUIRE(u.shape() == x.shape());
  for (int i = 0; i < 120; ++i) CHECK(u.data()[i] == x.data()[i]);

  Tensor r = reshape(x, {6, 20});
  REQUIRE(r.shape() == std::vector<int>{6, 20});
  for (int i = 0; i < 120; ++i) CHECK(r.data()[i] == x.data()[i]);
  CHECK_THROWS_AS((void)reshape(x, {7, 20}), std::invalid_argument);
}

TEST_CASE("repeat_time repeats each step factor times") {
  Rng rng(13);
  Tensor x = randn({2, 3, 4}, rng);
  Tensor y = repeat_time(x, 3);
  REQUIRE(y.shape() == std::vector<int>{2, 9, 4});
  for (int b = 0; b < 2; ++b)
    for (int t = 0; t < 9; ++t)
      for (int d = 0; d < 4; ++d)
        CHECK(y.data()[(b * 9 + t) * 4 + d] == x.data()[(b * 3 + t / 3) * 4 + d]);
}

TEST_CASE("mse_loss and sum values") {
  Tensor p = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor t = Tensor::from_data({2, 2}, {0.0, 2.0, 5.0, 1.0});
  CHECK(mse_loss(p, t).item() == doctest::Approx((1.0 + 0.0 + 4.0 + 9.0) / 4.0).epsilon(1e-15));
  CHECK(sum(p).item() == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("backward accumulates simple chain gradients") {
  Tensor a = Tensor::from_data({2}, {3.0, -2.0}, true);
  Tensor b = Tensor::from_data({2}, {4.0, 5.0}, true);
  Tensor loss = sum(mul(a, b));  // d/da = b, d/db = a
  backward(loss);
  CHECK(a.grad()[0] == 4.0);
  CHECK(a.grad()[1] == 5.0);
  CHECK(b.grad()[0] == 3.0);
  CHECK(b.grad()[1] == -2.0);
}

TEST_CASE("backward through a reused node accumulates both paths") {
  Tensor a = Tensor::from_data({1}, {3.0}, true);
  Tensor loss = sum(add(mul(a, a), a));  // x^2 + x -> 2x + 1 = 7
  backward(loss);
  CHECK(a.grad()[0] == doctest::Approx(7.0).epsilon(1e-14));
}

TEST_CASE("Adam matches the reference update formula") {
  Tensor p = Tensor::from_data({2}, {1.0, -2.0}, true);
  Adam opt({p}, 0.1);
  // fixed synthetic gradient
  Tensor loss = sum(mul(p, Tensor::from_data({2}, {0.5, -1.5})));
  backward(loss);
  opt.step();
  // t=1: m = (1-b1)g, v = (1-b2)g^2, mhat = g, vhat = g^2
  // update = lr * g / (|g| + eps)  => approximately lr * sign(g)
  const double eps = 1e-8;
  const double up0 = 0.1 * 0.5 / (std::sqrt(0.25) + eps);
  const double up1 = 0.1 * (-1.5) / (std::sqrt(2.25) + eps);
  CHECK(p.data()[0] == doctest::Approx(1.0 - up0).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(-2.0 - up1).epsilon(1e-12));
  CHECK(opt.t() == 1);
}

TEST_CASE("clip_grad_norm scales to the requested norm") {
  Tensor p = Tensor::from_data({2}, {0.0, 0.0}, true);
  Adam opt({p}, 0.1);
  Tensor loss = sum(mul(p, Tensor::from_data({2}, {3.0, 4.0})));
  backward(loss);
  const double pre = opt.clip_grad_norm(1.0);
  CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(p.grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(p.grad()[1] == doctest::Approx(0.8).epsilon(1e-12));
  // already within the bound: untouched
  opt.zero_grad();
  Tensor loss2 = sum(mul(p, Tensor::from_data({2}, {0.1, 0.0})));
  backward(loss2);
  opt.clip_grad_norm(1.0);
  CHECK(p.grad()[0] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("check_finite flags NaN") {
  Tensor p = Tensor::from_data({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(p.check_finite("test"), std::runtime_error);
}
