#include "avse/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace avse {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

namespace {

NodePtr make_node(std::vector<int> shape, std::vector<double> data) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return n;
}

bool track(const Tensor& t) {
  return t.node()->requires_grad || t.node()->backward_fn || !t.node()->parents.empty();
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape), {});
  n->data.assign(static_cast<size_t>(shape_size(n->shape)), 0.0);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(n);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node()->data.begin(), t.node()->data.end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != shape_size(shape))
    throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                " values for shape " + shape_str(shape));
  auto n = make_node(std::move(shape), std::move(data));
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return Tensor(n);
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

void Tensor::check_finite(const char* what) const {
  for (double v : node_->data)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value in ") + what);
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

Tensor unary_op(const Tensor& a, double (*fwd)(double), double (*dval)(double, double)) {
  // dval(x, y) is dy/dx expressed from input x and output y
  const auto& ad = a.node()->data;
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  auto n = make_node(a.shape(), std::move(out));
  if (track(a)) {
    n->parents = {a.node()};
    NodePtr pa = a.node();
    n->backward_fn = [pa, dval](TensorNode& self) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.data.size(); ++i)
        pa->grad[i] += self.grad[i] * dval(pa->data[i], self.data[i]);
    };
  }
  return Tensor(n);
}

}  // namespace

Tensor neg(const Tensor& a) {
  return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
Tensor abs(const Tensor& a) {
  return unary_op(a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
Tensor sigmoid(const Tensor& a) {
  return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}
Tensor tanh(const Tensor& a) {
  return unary_op(a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}
Tensor elu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0 ? x : std::expm1(x); },
                  [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

namespace {

enum class Bin { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, Bin op) {
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape())
    throw std::invalid_argument("elementwise: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  size_t n = std::max(ad.size(), bd.size());
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    double x = ad[a_scalar ? 0 : i];
    double y = bd[b_scalar ? 0 : i];
    out[i] = op == Bin::Add ? x + y : op == Bin::Sub ? x - y : x * y;
  }
  auto node = make_node(a_scalar ? b.shape() : a.shape(), std::move(out));
  if (track(a) || track(b)) {
    node->parents = {a.node(), b.node()};
    NodePtr pa = a.node(), pb = b.node();
    node->backward_fn = [pa, pb, op, a_scalar, b_scalar](TensorNode& self) {
      pa->ensure_grad();
      pb->ensure_grad();
      for (size_t i = 0; i < self.data.size(); ++i) {
        double g = self.grad[i];
        double da, db;
        switch (op) {
          case Bin::Add: da = g; db = g; break;
          case Bin::Sub: da = g; db = -g; break;
          default:
            da = g * pb->data[b_scalar ? 0 : i];
            db = g * pa->data[a_scalar ? 0 : i];
        }
        pa->grad[a_scalar ? 0 : i] += da;
        pb->grad[b_scalar ? 0 : i] += db;
      }
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, Bin::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, Bin::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, Bin::Mul); }
Tensor add_scalar(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
Tensor mul_scalar(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }

// ---------------------------------------------------------------------------
// linear

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 2 || W.rank() != 2 || b.rank() != 1)
    throw std::invalid_argument("linear: expected x[B,in], W[out,in], b[out]");
  int B = x.dim(0), in = x.dim(1), out = W.dim(0);
  if (W.dim(1) != in || b.dim(0) != out)
    throw std::invalid_argument("linear: dimension mismatch x" + shape_str(x.shape()) +
                                " W" + shape_str(W.shape()) + " b" + shape_str(b.shape()));
  CMapRM xm(x.node()->data.data(), B, in);
  CMapRM wm(W.node()->data.data(), out, in);
  std::vector<double> yd(static_cast<size_t>(B) * out);
  MapRM ym(yd.data(), B, out);
  ym.noalias() = xm * wm.transpose();
  for (int r = 0; r < B; ++r)
    for (int c = 0; c < out; ++c) yd[static_cast<size_t>(r) * out + c] += b.node()->data[c];
  auto node = make_node({B, out}, std::move(yd));
  if (track(x) || track(W) || track(b)) {
    node->parents = {x.node(), W.node(), b.node()};
    NodePtr px = x.node(), pw = W.node(), pbias = b.node();
    node->backward_fn = [px, pw, pbias, B, in, out](TensorNode& self) {
      px->ensure_grad();
      pw->ensure_grad();
      pbias->ensure_grad();
      CMapRM dy(self.grad.data(), B, out);
      CMapRM xm2(px->data.data(), B, in);
      CMapRM wm2(pw->data.data(), out, in);
      MapRM dx(px->grad.data(), B, in);
      MapRM dw(pw->grad.data(), out, in);
      dx.noalias() += dy * wm2;
      dw.noalias() += dy.transpose() * xm2;
      for (int r = 0; r < B; ++r)
        for (int c = 0; c < out; ++c) pbias->grad[c] += self.grad[static_cast<size_t>(r) * out + c];
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// convolution

namespace {

struct ConvGeom {
  int B, C, F, T;       // input map
  int kF, kT, sF, sT, pF, pT;
  int OF, OT;           // output map
};

// col(K x N): K = C*kF*kT, N = B*OF*OT.
Eigen::MatrixXd im2col(std::span<const double> x, const ConvGeom& g) {
  const int K = g.C * g.kF * g.kT;
  const int64_t N = static_cast<int64_t>(g.B) * g.OF * g.OT;
  Eigen::MatrixXd col = Eigen::MatrixXd::Zero(K, N);
  for (int b = 0; b < g.B; ++b)
    for (int of = 0; of < g.OF; ++of)
      for (int ot = 0; ot < g.OT; ++ot) {
        int64_t n = (static_cast<int64_t>(b) * g.OF + of) * g.OT + ot;
        for (int c = 0; c < g.C; ++c)
          for (int u = 0; u < g.kF; ++u) {
            int f = of * g.sF - g.pF + u;
            if (f < 0 || f >= g.F) continue;
            for (int v = 0; v < g.kT; ++v) {
              int t = ot * g.sT - g.pT + v;
              if (t < 0 || t >= g.T) continue;
              col((c * g.kF + u) * g.kT + v, n) =
                  x[((static_cast<int64_t>(b) * g.C + c) * g.F + f) * g.T + t];
            }
          }
      }
  return col;
}

void col2im_accum(const Eigen::MatrixXd& col, const ConvGeom& g, std::span<double> x) {
  for (int b = 0; b < g.B; ++b)
    for (int of = 0; of < g.OF; ++of)
      for (int ot = 0; ot < g.OT; ++ot) {
        int64_t n = (static_cast<int64_t>(b) * g.OF + of) * g.OT + ot;
        for (int c = 0; c < g.C; ++c)
          for (int u = 0; u < g.kF; ++u) {
            int f = of * g.sF - g.pF + u;
            if (f < 0 || f >= g.F) continue;
            for (int v = 0; v < g.kT; ++v) {
              int t = ot * g.sT - g.pT + v;
              if (t < 0 || t >= g.T) continue;
              x[((static_cast<int64_t>(b) * g.C + c) * g.F + f) * g.T + t] +=
                  col((c * g.kF + u) * g.kT + v, n);
            }
          }
      }
}

ConvGeom conv_geom(const std::vector<int>& xs, const std::vector<int>& ks,
                   std::pair<int, int> stride, std::pair<int, int> pad) {
  ConvGeom g{};
  g.B = xs[0]; g.C = xs[1]; g.F = xs[2]; g.T = xs[3];
  g.kF = ks[2]; g.kT = ks[3];
  g.sF = stride.first; g.sT = stride.second;
  g.pF = pad.first; g.pT = pad.second;
  if (g.sF < 1 || g.sT < 1 || g.pF < 0 || g.pT < 0)
    throw std::invalid_argument("conv2d: invalid stride/pad");
  if (g.F + 2 * g.pF < g.kF || g.T + 2 * g.pT < g.kT)
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  g.OF = (g.F + 2 * g.pF - g.kF) / g.sF + 1;
  g.OT = (g.T + 2 * g.pT - g.kT) / g.sT + 1;
  return g;
}

// (C x N) matrix view of a [B,C,F,T] tensor with n = (b*F+f)*T+t.
Eigen::MatrixXd to_cn(std::span<const double> x, int B, int C, int F, int T) {
  Eigen::MatrixXd m(C, static_cast<int64_t>(B) * F * T);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int64_t s = 0; s < static_cast<int64_t>(F) * T; ++s)
        m(c, static_cast<int64_t>(b) * F * T + s) =
            x[(static_cast<int64_t>(b) * C + c) * F * T + s];
  return m;
}

void from_cn_accum(const Eigen::MatrixXd& m, int B, int C, int F, int T, std::span<double> x) {
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int64_t s = 0; s < static_cast<int64_t>(F) * T; ++s)
        x[(static_cast<int64_t>(b) * C + c) * F * T + s] +=
            m(c, static_cast<int64_t>(b) * F * T + s);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, std::pair<int, int> stride,
              std::pair<int, int> pad) {
  if (x.rank() != 4 || k.rank() != 4)
    throw std::invalid_argument("conv2d: expected x[B,C,F,T], k[Co,Ci,kF,kT]");
  if (k.dim(1) != x.dim(1))
    throw std::invalid_argument("conv2d: channel mismatch x" + shape_str(x.shape()) +
                                " k" + shape_str(k.shape()));
  ConvGeom g = conv_geom(x.shape(), k.shape(), stride, pad);
  const int Co = k.dim(0);
  const int K = g.C * g.kF * g.kT;
  const int64_t N = static_cast<int64_t>(g.B) * g.OF * g.OT;

  auto col = std::make_shared<Eigen::MatrixXd>(im2col(x.node()->data, g));
  CMapRM wm(k.node()->data.data(), Co, K);
  Eigen::MatrixXd ym = wm * (*col);  // Co x N

  std::vector<double> out(static_cast<size_t>(g.B) * Co * g.OF * g.OT);
  for (int b = 0; b < g.B; ++b)
    for (int c = 0; c < Co; ++c)
      for (int64_t s = 0; s < static_cast<int64_t>(g.OF) * g.OT; ++s)
        out[(static_cast<int64_t>(b) * Co + c) * g.OF * g.OT + s] =
            ym(c, static_cast<int64_t>(b) * g.OF * g.OT + s);

  auto node = make_node({g.B, Co, g.OF, g.OT}, std::move(out));
  if (track(x) || track(k)) {
    node->parents = {x.node(), k.node()};
    NodePtr px = x.node(), pk = k.node();
    node->backward_fn = [px, pk, g, Co, K, N, col](TensorNode& self) {
      px->ensure_grad();
      pk->ensure_grad();
      Eigen::MatrixXd dym = to_cn(self.grad, g.B, Co, g.OF, g.OT);
      MapRM dwm(pk->grad.data(), Co, K);
      dwm.noalias() += dym * col->transpose();
      CMapRM wm2(pk->data.data(), Co, K);
      Eigen::MatrixXd dcol = wm2.transpose() * dym;  // K x N
      col2im_accum(dcol, g, px->grad);
    };
  }
  return Tensor(node);
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& k, std::pair<int, int> stride,
                        std::pair<int, int> pad) {
  if (x.rank() != 4 || k.rank() != 4)
    throw std::invalid_argument("conv2d_transpose: expected x[B,C,F,T], k[C,C2,kF,kT]");
  if (k.dim(0) != x.dim(1))
    throw std::invalid_argument("conv2d_transpose: channel mismatch x" +
                                shape_str(x.shape()) + " k" + shape_str(k.shape()));
  const int B = x.dim(0), C = x.dim(1), F = x.dim(2), T = x.dim(3);
  const int C2 = k.dim(1), kF = k.dim(2), kT = k.dim(3);
  const int sF = stride.first, sT = stride.second, pF = pad.first, pT = pad.second;
  const int Fo = (F - 1) * sF - 2 * pF + kF;
  const int To = (T - 1) * sT - 2 * pT + kT;
  if (Fo < 1 || To < 1)
    throw std::invalid_argument("conv2d_transpose: degenerate output geometry");

  // geometry of the matching forward conv (output map Fo,To -> F,T)
  ConvGeom g = conv_geom({B, C2, Fo, To}, {C, C2, kF, kT}, stride, pad);
  const int K = C2 * kF * kT;

  CMapRM wm(k.node()->data.data(), C, K);
  Eigen::MatrixXd xm = to_cn(x.node()->data, B, C, F, T);
  Eigen::MatrixXd col = wm.transpose() * xm;  // K x (B*F*T)

  std::vector<double> out(static_cast<size_t>(B) * C2 * Fo * To, 0.0);
  col2im_accum(col, g, out);

  auto node = make_node({B, C2, Fo, To}, std::move(out));
  if (track(x) || track(k)) {
    node->parents = {x.node(), k.node()};
    NodePtr px = x.node(), pk = k.node();
    node->backward_fn = [px, pk, g, B, C, F, T, C2, K](TensorNode& self) {
      px->ensure_grad();
      pk->ensure_grad();
      Eigen::MatrixXd dcol = im2col(self.grad, g);       // K x (B*F*T)
      CMapRM wm2(pk->data.data(), C, K);
      Eigen::MatrixXd dxm = wm2 * dcol;                  // C x (B*F*T)
      from_cn_accum(dxm, B, C, F, T, px->grad);
      Eigen::MatrixXd xm2 = to_cn(px->data, B, C, F, T);
      MapRM dwm(pk->grad.data(), C, K);
      dwm.noalias() += xm2 * dcol.transpose();
    };
  }
  return Tensor(node);
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
    throw std::invalid_argument("add_channel_bias: x[B,C,F,T], b[C] required");
  const int B = x.dim(0), C = x.dim(1);
  const int64_t S = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  std::vector<double> out(x.node()->data.begin(), x.node()->data.end());
  for (int bb = 0; bb < B; ++bb)
    for (int c = 0; c < C; ++c)
      for (int64_t s = 0; s < S; ++s)
        out[(static_cast<int64_t>(bb) * C + c) * S + s] += b.node()->data[c];
  auto node = make_node(x.shape(), std::move(out));
  if (track(x) || track(b)) {
    node->parents = {x.node(), b.node()};
    NodePtr px = x.node(), pb = b.node();
    node->backward_fn = [px, pb, B, C, S](TensorNode& self) {
      px->ensure_grad();
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
      for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C; ++c)
          for (int64_t s = 0; s < S; ++s)
            pb->grad[c] += self.grad[(static_cast<int64_t>(bb) * C + c) * S + s];
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// LSTM

Tensor lstm_layer(const Tensor& x, const Tensor& Wx, const Tensor& Wh, const Tensor& b) {
  if (x.rank() != 3) throw std::invalid_argument("lstm_layer: x must be [B,T,in]");
  const int B = x.dim(0), T = x.dim(1), in = x.dim(2);
  if (T < 1) throw std::invalid_argument("lstm_layer: T must be >= 1");
  if (Wx.rank() != 2 || Wx.dim(1) != in || Wx.dim(0) % 4 != 0)
    throw std::invalid_argument("lstm_layer: Wx must be [4H,in]");
  const int H = Wx.dim(0) / 4;
  if (Wh.rank() != 2 || Wh.dim(0) != 4 * H || Wh.dim(1) != H || b.rank() != 1 ||
      b.dim(0) != 4 * H)
    throw std::invalid_argument("lstm_layer: Wh must be [4H,H], b [4H]");

  CMapRM wxm(Wx.node()->data.data(), 4 * H, in);
  CMapRM whm(Wh.node()->data.data(), 4 * H, H);

  struct Saved {
    // per step: gate activations and cell states, each B x H
    std::vector<Eigen::MatrixXd> ig, fg, gg, og, c, tc, h;
  };
  auto sv = std::make_shared<Saved>();
  sv->ig.resize(T); sv->fg.resize(T); sv->gg.resize(T); sv->og.resize(T);
  sv->c.resize(T); sv->tc.resize(T); sv->h.resize(T);

  Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(B, H);
  Eigen::MatrixXd c_prev = Eigen::MatrixXd::Zero(B, H);
  std::vector<double> out(static_cast<size_t>(B) * T * H);

  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd xt(B, in);
    for (int bb = 0; bb < B; ++bb)
      for (int i = 0; i < in; ++i)
        xt(bb, i) = x.node()->data[(static_cast<int64_t>(bb) * T + t) * in + i];
    Eigen::MatrixXd z = xt * wxm.transpose() + h_prev * whm.transpose();  // B x 4H
    z.rowwise() += CMapRM(b.node()->data.data(), 1, 4 * H).row(0);
    auto blockH = [&](int j) { return z.block(0, j * H, B, H); };
    sv->ig[t] = blockH(0).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    sv->fg[t] = blockH(1).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    sv->gg[t] = blockH(2).array().tanh();
    sv->og[t] = blockH(3).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    sv->c[t] = sv->fg[t].cwiseProduct(c_prev) + sv->ig[t].cwiseProduct(sv->gg[t]);
    sv->tc[t] = sv->c[t].array().tanh();
    sv->h[t] = sv->og[t].cwiseProduct(sv->tc[t]);
    for (int bb = 0; bb < B; ++bb)
      for (int j = 0; j < H; ++j)
        out[(static_cast<int64_t>(bb) * T + t) * H + j] = sv->h[t](bb, j);
    h_prev = sv->h[t];
    c_prev = sv->c[t];
  }

  auto node = make_node({B, T, H}, std::move(out));
  if (track(x) || track(Wx) || track(Wh) || track(b)) {
    node->parents = {x.node(), Wx.node(), Wh.node(), b.node()};
    NodePtr px = x.node(), pwx = Wx.node(), pwh = Wh.node(), pb = b.node();
    node->backward_fn = [px, pwx, pwh, pb, sv, B, T, in, H](TensorNode& self) {
      px->ensure_grad();
      pwx->ensure_grad();
      pwh->ensure_grad();
      pb->ensure_grad();
      CMapRM wxm2(pwx->data.data(), 4 * H, in);
      CMapRM whm2(pwh->data.data(), 4 * H, H);
      MapRM dwx(pwx->grad.data(), 4 * H, in);
      MapRM dwh(pwh->grad.data(), 4 * H, H);
      Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(B, H);
      Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(B, H);
      for (int t = T - 1; t >= 0; --t) {
        Eigen::MatrixXd dh = dh_next;
        for (int bb = 0; bb < B; ++bb)
          for (int j = 0; j < H; ++j)
            dh(bb, j) += self.grad[(static_cast<int64_t>(bb) * T + t) * H + j];
        Eigen::MatrixXd dc =
            dc_next + dh.cwiseProduct(sv->og[t])
                          .cwiseProduct(Eigen::MatrixXd::Ones(B, H) -
                                        sv->tc[t].cwiseProduct(sv->tc[t]));
        Eigen::MatrixXd c_prev2 =
            t > 0 ? sv->c[t - 1] : Eigen::MatrixXd::Zero(B, H);
        Eigen::MatrixXd h_prev2 =
            t > 0 ? sv->h[t - 1] : Eigen::MatrixXd::Zero(B, H);
        Eigen::MatrixXd dz(B, 4 * H);
        // pre-activation grads, gate order i,f,g,o
        dz.block(0, 0, B, H) =
            dc.cwiseProduct(sv->gg[t])
                .cwiseProduct(sv->ig[t])
                .cwiseProduct(Eigen::MatrixXd::Ones(B, H) - sv->ig[t]);
        dz.block(0, H, B, H) =
            dc.cwiseProduct(c_prev2)
                .cwiseProduct(sv->fg[t])
                .cwiseProduct(Eigen::MatrixXd::Ones(B, H) - sv->fg[t]);
        dz.block(0, 2 * H, B, H) =
            dc.cwiseProduct(sv->ig[t])
                .cwiseProduct(Eigen::MatrixXd::Ones(B, H) -
                              sv->gg[t].cwiseProduct(sv->gg[t]));
        dz.block(0, 3 * H, B, H) =
            dh.cwiseProduct(sv->tc[t])
                .cwiseProduct(sv->og[t])
                .cwiseProduct(Eigen::MatrixXd::Ones(B, H) - sv->og[t]);

        Eigen::MatrixXd xt(B, in);
        for (int bb = 0; bb < B; ++bb)
          for (int i = 0; i < in; ++i)
            xt(bb, i) = px->data[(static_cast<int64_t>(bb) * T + t) * in + i];

        dwx.noalias() += dz.transpose() * xt;
        dwh.noalias() += dz.transpose() * h_prev2;
        for (int bb = 0; bb < B; ++bb)
          for (int j = 0; j < 4 * H; ++j) pb->grad[j] += dz(bb, j);
        Eigen::MatrixXd dxt = dz * wxm2;  // B x in
        for (int bb = 0; bb < B; ++bb)
          for (int i = 0; i < in; ++i)
            px->grad[(static_cast<int64_t>(bb) * T + t) * in + i] += dxt(bb, i);
        dh_next = dz * whm2;
        dc_next = dc.cwiseProduct(sv->fg[t]);
      }
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// pooling / concat / soft-threshold

Tensor global_avg_pool_abs(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool_abs: x must be [B,C,F,T]");
  const int B = x.dim(0), C = x.dim(1);
  const int64_t S = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  if (S < 1) throw std::invalid_argument("global_avg_pool_abs: empty spatial extent");
  std::vector<double> out(static_cast<size_t>(B) * C, 0.0);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t s = 0; s < S; ++s)
        acc += std::fabs(x.node()->data[(static_cast<int64_t>(b) * C + c) * S + s]);
      out[static_cast<size_t>(b) * C + c] = acc / static_cast<double>(S);
    }
  auto node = make_node({B, C}, std::move(out));
  if (track(x)) {
    node->parents = {x.node()};
    NodePtr px = x.node();
    node->backward_fn = [px, B, C, S](TensorNode& self) {
      px->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          double g = self.grad[static_cast<size_t>(b) * C + c] / static_cast<double>(S);
          for (int64_t s = 0; s < S; ++s) {
            int64_t i = (static_cast<int64_t>(b) * C + c) * S + s;
            double v = px->data[i];
            px->grad[i] += g * (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
          }
        }
    };
  }
  return Tensor(node);
}

namespace {

Tensor concat_axis(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank()) throw std::invalid_argument("concat: rank mismatch");
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat: shape mismatch " + shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
  std::vector<int> oshape = a.shape();
  oshape[static_cast<size_t>(axis)] += b.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const int64_t wa = a.dim(axis) * inner, wb = b.dim(axis) * inner;
  std::vector<double> out(static_cast<size_t>(shape_size(oshape)));
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(a.node()->data.data() + o * wa, wa, out.data() + o * (wa + wb));
    std::copy_n(b.node()->data.data() + o * wb, wb, out.data() + o * (wa + wb) + wa);
  }
  auto node = make_node(std::move(oshape), std::move(out));
  if (track(a) || track(b)) {
    node->parents = {a.node(), b.node()};
    NodePtr pa = a.node(), pb = b.node();
    node->backward_fn = [pa, pb, outer, wa, wb](TensorNode& self) {
      pa->ensure_grad();
      pb->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < wa; ++i) pa->grad[o * wa + i] += self.grad[o * (wa + wb) + i];
        for (int64_t i = 0; i < wb; ++i)
          pb->grad[o * wb + i] += self.grad[o * (wa + wb) + wa + i];
      }
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4)
    throw std::invalid_argument("concat_channels: inputs must be [B,C,F,T]");
  return concat_axis(a, b, 1);
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  return concat_axis(a, b, a.rank() - 1);
}

Tensor soft_threshold(const Tensor& x, const Tensor& tau) {
  for (double v : tau.node()->data)
    if (!(v >= 0.0)) throw std::invalid_argument("soft_threshold: tau must be >= 0");

  enum class Mode { Same, Scalar, PerChannel } mode;
  int B = 0, C = 0;
  int64_t S = 1;
  if (tau.size() == 1) {
    mode = Mode::Scalar;
  } else if (tau.shape() == x.shape()) {
    mode = Mode::Same;
  } else if (x.rank() == 4 && tau.rank() == 2 && tau.dim(0) == x.dim(0) &&
             tau.dim(1) == x.dim(1)) {
    mode = Mode::PerChannel;
    B = x.dim(0);
    C = x.dim(1);
    S = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  } else {
    throw std::invalid_argument("soft_threshold: tau shape " + shape_str(tau.shape()) +
                                " does not broadcast over x " + shape_str(x.shape()));
  }
  auto tau_index = [mode, C, S](int64_t i) -> int64_t {
    switch (mode) {
      case Mode::Scalar: return 0;
      case Mode::Same: return i;
      default: return i / S;  // flattened (b,c) index
    }
  };
  (void)B;

  const auto& xd = x.node()->data;
  const auto& td = tau.node()->data;
  std::vector<double> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) {
    double xv = xd[i], tv = td[static_cast<size_t>(tau_index(static_cast<int64_t>(i)))];
    out[i] = xv > tv ? xv - tv : (xv < -tv ? xv + tv : 0.0);
  }
  auto node = make_node(x.shape(), std::move(out));
  if (track(x) || track(tau)) {
    node->parents = {x.node(), tau.node()};
    NodePtr px = x.node(), pt = tau.node();
    node->backward_fn = [px, pt, tau_index](TensorNode& self) {
      px->ensure_grad();
      pt->ensure_grad();
      for (size_t i = 0; i < self.data.size(); ++i) {
        double xv = px->data[i];
        size_t ti = static_cast<size_t>(tau_index(static_cast<int64_t>(i)));
        double tv = pt->data[ti];
        if (xv > tv) {
          px->grad[i] += self.grad[i];
          pt->grad[ti] -= self.grad[i];
        } else if (xv < -tv) {
          px->grad[i] += self.grad[i];
          pt->grad[ti] += self.grad[i];
        }
        // dead zone (|x| <= tau): both subgradients 0
      }
    };
  }
  return Tensor(node);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(pred.shape()) +
                                " vs " + shape_str(target.shape()));
  const auto& p = pred.node()->data;
  const auto& t = target.node()->data;
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    double d = p[i] - t[i];
    acc += d * d;
  }
  const double n = static_cast<double>(p.size());
  auto node = make_node({1}, {acc / n});
  if (track(pred) || track(target)) {
    node->parents = {pred.node(), target.node()};
    NodePtr pp = pred.node(), pt = target.node();
    node->backward_fn = [pp, pt, n](TensorNode& self) {
      pp->ensure_grad();
      pt->ensure_grad();
      double g = self.grad[0] * 2.0 / n;
      for (size_t i = 0; i < pp->data.size(); ++i) {
        double d = pp->data[i] - pt->data[i];
        pp->grad[i] += g * d;
        pt->grad[i] -= g * d;
      }
    };
  }
  return Tensor(node);
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.node()->data) acc += v;
  auto node = make_node({1}, {acc});
  if (track(a)) {
    node->parents = {a.node()};
    NodePtr pa = a.node();
    node->backward_fn = [pa](TensorNode& self) {
      pa->ensure_grad();
      for (size_t i = 0; i < pa->data.size(); ++i) pa->grad[i] += self.grad[0];
    };
  }
  return Tensor(node);
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  if (shape_size(new_shape) != x.size())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) +
                                " -> " + shape_str(new_shape));
  auto node = make_node(std::move(new_shape),
                        std::vector<double>(x.node()->data.begin(), x.node()->data.end()));
  if (track(x)) {
    node->parents = {x.node()};
    NodePtr px = x.node();
    node->backward_fn = [px](TensorNode& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

namespace {

// Generic index permutation op: out[map(i)] = x[i] with a precomputed map.
Tensor permute_with_map(const Tensor& x, std::vector<int> oshape,
                        std::shared_ptr<std::vector<int64_t>> out_of_in) {
  std::vector<double> out(static_cast<size_t>(shape_size(oshape)));
  const auto& xd = x.node()->data;
  for (size_t i = 0; i < xd.size(); ++i) out[static_cast<size_t>((*out_of_in)[i])] = xd[i];
  auto node = make_node(std::move(oshape), std::move(out));
  if (track(x)) {
    node->parents = {x.node()};
    NodePtr px = x.node();
    node->backward_fn = [px, out_of_in](TensorNode& self) {
      px->ensure_grad();
      for (size_t i = 0; i < px->data.size(); ++i)
        px->grad[i] += self.grad[static_cast<size_t>((*out_of_in)[i])];
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor flatten_per_time(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("flatten_per_time: x must be [B,C,F,T]");
  const int B = x.dim(0), C = x.dim(1), F = x.dim(2), T = x.dim(3);
  auto map = std::make_shared<std::vector<int64_t>>(x.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int f = 0; f < F; ++f)
        for (int t = 0; t < T; ++t)
          (*map)[((static_cast<int64_t>(b) * C + c) * F + f) * T + t] =
              (static_cast<int64_t>(b) * T + t) * (C * F) + (c * F + f);
  return permute_with_map(x, {B, T, C * F}, map);
}

Tensor unflatten_per_time(const Tensor& x, int C, int F) {
  if (x.rank() != 3 || x.dim(2) != C * F)
    throw std::invalid_argument("unflatten_per_time: x must be [B,T,C*F]");
  const int B = x.dim(0), T = x.dim(1);
  auto map = std::make_shared<std::vector<int64_t>>(x.size());
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f)
          (*map)[(static_cast<int64_t>(b) * T + t) * (C * F) + (c * F + f)] =
              ((static_cast<int64_t>(b) * C + c) * F + f) * T + t;
  return permute_with_map(x, {B, C, F, T}, map);
}

Tensor repeat_time(const Tensor& x, int factor) {
  if (x.rank() != 3 || factor < 1)
    throw std::invalid_argument("repeat_time: x must be [B,T,D], factor >= 1");
  const int B = x.dim(0), T = x.dim(1), D = x.dim(2);
  std::vector<double> out(static_cast<size_t>(B) * T * factor * D);
  const auto& xd = x.node()->data;
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      for (int r = 0; r < factor; ++r)
        std::copy_n(xd.data() + (static_cast<int64_t>(b) * T + t) * D, D,
                    out.data() + ((static_cast<int64_t>(b) * T + t) * factor + r) * D);
  auto node = make_node({B, T * factor, D}, std::move(out));
  if (track(x)) {
    node->parents = {x.node()};
    NodePtr px = x.node();
    node->backward_fn = [px, B, T, D, factor](TensorNode& self) {
      px->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
          for (int r = 0; r < factor; ++r)
            for (int d = 0; d < D; ++d)
              px->grad[(static_cast<int64_t>(b) * T + t) * D + d] +=
                  self.grad[((static_cast<int64_t>(b) * T + t) * factor + r) * D + d];
    };
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// backward sweep

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  // iterative post-order DFS for a deterministic topological order
  std::vector<NodePtr> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<NodePtr, size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodePtr p = node->parents[idx++];
      if (seen.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode& n = **it;
    if (n.backward_fn) {
      n.ensure_grad();
      n.backward_fn(n);
    }
  }
  // clear the tape
  for (auto& n : order) {
    n->backward_fn = nullptr;
    n->parents.clear();
  }
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (auto& p : params_)
    for (double g : p.grad()) sq += g * g;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (auto& p : params_)
      for (double& g : p.node()->grad) g *= scale;
  }
  return norm;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    auto& d = p.node()->data;
    const auto& g = p.node()->grad;
    for (size_t j = 0; j < d.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      d[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace avse
