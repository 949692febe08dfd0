#include "avse/sta.hpp"

#include <cmath>

namespace avse {

namespace {

Tensor uniform_init(std::vector<int> shape, double bound, Rng& rng) {
  std::vector<double> d(static_cast<size_t>(shape_size(shape)));
  for (auto& v : d) v = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(d), true);
}

}  // namespace

StaUnit::StaUnit(int channels, int reduction, StaThresholdMode mode)
    : channels_(channels),
      bottleneck_(std::max(1, channels / std::max(1, reduction))),
      mode_(mode) {}

StaUnit::StaUnit(int channels, int reduction, Rng& rng, StaThresholdMode mode)
    : StaUnit(channels, reduction, mode) {
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(channels_));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(bottleneck_));
  w1_ = uniform_init({bottleneck_, channels_}, bound1, rng);
  b1_ = Tensor::zeros({bottleneck_}, true);
  w2_ = uniform_init({channels_, bottleneck_}, bound2, rng);
  b2_ = Tensor::zeros({channels_}, true);
}

StaUnit StaUnit::zero_init(int channels, int reduction, StaThresholdMode mode) {
  StaUnit u(channels, reduction, mode);
  u.w1_ = Tensor::zeros({u.bottleneck_, channels}, true);
  u.b1_ = Tensor::zeros({u.bottleneck_}, true);
  u.w2_ = Tensor::zeros({channels, u.bottleneck_}, true);
  u.b2_ = Tensor::zeros({channels}, true);
  return u;
}

Tensor StaUnit::threshold(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != channels_)
    throw std::invalid_argument("StaUnit: expected [B," + std::to_string(channels_) +
                                ",F,T], got " + shape_str(x.shape()));
  Tensor s = global_avg_pool_abs(x);                  // [B,C]
  Tensor z = linear(relu(linear(s, w1_, b1_)), w2_, b2_);
  Tensor alpha = sigmoid(z);
  Tensor tau = mul(alpha, s);                          // [B,C]
  if (mode_ == StaThresholdMode::kScalar) {
    // collapse to one threshold per batch item, broadcast back over channels
    const int C = channels_;
    Tensor mean_w = Tensor::full({1, C}, 1.0 / C);
    Tensor bcast_w = Tensor::full({C, 1}, 1.0);
    Tensor zero1 = Tensor::zeros({1});
    Tensor zeroC = Tensor::zeros({C});
    tau = linear(linear(tau, mean_w, zero1), bcast_w, zeroC);
  }
  return tau;
}

Tensor StaUnit::forward(const Tensor& x) const {
  return soft_threshold(x, threshold(x));
}

std::vector<std::pair<std::string, Tensor>> StaUnit::named_parameters(
    const std::string& prefix) const {
  return {{prefix + ".fc1.w", w1_},
          {prefix + ".fc1.b", b1_},
          {prefix + ".fc2.w", w2_},
          {prefix + ".fc2.b", b2_}};
}

double sta_sparsity(const Tensor& y) {
  if (y.size() == 0) return 0.0;
  int64_t zeros = 0;
  for (double v : y.data())
    if (v == 0.0) ++zeros;
  return static_cast<double>(zeros) / static_cast<double>(y.size());
}

}  // namespace avse
