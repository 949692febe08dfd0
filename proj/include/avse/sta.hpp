#pragma once

// Soft-threshold attention: a learned shrinkage gate over [B,C,F,T] feature
// maps. The per-channel average absolute activation is squeezed through a
// two-layer bottleneck; its sigmoid output scales that average into a
// threshold, which is applied as soft-thresholding to the map itself. The
// threshold can never exceed the mean absolute activation of its channel.

#include "avse/tensor.hpp"

namespace avse {

enum class StaThresholdMode {
  kPerChannel,  // tau varies over channels (default)
  kScalar,      // one tau per batch item, from the channel-mean statistic
};

class StaUnit {
 public:
  // channels: width C of the gated map; reduction: bottleneck divisor.
  StaUnit(int channels, int reduction, Rng& rng,
          StaThresholdMode mode = StaThresholdMode::kPerChannel);

  // Zero-initialized configuration (alpha == 0.5, tau == 0.5 * Avg|X|).
  static StaUnit zero_init(int channels, int reduction,
                           StaThresholdMode mode = StaThresholdMode::kPerChannel);

  int channels() const { return channels_; }
  int bottleneck() const { return bottleneck_; }
  StaThresholdMode mode() const { return mode_; }

  // X:[B,C,F,T] -> gated map of the same shape; differentiable through both
  // the data path and the threshold path.
  Tensor forward(const Tensor& x) const;

  // The threshold tau:[B,C] for a given map (diagnostics and tests).
  Tensor threshold(const Tensor& x) const;

  std::vector<Tensor> parameters() const { return {w1_, b1_, w2_, b2_}; }
  // Stable names for checkpointing, prefixed by the caller.
  std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

 private:
  StaUnit(int channels, int reduction, StaThresholdMode mode);
  int channels_;
  int bottleneck_;
  StaThresholdMode mode_;
  Tensor w1_, b1_;  // [C/r, C], [C/r]
  Tensor w2_, b2_;  // [C, C/r], [C]
};

// Fraction of exact zeros in a tensor (shrinkage diagnostic).
double sta_sparsity(const Tensor& y);

}  // namespace avse
