#include "avse/gradsuite.hpp"

#include "avse/model.hpp"
#include "avse/sta.hpp"

#include <cmath>

namespace avse {

namespace {

constexpr double kStep = 1e-5;
constexpr double kOpTol = 1e-4;
constexpr double kModelTol = 1e-3;
constexpr double kMargin = 1e-3;

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool grad = true) {
  std::vector<double> d(static_cast<size_t>(shape_size(shape)));
  for (auto& v : d) v = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(d), grad);
}

// Random values kept away from zero (for abs/relu/pooling kinks).
Tensor random_offzero(std::vector<int> shape, Rng& rng, double margin = 10 * kMargin) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data()) {
    if (std::fabs(v) < margin) v = v >= 0 ? v + margin : v - margin;
  }
  return t;
}

// Fixed random weights turning a tensor-valued op into a scalar loss.
Tensor weighted_sum(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

GradSuiteEntry check(const std::string& name, const std::function<Tensor()>& loss,
                     const std::vector<std::pair<std::string, Tensor>>& params, double tol,
                     Rng& rng, int samples = 6) {
  GradCheckResult r = grad_check(loss, params, samples, kStep, rng);
  return {name, r.max_rel_err, tol, r.max_rel_err < tol};
}

}  // namespace

GradSuiteReport run_gradient_suite(uint64_t seed) {
  Rng root(seed);
  GradSuiteReport rep;

  {
    Rng rng = root.child(1);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng, false);
    rep.entries.push_back(check("add", [&] { return weighted_sum(add(a, b), w); },
                                {{"a", a}, {"b", b}}, kOpTol, rng));
    rep.entries.push_back(check("sub", [&] { return weighted_sum(sub(a, b), w); },
                                {{"a", a}, {"b", b}}, kOpTol, rng));
    rep.entries.push_back(check("mul", [&] { return weighted_sum(mul(a, b), w); },
                                {{"a", a}, {"b", b}}, kOpTol, rng));
    rep.entries.push_back(
        check("neg", [&] { return weighted_sum(neg(a), w); }, {{"a", a}}, kOpTol, rng));
    rep.entries.push_back(
        check("sigmoid", [&] { return weighted_sum(sigmoid(a), w); }, {{"a", a}}, kOpTol, rng));
    rep.entries.push_back(
        check("tanh", [&] { return weighted_sum(tanh(a), w); }, {{"a", a}}, kOpTol, rng));
    rep.entries.push_back(
        check("elu", [&] { return weighted_sum(elu(a), w); }, {{"a", a}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(2);
    Tensor a = random_offzero({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng, false);
    rep.entries.push_back(
        check("abs", [&] { return weighted_sum(abs(a), w); }, {{"a", a}}, kOpTol, rng));
    rep.entries.push_back(
        check("relu", [&] { return weighted_sum(relu(a), w); }, {{"a", a}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(3);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor W = random_tensor({2, 4}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor w = random_tensor({3, 2}, rng, false);
    rep.entries.push_back(check("linear", [&] { return weighted_sum(linear(x, W, b), w); },
                                {{"x", x}, {"W", W}, {"b", b}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(4);
    Tensor x = random_tensor({2, 3, 8, 5}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor y0 = conv2d(x, k, {2, 1}, {1, 1});
    Tensor w = random_tensor(y0.shape(), rng, false);
    rep.entries.push_back(
        check("conv2d", [&] { return weighted_sum(conv2d(x, k, {2, 1}, {1, 1}), w); },
              {{"x", x}, {"k", k}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(5);
    Tensor x = random_tensor({2, 4, 4, 5}, rng);
    Tensor k = random_tensor({4, 3, 2, 3}, rng);
    Tensor y0 = conv2d_transpose(x, k, {2, 1}, {0, 1});
    Tensor w = random_tensor(y0.shape(), rng, false);
    rep.entries.push_back(check(
        "conv2d_transpose",
        [&] { return weighted_sum(conv2d_transpose(x, k, {2, 1}, {0, 1}), w); },
        {{"x", x}, {"k", k}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(6);
    Tensor x = random_tensor({2, 4, 3}, rng);
    Tensor Wx = random_tensor({20, 3}, rng);
    Tensor Wh = random_tensor({20, 5}, rng);
    Tensor b = random_tensor({20}, rng);
    Tensor w = random_tensor({2, 4, 5}, rng, false);
    rep.entries.push_back(check(
        "lstm_layer", [&] { return weighted_sum(lstm_layer(x, Wx, Wh, b), w); },
        {{"x", x}, {"Wx", Wx}, {"Wh", Wh}, {"b", b}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(7);
    Tensor x = random_offzero({2, 3, 4, 5}, rng);
    Tensor w = random_tensor({2, 3}, rng, false);
    rep.entries.push_back(check(
        "global_avg_pool_abs", [&] { return weighted_sum(global_avg_pool_abs(x), w); },
        {{"x", x}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(8);
    Tensor a = random_tensor({2, 3, 4, 5}, rng);
    Tensor b = random_tensor({2, 2, 4, 5}, rng);
    Tensor w = random_tensor({2, 5, 4, 5}, rng, false);
    rep.entries.push_back(check(
        "concat_channels", [&] { return weighted_sum(concat_channels(a, b), w); },
        {{"a", a}, {"b", b}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(9);
    // keep |x| - tau away from the dead-zone boundary
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    Tensor tau = Tensor::from_data({2, 3}, std::vector<double>(6, 0.5), true);
    for (auto& v : x.data()) {
      double d = std::fabs(v) - 0.5;
      if (std::fabs(d) < 10 * kMargin) v += v >= 0 ? 0.05 : -0.05;
    }
    Tensor w = random_tensor({2, 3, 4, 5}, rng, false);
    rep.entries.push_back(check(
        "soft_threshold", [&] { return weighted_sum(soft_threshold(x, tau), w); },
        {{"x", x}, {"tau", tau}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(10);
    Tensor p = random_tensor({3, 4}, rng);
    Tensor t = random_tensor({3, 4}, rng, false);
    rep.entries.push_back(
        check("mse_loss", [&] { return mse_loss(p, t); }, {{"pred", p}}, kOpTol, rng));
  }
  {
    Rng rng = root.child(11);
    Rng init = root.child(12);
    StaUnit unit(4, 2, init);
    Tensor x = random_offzero({2, 4, 5, 3}, rng);
    Tensor w = random_tensor({2, 4, 5, 3}, rng, false);
    std::vector<std::pair<std::string, Tensor>> params = unit.named_parameters("sta");
    params.emplace_back("x", x);
    rep.entries.push_back(check(
        "sta_forward", [&] { return weighted_sum(unit.forward(x), w); }, params, kOpTol, rng));
  }
  {
    Rng rng = root.child(13);
    Model model(ModelConfig::tiny(true, root.child(14).seed()));
    Tensor noisy = random_tensor({2, 1, 80, 20}, rng, false);
    Tensor video = random_tensor({2, 5, 8}, rng, false);
    Tensor target = random_tensor({2, 1, 80, 20}, rng, false);
    auto named = model.named_parameters();
    // sample 20 random parameters across the whole network
    std::vector<std::pair<std::string, Tensor>> sampled;
    for (int i = 0; i < 20; ++i)
      sampled.push_back(named[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(named.size()) - 1))]);
    rep.entries.push_back(check(
        "model_end_to_end",
        [&] { return mse_loss(model.forward(noisy, video), target); }, sampled, kModelTol,
        rng, 1));
  }
  return rep;
}

}  // namespace avse
