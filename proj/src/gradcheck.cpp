#include "oscdet/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oscdet/error.hpp"

namespace oscdet::nn {

namespace {

std::vector<Index> pick_coordinates(Index size, Index limit, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(size));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (limit > 0 && limit < size) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(limit));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

}  // namespace

GradCheckReport grad_check(const Network& net, const Tensor& input, Index true_class, const GradCheckOptions& options,
                           const AnalyticGradient& analytic) {
  if (!(options.step > 0.0) || !(options.tolerance > 0.0) || options.max_coords_per_tensor < 0)
    throw ConfigError("grad_check: step and tolerance must be positive");
  Rng rng = make_rng(options.seed, {0x67726164});
  Network probe = net;

  ForwardTrace base;
  probe.forward(input, options.mode, &rng, base);
  const auto base_pattern = probe.activation_pattern(base);

  GradientSet grads = probe.zero_gradients();
  if (analytic)
    analytic(probe, base, true_class, grads);
  else
    probe.backward(base, true_class, grads);

  // Replays the frozen dropout masks so both sides of the difference see
  // the same function.
  ForwardTrace scratch = base;
  auto loss_at = [&](bool& same_region) {
    probe.forward(input, options.mode, nullptr, scratch, /*reuse_masks=*/true);
    if (probe.activation_pattern(scratch) != base_pattern) same_region = false;
    return cross_entropy(scratch.output(), true_class);
  };

  GradCheckReport report;
  const double h = options.step;
  for (std::size_t li = 0; li < probe.layers().size(); ++li) {
    auto& layer = probe.layers()[li];
    if (!layer.has_parameters()) continue;
    for (int which = 0; which < 2; ++which) {
      Tensor& param = which == 0 ? layer.weights : layer.bias;
      const Tensor& grad = which == 0 ? grads[li].weights : grads[li].bias;
      for (Index j : pick_coordinates(param.size(), options.max_coords_per_tensor, rng)) {
        const double saved = param[j];
        bool same_region = true;
        param[j] = saved + h;
        const double up = loss_at(same_region);
        param[j] = saved - h;
        const double down = loss_at(same_region);
        param[j] = saved;
        if (!same_region) {
          ++report.skipped_kinks;
          continue;
        }
        const double numeric = (up - down) / (2.0 * h);
        const double exact = grad[j];
        const double denom = std::max({std::abs(numeric), std::abs(exact), options.magnitude_floor});
        const double rel = std::abs(numeric - exact) / denom;
        ++report.checked;
        if (rel > report.max_relative_error || !std::isfinite(rel)) {
          report.max_relative_error = rel;
          report.worst = "layer " + std::to_string(li) + (which == 0 ? " weights[" : " bias[") +
                         std::to_string(j) + "]";
        }
      }
    }
  }
  report.passed = report.checked > 0 && report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace oscdet::nn
