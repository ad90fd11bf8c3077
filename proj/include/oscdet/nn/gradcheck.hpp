#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "oscdet/nn/network.hpp"

namespace oscdet::nn {

struct GradCheckOptions {
  double step = 1e-5;        // central-difference half width h
  double tolerance = 1e-4;   // pass iff max relative error < tolerance
  double magnitude_floor = 1e-6;  // |a|,|n| below this are compared absolutely
  Index max_coords_per_tensor = 0;  // 0 checks every coordinate
  Mode mode = Mode::infer;   // train mode draws one dropout mask and freezes it
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  Index checked = 0;
  Index skipped_kinks = 0;  // coordinates whose perturbation crossed a ReLU/max-pool boundary
  std::string worst;        // "layer <i> weights[<j>]"
  bool passed = false;
};

// Computes analytic gradients for one cached pass (accumulating into grads).
using AnalyticGradient = std::function<void(const Network&, const ForwardTrace&, Index, GradientSet&)>;

// Compares analytic gradients of the cross-entropy loss against central
// finite differences. `analytic` defaults to Network::backward.
GradCheckReport grad_check(const Network& net, const Tensor& input, Index true_class, const GradCheckOptions& options,
                           const AnalyticGradient& analytic = {});

}  // namespace oscdet::nn
