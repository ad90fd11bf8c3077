#pragma once

#include <Eigen/Core>

#include <cmath>

#include "oscdet/nn/network.hpp"

namespace oscdet::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update of one parameter block; `step` is the 1-based
// timestep after incrementing.
template <typename Param, typename Grad, typename Moment>
void adam_update(Eigen::DenseBase<Param>& param, const Eigen::DenseBase<Grad>& grad, Eigen::DenseBase<Moment>& m,
                 Eigen::DenseBase<Moment>& v, long step, const AdamConfig& cfg) {
  m.derived() = cfg.beta1 * m.derived() + (1.0 - cfg.beta1) * grad.derived();
  v.derived() = cfg.beta2 * v.derived() + (1.0 - cfg.beta2) * grad.derived().cwiseAbs2();
  const double m_corr = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double v_corr = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  param.derived().array() -=
      cfg.learning_rate * (m.derived().array() / m_corr) / ((v.derived().array() / v_corr).sqrt() + cfg.epsilon);
}

struct AdamState {
  GradientSet first_moment;
  GradientSet second_moment;
  long step = 0;

  static AdamState for_network(const Network& net) {
    return {net.zero_gradients(), net.zero_gradients(), 0};
  }
};

inline void adam_step(Network& net, const GradientSet& grads, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].has_parameters()) continue;
    adam_update(layers[i].weights.vec(), grads[i].weights.vec(), state.first_moment[i].weights.vec(),
                state.second_moment[i].weights.vec(), state.step, cfg);
    adam_update(layers[i].bias.vec(), grads[i].bias.vec(), state.first_moment[i].bias.vec(),
                state.second_moment[i].bias.vec(), state.step, cfg);
  }
}

}  // namespace oscdet::nn
