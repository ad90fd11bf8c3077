#include "oscdet/nn/network.hpp"

#include <array>
#include <utility>

namespace oscdet::nn {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 7> kKindNames{{
    {LayerKind::conv1d, "conv1d"},
    {LayerKind::dense, "dense"},
    {LayerKind::maxpool1d, "maxpool1d"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::relu, "relu"},
    {LayerKind::flatten, "flatten"},
    {LayerKind::softmax, "softmax"},
}};

Shape output_shape(const LayerParams& layer, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& why) {
    throw ShapeError("layer " + std::to_string(index) + " (" + std::string(to_string(layer.kind)) + "): " + why +
                     ", input " + shape_string(in));
  };
  switch (layer.kind) {
    case LayerKind::conv1d: {
      if (in.size() != 2) fail("expects [length x channels]");
      if (layer.weights.rank() != 3 || layer.weights.dim(1) != in[1]) fail("kernel/channel mismatch");
      if (layer.bias.size() != layer.weights.dim(2)) fail("bias length mismatch");
      if (in[0] < layer.weights.dim(0)) fail("sequence shorter than kernel");
      return {in[0] - layer.weights.dim(0) + 1, layer.weights.dim(2)};
    }
    case LayerKind::dense: {
      if (in.size() != 1) fail("expects a flat vector");
      if (layer.weights.rank() != 2 || layer.weights.dim(0) != in[0]) fail("weight rows mismatch");
      if (layer.bias.size() != layer.weights.dim(1)) fail("bias length mismatch");
      return {layer.weights.dim(1)};
    }
    case LayerKind::maxpool1d:
      if (in.size() != 2) fail("expects [length x channels]");
      if (layer.pool_width < 1 || in[0] / layer.pool_width < 1) fail("bad pool width");
      return {in[0] / layer.pool_width, in[1]};
    case LayerKind::dropout:
      if (layer.rate < 0.0 || layer.rate >= 1.0) fail("rate outside [0, 1)");
      return in;
    case LayerKind::relu:
      return in;
    case LayerKind::flatten:
      return {shape_size(in)};
    case LayerKind::softmax:
      if (in.size() != 1 || in[0] < 2) fail("expects a vector of length >= 2");
      return in;
  }
  fail("unknown kind");
  return {};
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

LayerParams LayerParams::conv1d(Index kernel_size, Index in_channels, Index out_channels) {
  LayerParams p = of(LayerKind::conv1d);
  p.weights = Tensor({kernel_size, in_channels, out_channels});
  p.bias = Tensor({out_channels});
  return p;
}

LayerParams LayerParams::dense(Index in, Index out) {
  LayerParams p = of(LayerKind::dense);
  p.weights = Tensor({in, out});
  p.bias = Tensor({out});
  return p;
}

LayerParams LayerParams::maxpool1d(Index width) {
  LayerParams p = of(LayerKind::maxpool1d);
  p.pool_width = width;
  return p;
}

LayerParams LayerParams::dropout(double rate) {
  LayerParams p = of(LayerKind::dropout);
  p.rate = rate;
  return p;
}

void scale(GradientSet& grads, double factor) {
  for (auto& g : grads) {
    if (!g.weights.empty()) g.weights.vec() *= factor;
    if (!g.bias.empty()) g.bias.vec() *= factor;
  }
}

void add_to(GradientSet& acc, const GradientSet& other) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (!acc[i].weights.empty()) acc[i].weights.vec() += other[i].weights.vec();
    if (!acc[i].bias.empty()) acc[i].bias.vec() += other[i].bias.vec();
  }
}

void set_zero(GradientSet& grads) {
  for (auto& g : grads) {
    if (!g.weights.empty()) g.weights.set_zero();
    if (!g.bias.empty()) g.bias.set_zero();
  }
}

Network::Network(Shape input_shape, std::vector<LayerParams> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (layers_.empty() || layers_.back().kind != LayerKind::softmax)
    throw ShapeError("network must end with a softmax layer");
  output_shape_ = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) output_shape_ = output_shape(layers_[i], output_shape_, i);
}

Index Network::output_size() const { return shape_size(output_shape_); }

Index Network::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers_)
    if (l.has_parameters()) n += l.weights.size() + l.bias.size();
  return n;
}

void Network::forward(const Tensor& input, Mode mode, Rng* rng, ForwardTrace& trace, bool reuse_masks) const {
  if (input.shape() != input_shape_)
    throw ShapeError("network expects input " + shape_string(input_shape_) + ", got " + shape_string(input.shape()));
  trace.activations.resize(layers_.size() + 1);
  if (!reuse_masks) trace.masks.assign(layers_.size(), Tensor{});
  trace.activations[0] = input;

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    const Tensor& x = trace.activations[i];
    Tensor& y = trace.activations[i + 1];
    switch (layer.kind) {
      case LayerKind::conv1d: y = conv1d(x, layer.weights, layer.bias); break;
      case LayerKind::dense: y = dense(x, layer.weights, layer.bias); break;
      case LayerKind::maxpool1d: y = maxpool1d(x, layer.pool_width); break;
      case LayerKind::relu: y = relu(x); break;
      case LayerKind::flatten: y = flatten(x); break;
      case LayerKind::softmax: y = softmax(x); break;
      case LayerKind::dropout:
        if (mode == Mode::infer || layer.rate == 0.0) {
          y = x;
          if (!reuse_masks) trace.masks[i] = Tensor::constant(x.shape(), 1.0);
        } else if (reuse_masks) {
          y = apply_mask(x, trace.masks[i]);
        } else {
          if (rng == nullptr) throw ConfigError("train-mode dropout needs a random generator");
          y = dropout(x, layer.rate, mode, *rng, trace.masks[i]);
        }
        break;
    }
  }
  if (!trace.output().all_finite()) throw NumericError("non-finite network output");
}

Tensor Network::predict(const Tensor& input) const {
  ForwardTrace trace;
  forward(input, Mode::infer, nullptr, trace);
  return trace.output();
}

double Network::backward(const ForwardTrace& trace, Index true_class, GradientSet& grads) const {
  const Tensor& probs = trace.output();
  const double loss = cross_entropy(probs, true_class);

  Tensor grad = probs;
  grad[true_class] -= 1.0;

  // Layers before the first parameterized one need no input gradient.
  std::size_t first_param = layers_.size();
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].has_parameters()) {
      first_param = i;
      break;
    }

  for (std::size_t ii = layers_.size() - 1; ii-- > 0;) {
    if (ii < first_param) break;
    const auto& layer = layers_[ii];
    const Tensor& x = trace.activations[ii];
    const bool need_input = ii > first_param;
    switch (layer.kind) {
      case LayerKind::conv1d:
        grad = conv1d_backward(x, layer.weights, grad, grads[ii].weights, grads[ii].bias, need_input);
        break;
      case LayerKind::dense:
        grad = dense_backward(x, layer.weights, grad, grads[ii].weights, grads[ii].bias, need_input);
        break;
      case LayerKind::maxpool1d: grad = maxpool1d_backward(x, layer.pool_width, grad); break;
      case LayerKind::relu: grad = relu_backward(x, grad); break;
      case LayerKind::flatten: grad = grad.reshaped(x.shape()); break;
      case LayerKind::dropout: grad = apply_mask(grad, trace.masks[ii]); break;
      case LayerKind::softmax: grad = softmax_backward(trace.activations[ii + 1], grad); break;
    }
  }
  return loss;
}

GradientSet Network::zero_gradients() const {
  GradientSet g(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].has_parameters()) continue;
    g[i].weights = Tensor(layers_[i].weights.shape());
    g[i].bias = Tensor(layers_[i].bias.shape());
  }
  return g;
}

std::vector<std::int32_t> Network::activation_pattern(const ForwardTrace& trace) const {
  std::vector<std::int32_t> pattern;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Tensor& x = trace.activations[i];
    if (layers_[i].kind == LayerKind::relu) {
      for (Index j = 0; j < x.size(); ++j) pattern.push_back(x[j] > 0.0);
    } else if (layers_[i].kind == LayerKind::maxpool1d) {
      const Index w = layers_[i].pool_width;
      for (Index r = 0; r < x.dim(0) / w; ++r)
        for (Index c = 0; c < x.dim(1); ++c) {
          Index best = r * w;
          for (Index j = best + 1; j < (r + 1) * w; ++j)
            if (x(j, c) > x(best, c)) best = j;
          pattern.push_back(static_cast<std::int32_t>(best));
        }
    }
  }
  return pattern;
}

}  // namespace oscdet::nn
