#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "oscdet/nn/ops.hpp"
#include "oscdet/nn/tensor.hpp"
#include "oscdet/rng.hpp"

namespace oscdet::nn {

enum class LayerKind { conv1d, dense, maxpool1d, dropout, relu, flatten, softmax };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

// One primitive layer. Parameter-free kinds leave weights/bias empty.
struct LayerParams {
  LayerKind kind = LayerKind::relu;
  Tensor weights;  // conv1d: [kernel x in x out], dense: [in x out]
  Tensor bias;     // [out]
  Index pool_width = 0;
  double rate = 0.0;  // dropout probability

  bool has_parameters() const { return kind == LayerKind::conv1d || kind == LayerKind::dense; }

  static LayerParams conv1d(Index kernel_size, Index in_channels, Index out_channels);
  static LayerParams dense(Index in, Index out);
  static LayerParams maxpool1d(Index width);
  static LayerParams dropout(double rate);
  static LayerParams relu() { return of(LayerKind::relu); }
  static LayerParams flatten() { return of(LayerKind::flatten); }
  static LayerParams softmax() { return of(LayerKind::softmax); }
  static LayerParams of(LayerKind kind) {
    LayerParams p;
    p.kind = kind;
    return p;
  }
};

// Weight and bias gradient (or optimizer moment) for one layer.
struct ParamTensors {
  Tensor weights;
  Tensor bias;
};

// One entry per layer, empty tensors for parameter-free layers.
using GradientSet = std::vector<ParamTensors>;

void scale(GradientSet& grads, double factor);
void add_to(GradientSet& acc, const GradientSet& other);
void set_zero(GradientSet& grads);

// Cached activations of one forward pass. activations[0] is the input and
// activations[i + 1] the output of layer i. masks[i] holds the dropout scale
// factors drawn for layer i (empty for other kinds).
struct ForwardTrace {
  std::vector<Tensor> activations;
  std::vector<Tensor> masks;

  const Tensor& output() const { return activations.back(); }
};

// A validated stack of primitive layers ending in softmax.
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, std::vector<LayerParams> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerParams>& layers() const noexcept { return layers_; }
  std::vector<LayerParams>& layers() noexcept { return layers_; }
  Index output_size() const;
  Index parameter_count() const;

  // Forward pass. Dropout draws masks from `rng` in train mode, or replays
  // trace.masks from an earlier pass when reuse_masks is set.
  void forward(const Tensor& input, Mode mode, Rng* rng, ForwardTrace& trace, bool reuse_masks = false) const;

  // Inference-mode class probabilities.
  Tensor predict(const Tensor& input) const;

  // Cross-entropy loss of the cached pass; adds parameter gradients into
  // `grads`. The softmax/cross-entropy pair is differentiated jointly
  // (d loss / d logits = probs - one_hot).
  double backward(const ForwardTrace& trace, Index true_class, GradientSet& grads) const;

  GradientSet zero_gradients() const;

  // ReLU sign bits and max-pool argmax positions of a pass. Two passes with
  // equal patterns lie in the same piecewise-linear region.
  std::vector<std::int32_t> activation_pattern(const ForwardTrace& trace) const;

 private:
  Shape input_shape_;
  Shape output_shape_;
  std::vector<LayerParams> layers_;
};

}  // namespace oscdet::nn
