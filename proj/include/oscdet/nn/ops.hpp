#pragma once

// Layer kernels and their reverse-mode rules. Backward functions accumulate
// parameter gradients into the supplied tensors (+=) so minibatches can sum
// per-sample contributions in place.

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <string>

#include "oscdet/error.hpp"
#include "oscdet/nn/tensor.hpp"

namespace oscdet::nn {

enum class Mode { train, infer };

inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Overlapping [out_len x kernel*channels] view of a row-major [len x channels]
// sequence: row i is the flattened receptive field starting at sample i.
template <typename Scalar>
auto patches(const Scalar* data, Index out_len, Index kernel, Index channels) {
  using Map = Eigen::Map<const RowMatrix<Scalar>, Eigen::Unaligned, Eigen::OuterStride<>>;
  return Map(data, out_len, kernel * channels, Eigen::OuterStride<>(channels));
}

}  // namespace detail

// Valid (unpadded), stride-1 1D convolution.
//   input  [length x in_channels]
//   kernel [kernel_size x in_channels x out_channels]
//   bias   [out_channels]
// out[i, o] = bias[o] + sum_{j,c} input[i + j, c] * kernel[j, c, o]
template <typename Scalar>
BasicTensor<Scalar> conv1d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernel,
                           const BasicTensor<Scalar>& bias) {
  detail::require(input.rank() == 2, "conv1d input must be [length x channels], got " + shape_string(input.shape()));
  detail::require(kernel.rank() == 3, "conv1d kernel must be rank 3, got " + shape_string(kernel.shape()));
  const Index len = input.dim(0), in_ch = input.dim(1);
  const Index k = kernel.dim(0), out_ch = kernel.dim(2);
  detail::require(kernel.dim(1) == in_ch, "conv1d kernel expects " + std::to_string(kernel.dim(1)) +
                                              " input channels, input has " + std::to_string(in_ch));
  detail::require(bias.size() == out_ch, "conv1d bias length must equal output channels");
  if (len < k)
    throw ShapeError("conv1d input length " + std::to_string(len) + " is shorter than kernel size " +
                     std::to_string(k));

  const Index out_len = len - k + 1;
  BasicTensor<Scalar> out({out_len, out_ch});
  auto y = out.matrix();
  y.noalias() = detail::patches(input.data(), out_len, k, in_ch) * kernel.matrix(k * in_ch, out_ch);
  y.rowwise() += bias.vec().transpose();
  return out;
}

// Returns d(loss)/d(input); accumulates kernel and bias gradients. The input
// gradient is skipped (empty tensor returned) when need_input_grad is false.
template <typename Scalar>
BasicTensor<Scalar> conv1d_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernel,
                                    const BasicTensor<Scalar>& grad_out, BasicTensor<Scalar>& grad_kernel,
                                    BasicTensor<Scalar>& grad_bias, bool need_input_grad = true) {
  const Index in_ch = input.dim(1);
  const Index k = kernel.dim(0), out_ch = kernel.dim(2);
  const Index out_len = grad_out.dim(0);
  detail::require(out_len == input.dim(0) - k + 1 && grad_out.dim(1) == out_ch, "conv1d_backward shape mismatch");

  const auto g = grad_out.matrix();
  const auto p = detail::patches(input.data(), out_len, k, in_ch);
  grad_kernel.matrix(k * in_ch, out_ch).noalias() += p.transpose() * g;
  grad_bias.vec().noalias() += g.colwise().sum().transpose();

  if (!need_input_grad) return {};
  BasicTensor<Scalar> grad_in(input.shape());
  const RowMatrix<Scalar> dp = g * kernel.matrix(k * in_ch, out_ch).transpose();
  auto& gi = grad_in.vec();
  for (Index i = 0; i < out_len; ++i) gi.segment(i * in_ch, k * in_ch) += dp.row(i).transpose();
  return grad_in;
}

// Non-overlapping max pooling along the sequence axis; trailing samples that
// do not fill a whole window are dropped.
template <typename Scalar>
BasicTensor<Scalar> maxpool1d(const BasicTensor<Scalar>& input, Index width) {
  detail::require(input.rank() == 2, "maxpool1d input must be [length x channels]");
  detail::require(width >= 1, "maxpool1d width must be >= 1");
  const Index out_len = input.dim(0) / width, ch = input.dim(1);
  detail::require(out_len >= 1, "maxpool1d input length " + std::to_string(input.dim(0)) +
                                    " shorter than pool width " + std::to_string(width));
  BasicTensor<Scalar> out({out_len, ch});
  const auto x = input.matrix();
  auto y = out.matrix();
  for (Index i = 0; i < out_len; ++i) y.row(i) = x.middleRows(i * width, width).colwise().maxCoeff();
  return out;
}

// Routes each output gradient to the first maximal element of its window.
template <typename Scalar>
BasicTensor<Scalar> maxpool1d_backward(const BasicTensor<Scalar>& input, Index width,
                                       const BasicTensor<Scalar>& grad_out) {
  const Index out_len = grad_out.dim(0), ch = grad_out.dim(1);
  BasicTensor<Scalar> grad_in(input.shape());
  for (Index i = 0; i < out_len; ++i) {
    for (Index c = 0; c < ch; ++c) {
      Index best = i * width;
      for (Index j = best + 1; j < (i + 1) * width; ++j)
        if (input(j, c) > input(best, c)) best = j;
      grad_in(best, c) += grad_out(i, c);
    }
  }
  return grad_in;
}

// out = W^T x + b with W [in x out].
template <typename Scalar>
BasicTensor<Scalar> dense(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                          const BasicTensor<Scalar>& bias) {
  detail::require(input.rank() == 1, "dense input must be rank 1, got " + shape_string(input.shape()));
  detail::require(weights.rank() == 2 && weights.dim(0) == input.size(),
                  "dense weights " + shape_string(weights.shape()) + " do not accept input of length " +
                      std::to_string(input.size()));
  detail::require(bias.size() == weights.dim(1), "dense bias length must equal output units");
  BasicTensor<Scalar> out({weights.dim(1)});
  out.vec().noalias() = weights.matrix().transpose() * input.vec();
  out.vec() += bias.vec();
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> dense_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weights,
                                   const BasicTensor<Scalar>& grad_out, BasicTensor<Scalar>& grad_weights,
                                   BasicTensor<Scalar>& grad_bias, bool need_input_grad = true) {
  grad_weights.matrix().noalias() += input.vec() * grad_out.vec().transpose();
  grad_bias.vec() += grad_out.vec();
  if (!need_input_grad) return {};
  BasicTensor<Scalar> grad_in(input.shape());
  grad_in.vec().noalias() = weights.matrix() * grad_out.vec();
  return grad_in;
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& input) {
  BasicTensor<Scalar> out = input;
  out.vec() = out.vec().cwiseMax(Scalar(0));
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> relu_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& grad_out) {
  BasicTensor<Scalar> grad_in = grad_out;
  grad_in.vec() = (input.vec().array() > Scalar(0)).select(grad_out.vec(), Scalar(0));
  return grad_in;
}

// Inverted dropout. In train mode each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate); the per-element scale is
// written to `mask` so backward (and gradient checks) can replay it.
template <typename Scalar, typename Urbg>
BasicTensor<Scalar> dropout(const BasicTensor<Scalar>& input, double rate, Mode mode, Urbg& rng,
                            BasicTensor<Scalar>& mask) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  mask = BasicTensor<Scalar>::constant(input.shape(), Scalar(1));
  if (mode == Mode::infer || rate == 0.0) return input;
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar scale = Scalar(1.0 / (1.0 - rate));
  for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? scale : Scalar(0);
  BasicTensor<Scalar> out = input;
  out.vec().array() *= mask.vec().array();
  return out;
}

// Dropout with a previously drawn mask.
template <typename Scalar>
BasicTensor<Scalar> apply_mask(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& mask) {
  detail::require(input.shape() == mask.shape(), "dropout mask shape mismatch");
  BasicTensor<Scalar> out = input;
  out.vec().array() *= mask.vec().array();
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> flatten(const BasicTensor<Scalar>& input) {
  return input.reshaped({input.size()});
}

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& input) {
  detail::require(input.rank() == 1 && input.size() >= 2, "softmax expects a vector of length >= 2");
  BasicTensor<Scalar> out = input;
  auto& v = out.vec();
  v.array() = (v.array() - v.maxCoeff()).exp();
  v /= v.sum();
  return out;
}

// Vector-Jacobian product of softmax: p * (g - <p, g>).
template <typename Scalar>
BasicTensor<Scalar> softmax_backward(const BasicTensor<Scalar>& probs, const BasicTensor<Scalar>& grad_out) {
  BasicTensor<Scalar> grad_in = probs;
  const Scalar dot = probs.vec().dot(grad_out.vec());
  grad_in.vec().array() = probs.vec().array() * (grad_out.vec().array() - dot);
  return grad_in;
}

// -ln(probs[true_class]) with probabilities clamped below at 1e-12.
template <typename Scalar>
Scalar cross_entropy(const BasicTensor<Scalar>& probs, Index true_class) {
  if (true_class < 0 || true_class >= probs.size())
    throw ConfigError("class index " + std::to_string(true_class) + " out of range for " +
                      std::to_string(probs.size()) + " classes");
  if (std::abs(probs.vec().sum() - Scalar(1)) > Scalar(1e-9))
    throw NumericError("cross_entropy: probabilities do not sum to 1");
  using std::log;
  using std::max;
  return -log(max(probs[true_class], Scalar(kProbabilityFloor)));
}

}  // namespace oscdet::nn
