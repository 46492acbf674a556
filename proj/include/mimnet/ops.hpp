#pragma once

#include <cstddef>
#include <vector>

#include "mimnet/tensor.hpp"

// Differentiable array operations. Every function builds a graph node when
// any input requires a gradient and is a pure value computation otherwise.
namespace mimnet::ops {

// Elementwise arithmetic with numpy-style broadcasting (trailing axes aligned).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
/// 1 - a
template <typename T> Tensor<T> one_minus(const Tensor<T>& a);
/// Sum of equally shaped tensors in one node.
template <typename T> Tensor<T> add_n(const std::vector<Tensor<T>>& terms);

template <typename T> Tensor<T> exp(const Tensor<T>& x);
/// Natural log; non-positive or NaN input raises NumericError.
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2));
/// log(sigmoid(x)) without forming sigmoid(x).
template <typename T> Tensor<T> log_sigmoid(const Tensor<T>& x);
/// log(1 - exp(x)) for x < 0. Inputs at or above -epsilon are clamped there
/// and pass no gradient.
template <typename T> Tensor<T> log1mexp(const Tensor<T>& x);

/// Softmax along `axis`, max-subtracted. NaN input raises NumericError.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// [r x k] . [k x c] -> [r x c]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// 2-D transpose.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);

/// Sum of every element, returned as a scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a, std::size_t axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& a, std::size_t axis, bool keepdim = false);

/// Cross-correlation. input [C,H,W] or [N,C,H,W]; kernel [O,C,kh,kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t padding);
/// As above with a per-output-channel bias [O].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

/// Nearest-neighbour 2x upsampling of the last two axes.
template <typename T> Tensor<T> upsample_nearest2x(const Tensor<T>& input);
/// 2x2 mean pooling of the last two axes.
template <typename T> Tensor<T> avg_pool2x(const Tensor<T>& input);

/// Dot product over the leading (channel) axis: x [C,...] with v [C] -> [1,...].
template <typename T> Tensor<T> channel_dot(const Tensor<T>& x, const Tensor<T>& v);

/// sum |a - b|
template <typename T> Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b);
/// sqrt(sum (a - b)^2); the gradient at a == b is taken as zero.
template <typename T> Tensor<T> l2_distance(const Tensor<T>& a, const Tensor<T>& b);
/// mean (a - b)^2
template <typename T> Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

/// Rows of `table` [V,d] selected by `ids`; the backward pass scatter-adds.
template <typename T> Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids);

}  // namespace mimnet::ops
