#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mimnet/ops.hpp"
#include "mimnet/tensor.hpp"

namespace mimnet {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

/// Seeded parameter initializer. Draws in double and rounds, so float and
/// double models built from the same seed agree up to rounding.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : engine_(seed) {}

  template <typename T>
  Tensor<T> normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(engine_));
    return Tensor<T>(std::move(shape), std::move(v), true);
  }

  template <typename T>
  Tensor<T> uniform(Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(engine_));
    return Tensor<T>(std::move(shape), std::move(v), true);
  }

  template <typename T>
  Tensor<T> zeros(Shape shape) {
    return Tensor<T>::zeros(std::move(shape), true);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// 2-D convolution with bias.
template <typename T>
struct Conv {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv create(Initializer& init, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     std::size_t padding, bool zero = false);

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, weight, bias, stride, padding); }
  void collect(ParamList<T>& out, const std::string& prefix) const;
  Conv detached() const;
};

/// y = x W + b for row-vector batches x [r, in].
template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear create(Initializer& init, std::size_t in, std::size_t out, bool zero = false);

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::add(ops::matmul(x, weight), bias); }
  void collect(ParamList<T>& out, const std::string& prefix) const;
  Linear detached() const;
};

extern template struct Conv<float>;
extern template struct Conv<double>;
extern template struct Linear<float>;
extern template struct Linear<double>;

}  // namespace mimnet
