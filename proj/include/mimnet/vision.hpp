#pragma once

#include "mimnet/dims.hpp"
#include "mimnet/nn.hpp"

namespace mimnet {

enum class FeatureSource { Image, Boundary, Manipulated, Upsampled };

template <typename T>
struct FeatureMap {
  Tensor<T> tensor;  // [C, H, W]
  FeatureSource source = FeatureSource::Image;

  std::size_t channels() const { return tensor.shape()[0]; }
  std::size_t height() const { return tensor.shape()[1]; }
  std::size_t width() const { return tensor.shape()[2]; }
};

/// Feature extractor shared by the image and boundary paths: one stride-2
/// adapter per input kind, then a common stride-2 trunk.
template <typename T>
struct ImageEncoder {
  Conv<T> image_adapter;     // 3 -> hidden
  Conv<T> boundary_adapter;  // 1 -> hidden
  Conv<T> trunk;             // hidden -> l
  std::size_t resolution = 32;

  static ImageEncoder create(Initializer& init, const ModelDims& dims);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// img [3,S,S] in [-1,1] -> [l, S/4, S/4]
template <typename T>
FeatureMap<T> encode_image(const Tensor<T>& img, const ImageEncoder<T>& enc);
/// boundary [1,S,S] in [0,1] -> [l, S/4, S/4]
template <typename T>
FeatureMap<T> encode_boundary(const Tensor<T>& boundary, const ImageEncoder<T>& enc);

/// f_r(v) + v with f_r = conv3x3 -> relu -> conv3x3. The second conv starts at
/// zero, so a fresh block is the identity.
template <typename T>
struct ResidualBlock {
  Conv<T> first;
  Conv<T> second;

  static ResidualBlock create(Initializer& init, std::size_t channels);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
FeatureMap<T> residual_block(const FeatureMap<T>& v, const ResidualBlock<T>& block);

/// conv3x3 -> relu -> 2x upsample -> conv3x3 -> tanh.
template <typename T>
struct Decoder {
  Conv<T> first;
  Conv<T> second;
  std::size_t input_channels = 0;
  std::size_t input_size = 0;

  static Decoder create(Initializer& init, std::size_t in_channels, std::size_t hidden, std::size_t input_size);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// v_u [l, S/2, S/2] -> I_c [3, S, S]
template <typename T>
Tensor<T> decode_coarse(const FeatureMap<T>& v_u, const Decoder<T>& dec);
/// U([v_u, h_f]) [2l, S, S] -> I_f [3, 2S, 2S]
template <typename T>
Tensor<T> decode_fine(const FeatureMap<T>& upsampled, const Decoder<T>& dec);

}  // namespace mimnet
