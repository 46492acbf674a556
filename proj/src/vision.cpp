#include "mimnet/vision.hpp"

namespace mimnet {
namespace {

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw DimensionError(std::string(what) + ": expected " + to_string(expected) + ", got " + to_string(t.shape()));
  }
}

template <typename T>
Tensor<T> decode(const Tensor<T>& x, const Decoder<T>& dec, const char* what) {
  require_shape(x, {dec.input_channels, dec.input_size, dec.input_size}, what);
  const Tensor<T> hidden = ops::relu(dec.first(x));
  return ops::tanh(dec.second(ops::upsample_nearest2x(hidden)));
}

}  // namespace

template <typename T>
ImageEncoder<T> ImageEncoder<T>::create(Initializer& init, const ModelDims& dims) {
  ImageEncoder e;
  e.image_adapter = Conv<T>::create(init, 3, dims.encoder_hidden, 3, 2, 1);
  e.boundary_adapter = Conv<T>::create(init, 1, dims.encoder_hidden, 3, 2, 1);
  e.trunk = Conv<T>::create(init, dims.encoder_hidden, dims.memory_width, 3, 2, 1);
  e.resolution = dims.image_size;
  return e;
}

template <typename T>
void ImageEncoder<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  image_adapter.collect(out, prefix + ".image_adapter");
  boundary_adapter.collect(out, prefix + ".boundary_adapter");
  trunk.collect(out, prefix + ".trunk");
}

template <typename T>
FeatureMap<T> encode_image(const Tensor<T>& img, const ImageEncoder<T>& enc) {
  require_shape(img, {3, enc.resolution, enc.resolution}, "encode_image");
  const Tensor<T> hidden = ops::relu(enc.image_adapter(img));
  return {ops::relu(enc.trunk(hidden)), FeatureSource::Image};
}

template <typename T>
FeatureMap<T> encode_boundary(const Tensor<T>& boundary, const ImageEncoder<T>& enc) {
  require_shape(boundary, {1, enc.resolution, enc.resolution}, "encode_boundary");
  const Tensor<T> hidden = ops::relu(enc.boundary_adapter(boundary));
  return {ops::relu(enc.trunk(hidden)), FeatureSource::Boundary};
}

template <typename T>
ResidualBlock<T> ResidualBlock<T>::create(Initializer& init, std::size_t channels) {
  ResidualBlock b;
  b.first = Conv<T>::create(init, channels, channels, 3, 1, 1);
  b.second = Conv<T>::create(init, channels, channels, 3, 1, 1, /*zero=*/true);
  return b;
}

template <typename T>
void ResidualBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  first.collect(out, prefix + ".first");
  second.collect(out, prefix + ".second");
}

template <typename T>
FeatureMap<T> residual_block(const FeatureMap<T>& v, const ResidualBlock<T>& block) {
  const auto channels = block.first.weight.shape()[1];
  if (v.tensor.rank() != 3 || v.channels() != channels) {
    throw DimensionError("residual_block: expected " + std::to_string(channels) + " channels, got " +
                         to_string(v.tensor.shape()));
  }
  const Tensor<T> inner = block.second(ops::relu(block.first(v.tensor)));
  return {ops::add(inner, v.tensor), FeatureSource::Manipulated};
}

template <typename T>
Decoder<T> Decoder<T>::create(Initializer& init, std::size_t in_channels, std::size_t hidden, std::size_t input_size) {
  Decoder d;
  d.first = Conv<T>::create(init, in_channels, hidden, 3, 1, 1);
  d.second = Conv<T>::create(init, hidden, 3, 3, 1, 1);
  d.input_channels = in_channels;
  d.input_size = input_size;
  return d;
}

template <typename T>
void Decoder<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  first.collect(out, prefix + ".first");
  second.collect(out, prefix + ".second");
}

template <typename T>
Tensor<T> decode_coarse(const FeatureMap<T>& v_u, const Decoder<T>& dec) {
  return decode(v_u.tensor, dec, "decode_coarse");
}

template <typename T>
Tensor<T> decode_fine(const FeatureMap<T>& upsampled, const Decoder<T>& dec) {
  return decode(upsampled.tensor, dec, "decode_fine");
}

#define MIMNET_INSTANTIATE_VISION(T)                                                         \
  template struct ImageEncoder<T>;                                                           \
  template struct ResidualBlock<T>;                                                          \
  template struct Decoder<T>;                                                                \
  template FeatureMap<T> encode_image(const Tensor<T>&, const ImageEncoder<T>&);             \
  template FeatureMap<T> encode_boundary(const Tensor<T>&, const ImageEncoder<T>&);          \
  template FeatureMap<T> residual_block(const FeatureMap<T>&, const ResidualBlock<T>&);      \
  template Tensor<T> decode_coarse(const FeatureMap<T>&, const Decoder<T>&);                 \
  template Tensor<T> decode_fine(const FeatureMap<T>&, const Decoder<T>&);

MIMNET_INSTANTIATE_VISION(float)
MIMNET_INSTANTIATE_VISION(double)

}  // namespace mimnet
