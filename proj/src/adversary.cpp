#include "mimnet/adversary.hpp"

#include <cmath>

namespace mimnet {

template <typename T>
Discriminator<T> Discriminator<T>::create(Initializer& init, const ModelDims& dims, Stage stage) {
  Discriminator d;
  d.stage = stage;
  d.resolution = stage == Stage::Icm ? dims.image_size : dims.fine_size();
  d.text = TextEncoder<T>::create(init, dims.vocab_size, dims.embed_dim, dims.text_dim, dims.max_caption);
  std::size_t layers = 0;
  for (std::size_t s = d.resolution; s > 4; s /= 2) ++layers;
  if (layers == 0 || (4u << (layers - 1)) * 2 != d.resolution) {
    throw DimensionError("discriminator: resolution " + std::to_string(d.resolution) + " is not 4 * 2^k");
  }
  // Channel counts double towards the 4x4 output, floored at min(8, max).
  const std::size_t top = dims.disc_channels, floor = std::min<std::size_t>(8, top);
  std::size_t in = 3;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t out = std::max(floor, top >> (layers - 1 - k));
    d.trunk.push_back(Conv<T>::create(init, in, out, 3, 2, 1));
    in = out;
  }
  d.feature = Linear<T>::create(init, in * 16, dims.disc_feature);
  d.reality = Linear<T>::create(init, dims.disc_feature, 1);
  d.word_projection = Linear<T>::create(init, dims.text_dim, dims.disc_feature);
  d.word_bias = Linear<T>::create(init, dims.text_dim, 1);
  return d;
}

template <typename T>
void Discriminator<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  text.collect(out, prefix + ".text");
  for (std::size_t k = 0; k < trunk.size(); ++k) trunk[k].collect(out, prefix + ".trunk" + std::to_string(k));
  feature.collect(out, prefix + ".feature");
  reality.collect(out, prefix + ".reality");
  word_projection.collect(out, prefix + ".word_projection");
  word_bias.collect(out, prefix + ".word_bias");
}

template <typename T>
Discriminator<T> Discriminator<T>::detached() const {
  Discriminator d;
  d.stage = stage;
  d.resolution = resolution;
  d.text = text.detached();
  for (const auto& c : trunk) d.trunk.push_back(c.detached());
  d.feature = feature.detached();
  d.reality = reality.detached();
  d.word_projection = word_projection.detached();
  d.word_bias = word_bias.detached();
  return d;
}

template <typename T>
Tensor<T> Discriminator<T>::features(const Tensor<T>& img) const {
  if (img.shape() != Shape{3, resolution, resolution}) {
    throw DimensionError(std::string(stage_name(stage)) + " discriminator expects [3x" + std::to_string(resolution) +
                         "x" + std::to_string(resolution) + "] images, got " + to_string(img.shape()));
  }
  Tensor<T> x = img;
  for (const auto& conv : trunk) x = ops::leaky_relu(conv(x), T(0.2));
  return ops::leaky_relu(feature(ops::reshape(x, {1, x.size()})), T(0.2));
}

template <typename T>
Tensor<T> Discriminator<T>::reality_logit(const Tensor<T>& img) const {
  return ops::reshape(reality(features(img)), {});
}

template <typename T>
TextEncoding<T> Discriminator<T>::encode_caption(const std::vector<int>& ids) const {
  return encode_text(ids, text);
}

template <typename T>
RealityScore<T> reality_score(const Tensor<T>& img, const Discriminator<T>& disc) {
  RealityScore<T> s;
  s.logit = disc.reality_logit(img);
  s.log_score = ops::log_sigmoid(s.logit);
  s.score = std::exp(static_cast<double>(s.log_score.item()));
  return s;
}

template <typename T>
Tensor<T> word_importance(const TextEncoding<T>& text) {
  using namespace ops;
  const auto& h = text.hidden;
  const std::size_t t = h.shape()[0];
  const Tensor<T> centre = mean(h, 0, /*keepdim=*/true);  // [1, d]
  return reshape(sigmoid(matmul(h, transpose(centre))), {t});
}

template <typename T>
ConformityScore<T> text_conformity_score(const Tensor<T>& img, const TextEncoding<T>& text,
                                         const Discriminator<T>& disc, const std::optional<Tensor<T>>& forced_weights) {
  using namespace ops;
  const auto& h = text.hidden;
  if (h.rank() != 2 || h.shape()[1] != disc.word_projection.weight.shape()[0]) {
    throw DimensionError("text_conformity_score: text states " + to_string(h.shape()) +
                         " do not match the discriminator's text width");
  }
  const std::size_t t = h.shape()[0];
  const Tensor<T> f = disc.features(img);  // [1, F]
  ConformityScore<T> s;
  const Tensor<T> projected = disc.word_projection(h);  // [t, F]
  s.inner_logits = reshape(add(matmul(projected, transpose(f)), disc.word_bias(h)), {t});
  if (forced_weights) {
    if (forced_weights->shape() != Shape{t}) {
      throw DimensionError("text_conformity_score: forced weights " + to_string(forced_weights->shape()) +
                           " for " + std::to_string(t) + " words");
    }
    s.weights = *forced_weights;
  } else {
    s.weights = word_importance(text);
  }
  s.log_score = sum(mul(s.weights, log_sigmoid(s.inner_logits)));
  s.score = std::exp(static_cast<double>(s.log_score.item()));
  return s;
}

#define MIMNET_INSTANTIATE_ADV(T)                                                                        \
  template struct Discriminator<T>;                                                                      \
  template RealityScore<T> reality_score(const Tensor<T>&, const Discriminator<T>&);                     \
  template Tensor<T> word_importance(const TextEncoding<T>&);                                            \
  template ConformityScore<T> text_conformity_score(const Tensor<T>&, const TextEncoding<T>&,            \
                                                    const Discriminator<T>&, const std::optional<Tensor<T>>&);

MIMNET_INSTANTIATE_ADV(float)
MIMNET_INSTANTIATE_ADV(double)

}  // namespace mimnet
