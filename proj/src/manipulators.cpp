#include "mimnet/manipulators.hpp"

namespace mimnet {

const char* stage_name(Stage stage) {
  return stage == Stage::Icm ? "icm" : "fir";
}

template <typename T>
IcmParams<T> IcmParams<T>::create(Initializer& init, const ModelDims& dims) {
  const std::size_t l = dims.memory_width;
  IcmParams p;
  p.projection = init.uniform<T>({l, 2 * l, 1, 1}, std::sqrt(3.0 / static_cast<double>(2 * l)));
  p.residual = ResidualBlock<T>::create(init, l);
  p.decoder = Decoder<T>::create(init, l, dims.coarse_hidden, dims.fused_size());
  return p;
}

template <typename T>
void IcmParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".projection", projection});
  residual.collect(out, prefix + ".residual");
  decoder.collect(out, prefix + ".decoder");
}

template <typename T>
Tensor<T> tlu(const FeatureMap<T>& v_c, const Tensor<T>& h_bar) {
  if (h_bar.rank() != 1 || v_c.tensor.rank() != 3 || v_c.channels() != h_bar.shape()[0]) {
    throw DimensionError("tlu: feature map " + to_string(v_c.tensor.shape()) + " and global texture " +
                         to_string(h_bar.shape()) + " disagree on channels");
  }
  return ops::sigmoid(ops::channel_dot(v_c.tensor, h_bar));
}

template <typename T>
IcmOutput<T> icm_forward(const FeatureMap<T>& v_i, const FeatureMap<T>& v_b, const FusedTexture<T>& fused,
                         const IcmParams<T>& params, std::optional<T> forced_alpha) {
  using namespace ops;
  const std::size_t l = params.projection.shape()[0];
  const Shape& fs = v_b.tensor.shape();
  if (fs.size() != 3 || fs[0] != l || v_i.tensor.shape() != fs || fused.global.shape() != Shape{l}) {
    throw DimensionError("icm_forward: image features " + to_string(v_i.tensor.shape()) + ", boundary features " +
                         to_string(fs) + " and global texture " + to_string(fused.global.shape()) +
                         " do not match width " + std::to_string(l));
  }
  const std::size_t h = fs[1], w = fs[2];
  const Tensor<T> tiled = mul(reshape(fused.global, {l, 1, 1}), Tensor<T>::ones({1, h, w}));
  const Tensor<T> v = conv2d(concat<T>({v_b.tensor, tiled}, 0), params.projection, 1, 0);

  IcmOutput<T> out;
  out.v_c = residual_block(FeatureMap<T>{v, FeatureSource::Manipulated}, params.residual);
  out.alpha = forced_alpha ? Tensor<T>::full({1, h, w}, *forced_alpha) : tlu(out.v_c, fused.global);
  const Tensor<T> mixed = add(mul(out.alpha, out.v_c.tensor), mul(one_minus(out.alpha), v_i.tensor));
  out.v_u = {upsample_nearest2x(mixed), FeatureSource::Upsampled};
  out.image = decode_coarse(out.v_u, params.decoder);
  return out;
}

template <typename T>
FirOutput<T> fir_forward(const FeatureMap<T>& v_u, const FusedTexture<T>& fused, const Decoder<T>& fine_decoder) {
  using namespace ops;
  const auto& textures = fused.word_textures;  // [t, l]
  if (v_u.tensor.rank() != 3 || textures.rank() != 2 || textures.shape()[1] != v_u.channels()) {
    throw DimensionError("fir_forward: upsampled features " + to_string(v_u.tensor.shape()) +
                         " incompatible with word textures " + to_string(textures.shape()));
  }
  const std::size_t l = v_u.channels(), h = v_u.height(), w = v_u.width(), t = textures.shape()[0];
  const Tensor<T> flat = reshape(v_u.tensor, {l, h * w});
  const Tensor<T> scores = sigmoid(matmul(textures, flat));  // [t, HW]
  const Tensor<T> refined = scale(matmul(transpose(textures), scores), T(1) / static_cast<T>(t));
  FirOutput<T> out;
  out.h_f = {reshape(refined, {l, h, w}), FeatureSource::Manipulated};
  const Tensor<T> joined = upsample_nearest2x(concat<T>({v_u.tensor, out.h_f.tensor}, 0));
  out.image = decode_fine(FeatureMap<T>{joined, FeatureSource::Upsampled}, fine_decoder);
  return out;
}

template <typename T>
const Tensor<T>& ManipulationState<T>::output(Stage stage) const {
  if (stage == Stage::Icm) return coarse;
  if (!fine) throw ContractError("manipulation state has no FIR output");
  return *fine;
}

template <typename T>
Generator<T> Generator<T>::create(Initializer& init, const ModelDims& dims, GeneratorOptions options) {
  if (dims.vocab_size < 3) throw DimensionError("generator: vocabulary size not set");
  if (dims.image_size % 4) throw DimensionError("generator: image size must be a multiple of 4");
  Generator g;
  g.dims = dims;
  g.options = options;
  g.text = TextEncoder<T>::create(init, dims.vocab_size, dims.embed_dim, dims.text_dim, dims.max_caption);
  g.bank = MemoryBank<T>::create(init, dims.memory_count, dims.memory_width, dims.text_dim);
  if (!options.use_memory) g.direct_texture = Linear<T>::create(init, dims.text_dim, dims.memory_width);
  g.encoder = ImageEncoder<T>::create(init, dims);
  g.icm = IcmParams<T>::create(init, dims);
  g.fine_decoder = Decoder<T>::create(init, 2 * dims.memory_width, dims.fine_hidden, dims.image_size);
  return g;
}

template <typename T>
void Generator<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  text.collect(out, prefix + ".text");
  bank.collect(out, prefix + ".memory");
  if (direct_texture) direct_texture->collect(out, prefix + ".direct_texture");
  encoder.collect(out, prefix + ".encoder");
  icm.collect(out, prefix + ".icm");
  fine_decoder.collect(out, prefix + ".fir.decoder");
}

template <typename T>
EncodedInputs<T> Generator<T>::encode_inputs(const Tensor<T>& image, const Tensor<T>& boundary) const {
  return {encode_image(image, encoder), encode_boundary(boundary, encoder)};
}

template <typename T>
TextEncoding<T> Generator<T>::encode_caption(const std::vector<int>& ids) const {
  return encode_text(ids, text);
}

template <typename T>
FusedTexture<T> Generator<T>::texture_for(const TextEncoding<T>& encoding) const {
  if (options.use_memory) return fuse_memory(encoding, bank);
  FusedTexture<T> out;
  out.word_textures = (*direct_texture)(encoding.hidden);
  out.global = ops::mean(out.word_textures, 0);
  return out;
}

template <typename T>
ManipulationState<T> Generator<T>::manipulate(const EncodedInputs<T>& inputs, const FusedTexture<T>& fused,
                                              Stage stage, std::optional<T> forced_alpha) const {
  if (!options.use_tlu && !forced_alpha) forced_alpha = T(1);
  auto coarse = icm_forward(inputs.v_i, inputs.v_b, fused, icm, forced_alpha);
  ManipulationState<T> s;
  s.v_i = inputs.v_i;
  s.v_b = inputs.v_b;
  s.fused = fused;
  s.v_c = coarse.v_c;
  s.alpha = coarse.alpha;
  s.v_u = coarse.v_u;
  s.coarse = coarse.image;
  if (stage == Stage::Fir) {
    auto fine = fir_forward(coarse.v_u, fused, fine_decoder);
    s.h_f = fine.h_f;
    s.fine = fine.image;
  }
  return s;
}

template <typename T>
Tensor<T> generate(const Tensor<T>& image, const Tensor<T>& boundary, const std::vector<int>& caption_ids,
                   const Generator<T>& gen, Stage stage) {
  const auto inputs = gen.encode_inputs(image, boundary);
  const auto fused = gen.texture_for(gen.encode_caption(caption_ids));
  return gen.manipulate(inputs, fused, stage).output(stage);
}

#define MIMNET_INSTANTIATE_MANIP(T)                                                                              \
  template struct IcmParams<T>;                                                                                  \
  template struct ManipulationState<T>;                                                                          \
  template struct Generator<T>;                                                                                  \
  template Tensor<T> tlu(const FeatureMap<T>&, const Tensor<T>&);                                                \
  template IcmOutput<T> icm_forward(const FeatureMap<T>&, const FeatureMap<T>&, const FusedTexture<T>&,          \
                                    const IcmParams<T>&, std::optional<T>);                                      \
  template FirOutput<T> fir_forward(const FeatureMap<T>&, const FusedTexture<T>&, const Decoder<T>&);            \
  template Tensor<T> generate(const Tensor<T>&, const Tensor<T>&, const std::vector<int>&, const Generator<T>&, \
                              Stage);

MIMNET_INSTANTIATE_MANIP(float)
MIMNET_INSTANTIATE_MANIP(double)

}  // namespace mimnet
