#pragma once

#include <optional>

#include "mimnet/dims.hpp"
#include "mimnet/memory.hpp"
#include "mimnet/text.hpp"
#include "mimnet/vision.hpp"

namespace mimnet {

enum class Stage { Icm, Fir };

const char* stage_name(Stage stage);

template <typename T>
struct IcmParams {
  Tensor<T> projection;  // W_r as a 1x1 kernel [l, 2l, 1, 1]
  ResidualBlock<T> residual;
  Decoder<T> decoder;

  static IcmParams create(Initializer& init, const ModelDims& dims);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct IcmOutput {
  FeatureMap<T> v_c;
  Tensor<T> alpha;  // [1, H, W]
  FeatureMap<T> v_u;
  Tensor<T> image;  // I_c
};

/// Target localization: alpha_xy = sigmoid(v_c[:, x, y] . h_bar), shape [1, H, W].
template <typename T>
Tensor<T> tlu(const FeatureMap<T>& v_c, const Tensor<T>& h_bar);

/// Coarse manipulation:
///   v_xy = W_r [v_b_xy, h_bar]
///   v_c  = f_r(v) + v
///   v_u  = U(alpha * v_c + (1 - alpha) * v_i)
///   I_c  = Dec_c(v_u)
/// `forced_alpha` replaces the TLU map by a constant.
template <typename T>
IcmOutput<T> icm_forward(const FeatureMap<T>& v_i, const FeatureMap<T>& v_b, const FusedTexture<T>& fused,
                         const IcmParams<T>& params, std::optional<T> forced_alpha = std::nullopt);

template <typename T>
struct FirOutput {
  FeatureMap<T> h_f;  // [l, S/2, S/2]
  Tensor<T> image;    // I_f
};

/// Refinement: h_f_xy = (1/t) sum_k sigmoid(v_u_xy . h^_k) h^_k and
/// I_f = Dec_f(U([v_u, h_f])).
template <typename T>
FirOutput<T> fir_forward(const FeatureMap<T>& v_u, const FusedTexture<T>& fused, const Decoder<T>& fine_decoder);

template <typename T>
struct EncodedInputs {
  FeatureMap<T> v_i;
  FeatureMap<T> v_b;
};

template <typename T>
struct ManipulationState {
  FeatureMap<T> v_i;
  FeatureMap<T> v_b;
  FusedTexture<T> fused;
  FeatureMap<T> v_c;
  Tensor<T> alpha;
  FeatureMap<T> v_u;
  std::optional<FeatureMap<T>> h_f;  // FIR stage only
  Tensor<T> coarse;                  // I_c
  std::optional<Tensor<T>> fine;     // I_f, FIR stage only

  const Tensor<T>& output(Stage stage) const;
};

/// Component switches used by the ablation runner.
struct GeneratorOptions {
  bool use_tlu = true;     // false: alpha forced to 1
  bool use_memory = true;  // false: word textures are a learned linear map of h_i
};

/// Text encoder, memory bank, image encoder and both generation stages.
template <typename T>
struct Generator {
  ModelDims dims;
  GeneratorOptions options;
  TextEncoder<T> text;
  MemoryBank<T> bank;
  std::optional<Linear<T>> direct_texture;  // only without memory
  ImageEncoder<T> encoder;
  IcmParams<T> icm;
  Decoder<T> fine_decoder;

  static Generator create(Initializer& init, const ModelDims& dims, GeneratorOptions options = {});
  void collect(ParamList<T>& out, const std::string& prefix = "gen") const;

  EncodedInputs<T> encode_inputs(const Tensor<T>& image, const Tensor<T>& boundary) const;
  TextEncoding<T> encode_caption(const std::vector<int>& ids) const;
  /// Word textures for a caption: memory attention, or the direct map when
  /// memory is disabled.
  FusedTexture<T> texture_for(const TextEncoding<T>& text) const;
  /// Runs ICM and, for Stage::Fir, FIR on top of it.
  ManipulationState<T> manipulate(const EncodedInputs<T>& inputs, const FusedTexture<T>& fused, Stage stage,
                                  std::optional<T> forced_alpha = std::nullopt) const;
};

/// G^ICM / G^FIR on raw inputs: returns I_c or I_f.
template <typename T>
Tensor<T> generate(const Tensor<T>& image, const Tensor<T>& boundary, const std::vector<int>& caption_ids,
                   const Generator<T>& gen, Stage stage);

}  // namespace mimnet
