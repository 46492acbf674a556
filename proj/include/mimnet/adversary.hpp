#pragma once

#include <optional>
#include <vector>

#include "mimnet/dims.hpp"
#include "mimnet/manipulators.hpp"
#include "mimnet/nn.hpp"
#include "mimnet/text.hpp"

namespace mimnet {

/// Per-stage discriminator with a reality head D_I and a word-weighted
/// text-conformity head D_T on a shared convolutional trunk f(.).
/// Each discriminator owns its caption encoder.
template <typename T>
struct Discriminator {
  Stage stage = Stage::Icm;
  std::size_t resolution = 32;
  TextEncoder<T> text;
  std::vector<Conv<T>> trunk;  // stride-2 convs down to 4x4
  Linear<T> feature;           // flattened trunk -> F
  Linear<T> reality;           // F -> 1
  Linear<T> word_projection;   // W(h_i): d_text -> F
  Linear<T> word_bias;         // b(h_i): d_text -> 1

  static Discriminator create(Initializer& init, const ModelDims& dims, Stage stage);
  void collect(ParamList<T>& out, const std::string& prefix) const;
  /// Copy whose parameters are constants; gradients stop at its inputs.
  Discriminator detached() const;

  /// f(I) as a row vector [1, F].
  Tensor<T> features(const Tensor<T>& img) const;
  /// Scalar logit of D_I.
  Tensor<T> reality_logit(const Tensor<T>& img) const;
  TextEncoding<T> encode_caption(const std::vector<int>& ids) const;
};

/// D_I(I) = sigmoid(f(I)); `log_score` is log D_I computed from the logit.
template <typename T>
struct RealityScore {
  Tensor<T> logit;
  Tensor<T> log_score;
  double score = 0.0;
};

template <typename T>
RealityScore<T> reality_score(const Tensor<T>& img, const Discriminator<T>& disc);

/// alpha_i = sigmoid(h_i . mean_k h_k), shape [t].
template <typename T>
Tensor<T> word_importance(const TextEncoding<T>& text);

template <typename T>
struct ConformityScore {
  Tensor<T> inner_logits;  // [t], f(I).W(h_i) + b(h_i)
  Tensor<T> weights;       // [t], alpha_i
  Tensor<T> log_score;     // sum_i alpha_i log sigmoid(inner_i)
  double score = 0.0;      // exp(log_score)
};

/// D_T(I, T) = prod_i sigmoid(f(I).W(h_i) + b(h_i))^alpha_i, evaluated in
/// log space. `forced_weights` [t] replaces the alpha_i.
template <typename T>
ConformityScore<T> text_conformity_score(const Tensor<T>& img, const TextEncoding<T>& text,
                                         const Discriminator<T>& disc,
                                         const std::optional<Tensor<T>>& forced_weights = std::nullopt);

}  // namespace mimnet
