#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mimnet/adversary.hpp"
#include "mimnet/manipulators.hpp"

namespace mimnet {

/// Weights of one generation stage.
struct StageWeights {
  double reality = 1.0;         // lambda_I
  double text = 1.0;            // lambda_T
  double reconstruction = 10.0; // lambda_rec
  double memory = 0.5;          // lambda_m
  double discriminator = 1.0;   // beta
};

struct LossWeights {
  double pseudo = 1.0;  // lambda_p, shared by both stages
  StageWeights icm;
  StageWeights fir;

  const StageWeights& stage(Stage s) const { return s == Stage::Icm ? icm : fir; }
  StageWeights& stage(Stage s) { return s == Stage::Icm ? icm : fir; }
  /// Throws InputError when any weight is negative or not finite.
  void validate() const;
};

/// Whether an image/caption pair belongs together. Reconstruction losses
/// only accept paired data.
enum class Pairing { Paired, Mismatched };

/// Mean squared pixel error between the input image and a stage output. A
/// fine output at twice the target resolution is compared against the
/// nearest-upsampled target.
template <typename T>
Tensor<T> loss_rec(const Tensor<T>& target, const Tensor<T>& output, Pairing pairing);

/// || sum_xy (v_i * alpha)_xy / sum_xy alpha_xy - h_bar ||_1.
/// A total alpha below 1e-8 raises NumericError.
template <typename T>
Tensor<T> loss_pseudo(const FeatureMap<T>& v_i, const Tensor<T>& alpha, const Tensor<T>& h_bar);

/// -log D from a log-score, the shape shared by L_I, L_T and L_m.
template <typename T>
Tensor<T> negative_log(const Tensor<T>& log_score);

/// One random-memory manipulation: attention, fused textures, both stage images.
template <typename T>
struct RandomMemorySample {
  Tensor<T> attention;  // [t, n] one-hot rows
  ManipulationState<T> state;
};

/// Builds G(I, a~) with one independently drawn one-hot row per word slot.
template <typename T>
RandomMemorySample<T> random_memory_manipulation(const Generator<T>& gen, const EncodedInputs<T>& inputs,
                                                 std::size_t slots, Stage stage, std::mt19937_64& rng);

/// L_m = -log D_I(G(I, a~)) for an image produced from random attention.
/// The discriminator is used through a detached copy.
template <typename T>
Tensor<T> loss_memory_random(const Tensor<T>& random_output, const Discriminator<T>& disc);

/// Components of the four-term discriminator loss for one sample.
template <typename T>
struct DiscriminatorTerms {
  Tensor<T> real_reality;  // -log D_I(I)
  Tensor<T> fake_reality;  // -log(1 - D_I(G(I, T^)))
  Tensor<T> real_text;     // -log D_T(I, T)
  Tensor<T> fake_text;     // -log(1 - D_T(G(I, T^), T^))
  Tensor<T> total;
};

/// The four terms from raw discriminator outputs: reality logits and
/// text-conformity log-scores.
template <typename T>
DiscriminatorTerms<T> discriminator_terms(const Tensor<T>& real_logit, const Tensor<T>& fake_logit,
                                          const Tensor<T>& real_text_log, const Tensor<T>& fake_text_log);

/// L_D for one sample. `fake` is detached so no gradient reaches the generator.
template <typename T>
DiscriminatorTerms<T> loss_discriminator(const Discriminator<T>& disc, const Tensor<T>& real,
                                         const std::vector<int>& caption, const Tensor<T>& fake,
                                         const std::vector<int>& mismatched);

/// Reality-only discriminator loss used alongside L_m:
/// -log D_I(I) - log(1 - D_I(G(I, a~))), with the fake detached.
template <typename T>
Tensor<T> loss_discriminator_reality(const Discriminator<T>& disc, const Tensor<T>& real, const Tensor<T>& fake);

/// L_I = -log D_I(G(I, T^)); the discriminator's parameters receive no gradient.
template <typename T>
Tensor<T> loss_generator_reality(const Discriminator<T>& disc, const Tensor<T>& fake);

/// L_T = -log D_T(G(I, T^), T^); the discriminator's parameters receive no gradient.
template <typename T>
Tensor<T> loss_generator_text(const Discriminator<T>& disc, const Tensor<T>& fake, const std::vector<int>& mismatched);

/// Generator-side components for both stages. Unused terms stay empty and
/// count as zero.
template <typename T>
struct GeneratorLosses {
  std::optional<Tensor<T>> pseudo;
  struct PerStage {
    std::optional<Tensor<T>> reality;
    std::optional<Tensor<T>> text;
    std::optional<Tensor<T>> reconstruction;
    std::optional<Tensor<T>> memory;
  } icm, fir;

  PerStage& stage(Stage s) { return s == Stage::Icm ? icm : fir; }
  const PerStage& stage(Stage s) const { return s == Stage::Icm ? icm : fir; }
};

template <typename T>
struct DiscriminatorLosses {
  std::optional<Tensor<T>> icm;
  std::optional<Tensor<T>> fir;
};

/// L_G = lambda_p L_p + sum_i lambda_I L_I + lambda_T L_T + lambda_rec L_rec + lambda_m L_m.
/// A NaN component raises NumericError naming it.
template <typename T>
Tensor<T> integrate_generator(const GeneratorLosses<T>& losses, const LossWeights& w);

/// L_D = sum_i beta_i L_D^i.
template <typename T>
Tensor<T> integrate_discriminator(const DiscriminatorLosses<T>& losses, const LossWeights& w);

/// Index of a mismatched caption for every batch element: another element
/// whose caption differs, drawn uniformly. Falls back to any other index when
/// every caption in the batch is identical.
std::vector<std::size_t> draw_mismatched(const std::vector<std::vector<int>>& captions, std::mt19937_64& rng);

/// Appends comma-separated loss rows: step, phase, then one column per
/// component. The header is written when the file is created.
class LossLog {
 public:
  LossLog(const std::filesystem::path& path, std::vector<std::string> components);
  void append(std::size_t step, const std::string& phase, const std::vector<std::pair<std::string, double>>& values);
  const std::vector<std::string>& components() const { return components_; }

 private:
  std::filesystem::path path_;
  std::vector<std::string> components_;
  std::ofstream out_;
};

}  // namespace mimnet
