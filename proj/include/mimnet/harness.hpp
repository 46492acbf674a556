#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mimnet/nn.hpp"
#include "mimnet/toyset.hpp"
#include "mimnet/trainer.hpp"

namespace mimnet {

/// Mean absolute per-channel pixel difference with pixels mapped from
/// [-1,1] to [0,1]; 0 for identical images, 1 for black against white.
double metric_diff(const Tensor<float>& before, const Tensor<float>& after);

/// Diff restricted to pixels where `mask` [1,H,W] is set (`inside`) or clear.
/// Returns 0 when the region is empty.
double metric_diff_region(const Tensor<float>& before, const Tensor<float>& after, const Tensor<float>& mask,
                          bool inside);

/// MP = (1 - Diff) * Sim. Diff outside [0,1] raises InputError.
double metric_mp(double sim, double diff);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Toy image-text joint embedding used for Sim: a small strided CNN for
/// images and mean-pooled word embeddings for captions, trained with a
/// symmetric in-batch matching loss.
class SimScorer {
 public:
  struct Options {
    std::size_t embed = 32;
    std::size_t steps = 600;
    std::size_t batch = 32;
    double learning_rate = 2e-3;
    double temperature = 0.1;
    std::uint64_t seed = 99;
  };

  SimScorer() = default;
  SimScorer(std::size_t vocab_size, Options options);

  void train(const std::vector<ToySample>& samples, const Vocabulary& vocab);
  bool trained() const { return trained_; }

  /// Unit-normalized embeddings. Untrained scorers raise ContractError.
  std::vector<double> embed_image(const Tensor<float>& image) const;
  std::vector<double> embed_caption(const std::vector<int>& ids) const;
  /// Cosine similarity in [-1,1]. A [3,2S,2S] image is 2x2 average-pooled first.
  double similarity(const Tensor<float>& image, const std::vector<int>& ids) const;

  void save(const std::filesystem::path& path) const;
  static SimScorer load(const std::filesystem::path& path);

 private:
  Tensor<float> image_row(const Tensor<float>& image) const;
  Tensor<float> caption_row(const std::vector<int>& ids) const;
  ParamList<float> params() const;

  Options options_;
  Conv<float> conv1_, conv2_;
  Linear<float> image_head_;
  Tensor<float> words_;
  Linear<float> text_head_;
  bool trained_ = false;
};

struct EvalRow {
  std::size_t id = 0;
  std::string caption;  // the caption the image was manipulated towards
  double sim = 0.0;
  double diff = 0.0;
  double mp = 0.0;
  double diff_background = 0.0;
  double diff_object = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string config_hash;
  std::string checkpoint_id;

  double mean_sim() const;
  double mean_diff() const;
  double mean_mp() const;
  /// Fraction of rows whose background Diff is below the object Diff.
  double background_preserved_fraction() const;

  std::string to_csv() const;
  std::string to_json() const;
};

/// For each test sample, picks the caption of another test sample with a
/// different colour (any other caption when none exists).
std::vector<std::size_t> manipulation_targets(const std::vector<ToySample>& samples, std::uint64_t seed);

/// Output image of a model for an image and caption at the given stage.
Tensor<float> manipulate_image(const Model& model, const Tensor<float>& image, const std::vector<int>& caption,
                               Stage stage, Tensor<float>* alpha = nullptr);

/// Manipulates every test image towards its target caption with the FIR
/// stage, pools the output to the input resolution and scores it.
EvalReport evaluate(const Model& model, const SimScorer& scorer, const std::vector<ToySample>& samples,
                    const Vocabulary& vocab, std::uint64_t seed);

/// Named single-component ablations of a base configuration: TLU off,
/// memory off, L_p off and L_m off.
std::vector<std::pair<std::string, TrainingConfig>> ablation_configs(const TrainingConfig& base);

/// Keys whose values differ between two configurations.
std::vector<std::string> config_diff(const TrainingConfig& a, const TrainingConfig& b);

struct AblationResult {
  std::string name;
  TrainingConfig config;
  EvalReport report;
  double final_gap_icm = 0.0;
  double final_gap_fir = 0.0;
  double train_seconds = 0.0;
};

/// Trains the full model and every ablation with the same data and seed and
/// evaluates each against the same scorer. `progress` receives a line per event.
std::vector<AblationResult> run_ablations(const TrainingConfig& base, const ToyDataset& data, const SimScorer& scorer,
                                          const std::function<void(const std::string&)>& progress = {});

struct GradCheckRow {
  std::string name;
  bool composite = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_error <= tolerance; }
};

/// Finite-difference checks of every differentiable primitive (tolerance
/// 1e-6) and every composite at reduced dimensions (1e-4), each over
/// `seeds` random seeds; a row reports the worst seed.
std::vector<GradCheckRow> run_gradcheck_suite(std::size_t seeds = 5);

/// Decodes each memory row alone (one-hot attention) on a fixed image.
/// Returns one [3,S,S] coarse image per memory.
std::vector<Tensor<float>> decode_memories(const Model& model, const ToySample& sample);

}  // namespace mimnet
