#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mimnet/adversary.hpp"
#include "mimnet/manipulators.hpp"
#include "mimnet/objectives.hpp"
#include "mimnet/toyset.hpp"

namespace mimnet {

/// Every training hyperparameter. Serialized as flat `key=value` lines.
struct TrainingConfig {
  LossWeights weights;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  std::size_t epochs = 0;  // when > 0, overrides `steps` as epochs over the train split
  std::size_t reconstruction_steps = 1;  // schedule: this many reconstruction steps,
  std::size_t adversarial_steps = 1;     // then this many adversarial steps
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 7;
  ModelDims dims;
  GeneratorOptions options;

  /// Sets one key; unknown keys and unparsable values raise InputError.
  void set(const std::string& key, const std::string& value);
  /// Checks ranges: positive learning rate, betas in (0,1), positive schedule.
  void validate() const;
  std::string to_text() const;
  /// Parses `key=value` lines with '#' comments on top of the defaults.
  static TrainingConfig parse(const std::string& text);
  static TrainingConfig load(const std::filesystem::path& path);
  /// FNV-1a over to_text(), for reports.
  std::string hash() const;
  /// Total optimizer steps for a train split of `train_size` samples.
  std::size_t total_steps(std::size_t train_size) const;
};

/// Generator plus one discriminator per stage.
struct Model {
  Generator<float> gen;
  Discriminator<float> d_icm;
  Discriminator<float> d_fir;

  static Model create(const TrainingConfig& config, std::size_t vocab_size);
  const Discriminator<float>& disc(Stage s) const { return s == Stage::Icm ? d_icm : d_fir; }
  ParamList<float> generator_params() const;
  ParamList<float> discriminator_params() const;
  ParamList<float> all_params() const;
};

/// Adam with bias correction. Parameters that are frozen (requires_grad off)
/// or received no gradient are skipped and keep their moments.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update of every eligible parameter; NaN gradients raise NumericError.
  void step(const ParamList<float>& params);
  std::size_t steps_taken() const { return t_; }

  // Stored in float so a checkpoint round-trip is exact.
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::size_t t, std::map<std::string, Moments> moments) {
    t_ = t;
    moments_ = std::move(moments);
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

void zero_grads(const ParamList<float>& params);

/// Named float tensors in the binary checkpoint layout:
/// "MIMN", u32 version, u32 count, then per tensor u16 name length, name,
/// u8 rank, u32 dims, little-endian float32 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorTable = std::vector<std::pair<std::string, Tensor<float>>>;

/// Written to a temporary file and renamed into place.
void save_tensors(const std::filesystem::path& path, const TensorTable& tensors);
/// Rejects bad magic, unknown versions and truncated files with FormatError.
TensorTable load_tensors(const std::filesystem::path& path);

/// Parameters, optimizer state, step counter, config and vocabulary.
struct Checkpoint {
  TensorTable tensors;

  const Tensor<float>& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  TrainingConfig config() const;
  Vocabulary vocabulary() const;
  std::uint64_t step() const;

  void save(const std::filesystem::path& path) const { save_tensors(path, tensors); }
  static Checkpoint load(const std::filesystem::path& path) { return {load_tensors(path)}; }
};

/// Copies checkpoint values into the model's parameters; names and shapes
/// must match exactly.
void load_parameters(const Checkpoint& ckpt, Model& model);

/// Losses and diagnostics of one training step.
struct StepReport {
  std::size_t step = 0;
  std::string phase;
  std::vector<std::pair<std::string, double>> values;

  double value(const std::string& name) const;
};

/// Names of every column the trainer reports, in log order.
std::vector<std::string> report_columns();

/// Training sample with its caption tokenized once.
struct TrainItem {
  Tensor<float> image;     // [3, S, S]
  Tensor<float> image_up;  // [3, 2S, 2S], the FIR-resolution target
  Tensor<float> boundary;  // [1, S, S]
  std::vector<int> caption;
};

/// Two-phase training loop. All randomness of step k is derived from
/// (seed, k), so a restored trainer continues exactly as an uninterrupted one.
class Trainer {
 public:
  Trainer(TrainingConfig config, const std::vector<ToySample>& train, Vocabulary vocab);

  /// Paired data, memories trainable: L_rec, L_p and L_m on the generator,
  /// plus the reality discriminators on the L_m real/fake signal.
  StepReport reconstruction_step(const std::vector<std::size_t>& batch);
  /// Mismatched captions, memories frozen: a discriminator update on L_D,
  /// then a generator update on L_I and L_T against the updated discriminators.
  StepReport adversarial_step(const std::vector<std::size_t>& batch);

  /// Phase of step k under the configured schedule.
  bool is_reconstruction(std::size_t k) const;
  /// Batch indices of step k.
  std::vector<std::size_t> batch_for(std::size_t k) const;
  /// Runs the next scheduled step.
  StepReport step();
  /// Runs until `total` steps have been taken, logging and checkpointing as configured.
  void run(std::size_t total, LossLog* log = nullptr, const std::filesystem::path& checkpoint_path = {},
           const std::function<void(const StepReport&)>& on_step = {});

  std::size_t steps_done() const { return step_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const TrainingConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<TrainItem>& items() const { return items_; }

  Checkpoint checkpoint() const;
  /// Restores parameters, optimizer moments and the step counter.
  void restore(const Checkpoint& ckpt);

 private:
  TrainingConfig config_;
  Vocabulary vocab_;
  std::vector<TrainItem> items_;
  Model model_;
  Adam gen_opt_;
  Adam disc_opt_;
  std::size_t step_ = 0;
};

}  // namespace mimnet
