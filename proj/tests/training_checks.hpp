#pragma once

// Determinism, persistence and freeze checks shared by the trainer tests and
// the acceptance gate.

#include <cstring>
#include <filesystem>

#include "mimnet/trainer.hpp"

namespace checks {

inline bool bitwise_equal(const mimnet::Tensor<float>& a, const mimnet::Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(float)) == 0;
}

inline bool tables_equal(const mimnet::TensorTable& a, const mimnet::TensorTable& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || !bitwise_equal(a[i].second, b[i].second)) return false;
  }
  return true;
}

/// Two trainers with the same seed produce bit-identical reports and checkpoints.
inline bool same_seed_identical(const mimnet::TrainingConfig& config, const std::vector<mimnet::ToySample>& train,
                                const mimnet::Vocabulary& vocab, std::size_t steps) {
  mimnet::Trainer a(config, train, vocab), b(config, train, vocab);
  for (std::size_t k = 0; k < steps; ++k) {
    const auto ra = a.step(), rb = b.step();
    if (ra.values.size() != rb.values.size()) return false;
    for (std::size_t i = 0; i < ra.values.size(); ++i) {
      if (std::memcmp(&ra.values[i].second, &rb.values[i].second, sizeof(double)) != 0) return false;
    }
  }
  return tables_equal(a.checkpoint().tensors, b.checkpoint().tensors);
}

/// Saving and loading a checkpoint reproduces every tensor exactly.
inline bool checkpoint_round_trip(const mimnet::Trainer& trainer, const std::filesystem::path& path) {
  const auto ckpt = trainer.checkpoint();
  ckpt.save(path);
  const auto back = mimnet::Checkpoint::load(path);
  std::filesystem::remove(path);
  return tables_equal(ckpt.tensors, back.tensors);
}

/// Interrupting after `split` steps, saving, restoring into a fresh trainer and
/// continuing to `total` matches an uninterrupted run.
inline bool resume_matches(const mimnet::TrainingConfig& config, const std::vector<mimnet::ToySample>& train,
                           const mimnet::Vocabulary& vocab, std::size_t split, std::size_t total,
                           const std::filesystem::path& path) {
  mimnet::Trainer straight(config, train, vocab);
  straight.run(total);
  mimnet::Trainer first(config, train, vocab);
  first.run(split, nullptr, path);
  mimnet::Trainer second(config, train, vocab);
  second.restore(mimnet::Checkpoint::load(path));
  std::filesystem::remove(path);
  second.run(total);
  return second.steps_done() == total && tables_equal(straight.checkpoint().tensors, second.checkpoint().tensors);
}

struct FreezeResult {
  bool unchanged_over_adversarial = false;
  bool changed_by_reconstruction = false;
};

/// Memory matrix across `adversarial` adversarial steps and one reconstruction step.
inline FreezeResult freeze_invariant(mimnet::Trainer& trainer, std::size_t adversarial) {
  const auto memories = [&] { return trainer.model().gen.bank.memories.detach(); };
  FreezeResult r;
  const auto before = memories();
  for (std::size_t k = 0; k < adversarial; ++k) trainer.adversarial_step(trainer.batch_for(2 * k + 1));
  r.unchanged_over_adversarial = bitwise_equal(before, memories());
  const auto mid = memories();
  trainer.reconstruction_step(trainer.batch_for(0));
  r.changed_by_reconstruction = !bitwise_equal(mid, memories());
  return r;
}

}  // namespace checks
