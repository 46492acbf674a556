#pragma once

#include <random>

#include "mimnet/nn.hpp"
#include "mimnet/text.hpp"

namespace mimnet {

/// Learned texture memories m_0..m_{n-1} (rows of an n x l matrix) and the
/// key projection W used to score them against word features.
template <typename T>
struct MemoryBank {
  Tensor<T> memories;  // [n, l]
  Tensor<T> key;       // [d_text, l]; logits are h_i W m_j

  /// Memories ~ N(0, 0.02^2).
  static MemoryBank create(Initializer& init, std::size_t count, std::size_t width, std::size_t text_dim);

  std::size_t count() const { return memories.shape()[0]; }
  std::size_t width() const { return memories.shape()[1]; }

  /// A frozen bank passes no gradient to its memories and optimizers skip them.
  /// The key projection stays trainable.
  void freeze() { memories.set_requires_grad(false); }
  void unfreeze() { memories.set_requires_grad(true); }
  bool frozen() const { return !memories.requires_grad(); }

  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct FusedTexture {
  Tensor<T> attention;      // [t, n], a_ij; empty rows when no memory was used
  Tensor<T> word_textures;  // [t, l], h^_i
  Tensor<T> global;         // [l], mean over words

  std::size_t length() const { return word_textures.shape()[0]; }
};

/// a_ij = softmax_j(h_i . W m_j), h^_i = sum_j a_ij m_j, global = mean_i h^_i.
template <typename T>
FusedTexture<T> fuse_memory(const TextEncoding<T>& text, const MemoryBank<T>& bank);

/// One-hot attention row over n memories; the hot index is uniform.
std::vector<double> sample_random_attention(std::size_t n, std::mt19937_64& rng);

/// `rows` [t, n] of independently sampled one-hot attention rows.
template <typename T>
Tensor<T> random_attention_rows(std::size_t t, std::size_t n, std::mt19937_64& rng);

/// Word textures from externally supplied attention rows, bypassing the text.
/// Every row must be a point of the probability simplex (sum 1 +- 1e-6).
template <typename T>
FusedTexture<T> texture_from_attention(const Tensor<T>& rows, const MemoryBank<T>& bank);

}  // namespace mimnet
