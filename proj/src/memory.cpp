#include "mimnet/memory.hpp"

#include <cmath>

namespace mimnet {

template <typename T>
MemoryBank<T> MemoryBank<T>::create(Initializer& init, std::size_t count, std::size_t width, std::size_t text_dim) {
  if (count == 0 || width == 0) throw DimensionError("memory bank needs n >= 1 and l >= 1");
  MemoryBank b;
  b.memories = init.normal<T>({count, width}, 0.02);
  b.key = init.uniform<T>({text_dim, width}, std::sqrt(3.0 / static_cast<double>(text_dim)));
  return b;
}

template <typename T>
void MemoryBank<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".memories", memories});
  out.push_back({prefix + ".key", key});
}

template <typename T>
FusedTexture<T> fuse_memory(const TextEncoding<T>& text, const MemoryBank<T>& bank) {
  using namespace ops;
  const auto& h = text.hidden;
  if (h.rank() != 2 || h.shape()[1] != bank.key.shape()[0] || bank.key.shape()[1] != bank.width()) {
    throw DimensionError("fuse_memory: text states " + to_string(h.shape()) + " incompatible with key projection " +
                         to_string(bank.key.shape()) + " and memories " + to_string(bank.memories.shape()));
  }
  FusedTexture<T> out;
  const Tensor<T> logits = matmul(matmul(h, bank.key), transpose(bank.memories));  // [t, n]
  out.attention = softmax(logits, 1);
  out.word_textures = matmul(out.attention, bank.memories);
  out.global = mean(out.word_textures, 0);
  return out;
}

std::vector<double> sample_random_attention(std::size_t n, std::mt19937_64& rng) {
  if (n == 0) throw InputError("sample_random_attention: n must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> row(n, 0.0);
  row[pick(rng)] = 1.0;
  return row;
}

template <typename T>
Tensor<T> random_attention_rows(std::size_t t, std::size_t n, std::mt19937_64& rng) {
  std::vector<T> values;
  values.reserve(t * n);
  for (std::size_t i = 0; i < t; ++i) {
    for (double v : sample_random_attention(n, rng)) values.push_back(static_cast<T>(v));
  }
  return Tensor<T>({t, n}, std::move(values));
}

template <typename T>
FusedTexture<T> texture_from_attention(const Tensor<T>& rows, const MemoryBank<T>& bank) {
  if (rows.rank() != 2 || rows.shape()[1] != bank.count()) {
    throw DimensionError("texture_from_attention: rows " + to_string(rows.shape()) + " do not match " +
                         std::to_string(bank.count()) + " memories");
  }
  const std::size_t t = rows.shape()[0], n = rows.shape()[1];
  for (std::size_t i = 0; i < t; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = static_cast<double>(rows[i * n + j]);
      if (!(v >= 0.0)) throw InputError("texture_from_attention: row " + std::to_string(i) + " has a negative entry");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw InputError("texture_from_attention: row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
  }
  FusedTexture<T> out;
  out.attention = rows;
  out.word_textures = ops::matmul(rows, bank.memories);
  out.global = ops::mean(out.word_textures, 0);
  return out;
}

template struct MemoryBank<float>;
template struct MemoryBank<double>;
template FusedTexture<float> fuse_memory(const TextEncoding<float>&, const MemoryBank<float>&);
template FusedTexture<double> fuse_memory(const TextEncoding<double>&, const MemoryBank<double>&);
template Tensor<float> random_attention_rows(std::size_t, std::size_t, std::mt19937_64&);
template Tensor<double> random_attention_rows(std::size_t, std::size_t, std::mt19937_64&);
template FusedTexture<float> texture_from_attention(const Tensor<float>&, const MemoryBank<float>&);
template FusedTexture<double> texture_from_attention(const Tensor<double>&, const MemoryBank<double>&);

}  // namespace mimnet
