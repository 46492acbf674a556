#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mimnet/nn.hpp"

namespace mimnet {

/// Token table with two reserved ids: 0 = PAD, 1 = UNK.
///
/// On disk: one token per line, the first line holding id 2.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  /// Adds a token if absent and returns its id.
  int add(const std::string& token);
  /// Id of a token, or kUnk when it is not in the table.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Lowercases, strips punctuation and splits on whitespace.
std::vector<std::string> split_words(std::string_view caption);

/// Word ids of a caption; unknown words map to UNK. An empty caption is an InputError.
std::vector<int> tokenize(std::string_view caption, const Vocabulary& vocab);

template <typename T>
struct LstmDirection {
  Tensor<T> input_weight;   // [embed, 4H], gate order i, f, g, o
  Tensor<T> hidden_weight;  // [H, 4H]
  Tensor<T> bias;           // [4H]
};

/// Word embeddings followed by a single-layer bidirectional LSTM.
template <typename T>
struct TextEncoder {
  Tensor<T> embedding;  // [vocab, embed]
  LstmDirection<T> forward;
  LstmDirection<T> backward;
  std::size_t max_length = 16;

  static TextEncoder create(Initializer& init, std::size_t vocab_size, std::size_t embed_dim, std::size_t text_dim,
                            std::size_t max_length);
  std::size_t hidden_size() const { return forward.hidden_weight.shape()[0]; }
  std::size_t output_dim() const { return 2 * hidden_size(); }
  void collect(ParamList<T>& out, const std::string& prefix) const;
  TextEncoder detached() const;
};

/// Per-word hidden states h_0..h_{t-1}; row i concatenates the forward and
/// backward states at position i.
template <typename T>
struct TextEncoding {
  std::vector<int> token_ids;
  Tensor<T> hidden;  // [t, d_text]

  std::size_t length() const { return token_ids.size(); }
};

/// Runs the BiLSTM over `ids`. PAD ids are dropped; the remaining length must
/// be within [1, max_length].
template <typename T>
TextEncoding<T> encode_text(const std::vector<int>& ids, const TextEncoder<T>& encoder);

}  // namespace mimnet
