#include "mimnet/text.hpp"

#include <cctype>
#include <fstream>

namespace mimnet {

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<unk>"};
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
  for (const auto& t : tokens) add(t);
}

int Vocabulary::add(const std::string& token) {
  if (token.empty()) throw InputError("vocabulary: empty token");
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InputError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write vocabulary to " + path.string());
  for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw FormatError("failed writing vocabulary to " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read vocabulary from " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": empty token");
    if (v.contains(line)) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": duplicate token " + line);
    v.add(line);
  }
  return v;
}

std::vector<std::string> split_words(std::string_view caption) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : caption) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<int> tokenize(std::string_view caption, const Vocabulary& vocab) {
  auto words = split_words(caption);
  if (words.empty()) throw InputError("tokenize: caption has no words");
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

template <typename T>
TextEncoder<T> TextEncoder<T>::create(Initializer& init, std::size_t vocab_size, std::size_t embed_dim,
                                      std::size_t text_dim, std::size_t max_length) {
  if (text_dim % 2) throw DimensionError("text encoder: d_text must be even, got " + std::to_string(text_dim));
  const std::size_t h = text_dim / 2;
  TextEncoder e;
  e.embedding = init.normal<T>({vocab_size, embed_dim}, 1.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (auto* dir : {&e.forward, &e.backward}) {
    dir->input_weight = init.uniform<T>({embed_dim, 4 * h}, bound);
    dir->hidden_weight = init.uniform<T>({h, 4 * h}, bound);
    dir->bias = init.zeros<T>({4 * h});
  }
  e.max_length = max_length;
  return e;
}

template <typename T>
void TextEncoder<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".embedding", embedding});
  out.push_back({prefix + ".fwd.input_weight", forward.input_weight});
  out.push_back({prefix + ".fwd.hidden_weight", forward.hidden_weight});
  out.push_back({prefix + ".fwd.bias", forward.bias});
  out.push_back({prefix + ".bwd.input_weight", backward.input_weight});
  out.push_back({prefix + ".bwd.hidden_weight", backward.hidden_weight});
  out.push_back({prefix + ".bwd.bias", backward.bias});
}

template <typename T>
TextEncoder<T> TextEncoder<T>::detached() const {
  TextEncoder e;
  e.embedding = embedding.detach();
  e.forward = {forward.input_weight.detach(), forward.hidden_weight.detach(), forward.bias.detach()};
  e.backward = {backward.input_weight.detach(), backward.hidden_weight.detach(), backward.bias.detach()};
  e.max_length = max_length;
  return e;
}

namespace {

// Hidden states of one direction, in sequence order of `positions`.
template <typename T>
std::vector<Tensor<T>> run_direction(const Tensor<T>& embedded, const LstmDirection<T>& dir,
                                     const std::vector<std::size_t>& positions) {
  using namespace ops;
  const std::size_t H = dir.hidden_weight.shape()[0];
  const Tensor<T> projected = add(matmul(embedded, dir.input_weight), dir.bias);  // [t, 4H]
  Tensor<T> h = Tensor<T>::zeros({1, H});
  Tensor<T> c = Tensor<T>::zeros({1, H});
  std::vector<Tensor<T>> states(positions.size());
  for (std::size_t pos : positions) {
    const Tensor<T> gates = add(slice(projected, 0, pos, 1), matmul(h, dir.hidden_weight));
    const Tensor<T> i = sigmoid(slice(gates, 1, 0, H));
    const Tensor<T> f = sigmoid(slice(gates, 1, H, H));
    const Tensor<T> g = tanh(slice(gates, 1, 2 * H, H));
    const Tensor<T> o = sigmoid(slice(gates, 1, 3 * H, H));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    states[pos] = h;
  }
  return states;
}

}  // namespace

template <typename T>
TextEncoding<T> encode_text(const std::vector<int>& ids, const TextEncoder<T>& encoder) {
  TextEncoding<T> enc;
  for (int id : ids) {
    if (id != Vocabulary::kPad) enc.token_ids.push_back(id);
  }
  const std::size_t t = enc.token_ids.size();
  if (t == 0) throw InputError("encode_text: caption has no tokens");
  if (t > encoder.max_length) {
    throw InputError("encode_text: caption length " + std::to_string(t) + " exceeds maximum " +
                     std::to_string(encoder.max_length));
  }
  const Tensor<T> embedded = ops::embedding(encoder.embedding, enc.token_ids);
  std::vector<std::size_t> order(t);
  for (std::size_t i = 0; i < t; ++i) order[i] = i;
  auto fwd = run_direction(embedded, encoder.forward, order);
  std::vector<std::size_t> reversed(order.rbegin(), order.rend());
  auto bwd = run_direction(embedded, encoder.backward, reversed);
  std::vector<Tensor<T>> rows;
  rows.reserve(t);
  for (std::size_t i = 0; i < t; ++i) rows.push_back(ops::concat<T>({fwd[i], bwd[i]}, 1));
  enc.hidden = ops::concat(rows, 0);
  return enc;
}

template struct TextEncoder<float>;
template struct TextEncoder<double>;
template TextEncoding<float> encode_text(const std::vector<int>&, const TextEncoder<float>&);
template TextEncoding<double> encode_text(const std::vector<int>&, const TextEncoder<double>&);

}  // namespace mimnet
