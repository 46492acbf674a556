#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "mimnet/gradcheck.hpp"
#include "mimnet/text.hpp"
#include "oracles.hpp"

using namespace mimnet;

TEST_CASE("split_words lowercases and drops punctuation") {
  CHECK(split_words("A Red, striped circle!") == std::vector<std::string>{"a", "red", "striped", "circle"});
  CHECK(split_words("   ").empty());
}

TEST_CASE("vocabulary maps unknown words to UNK and round-trips through a file") {
  Vocabulary v({"red", "circle"});
  CHECK(v.id("red") >= 2);
  CHECK(v.id("zebra") == Vocabulary::kUnk);
  CHECK(tokenize("red zebra", v) == std::vector<int>{v.id("red"), Vocabulary::kUnk});
  CHECK_THROWS_AS(tokenize("...", v), InputError);

  const auto path = std::filesystem::temp_directory_path() / "mimnet_vocab_test.txt";
  v.save(path);
  const auto back = Vocabulary::load(path);
  CHECK(back.size() == v.size());
  CHECK(back.id("circle") == v.id("circle"));
  std::filesystem::remove(path);
}

TEST_CASE("LSTM encoder matches a scalar cell oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Initializer init(seed);
    const auto enc = TextEncoder<double>::create(init, 12, 5, 6, 8);
    std::mt19937_64 rng(seed);
    std::vector<int> ids(1 + rng() % 7);
    for (auto& id : ids) id = 2 + static_cast<int>(rng() % 10);
    const auto out = encode_text(ids, enc);
    CHECK(out.hidden.shape() == Shape{ids.size(), 6});
    CHECK(oracle::max_abs_diff(oracle::values(out.hidden), oracle::encode_text(ids, enc)) < 1e-12);
  }
}

TEST_CASE("the backward direction reads the caption right to left") {
  Initializer init(4);
  const auto enc = TextEncoder<double>::create(init, 10, 4, 4, 8);
  const auto a = encode_text({2, 3, 4}, enc);
  // The last word's backward state depends only on that word.
  const auto b = encode_text({4}, enc);
  CHECK(a.hidden[2 * 4 + 2] == doctest::Approx(b.hidden[2]).epsilon(1e-14));
  CHECK(a.hidden[2 * 4 + 3] == doctest::Approx(b.hidden[3]).epsilon(1e-14));
  // The first word's forward state likewise.
  const auto c = encode_text({2}, enc);
  CHECK(a.hidden[0] == doctest::Approx(c.hidden[0]).epsilon(1e-14));
}

TEST_CASE("padding is stripped and over-long captions are rejected") {
  Initializer init(5);
  const auto enc = TextEncoder<double>::create(init, 10, 4, 4, 3);
  const auto out = encode_text({Vocabulary::kPad, 3, Vocabulary::kPad, 4}, enc);
  CHECK(out.length() == 2);
  CHECK(out.hidden.values() == encode_text({3, 4}, enc).hidden.values());
  CHECK_THROWS_AS(encode_text({2, 3, 4, 5}, enc), InputError);
  CHECK_THROWS_AS(encode_text({Vocabulary::kPad}, enc), InputError);
  CHECK_THROWS_AS(TextEncoder<double>::create(init, 10, 4, 5, 3), DimensionError);
}

TEST_CASE("encode_text gradients agree with central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Initializer init(seed);
    const auto enc = TextEncoder<double>::create(init, 8, 3, 4, 8);
    ParamList<double> params;
    enc.collect(params, "text");
    std::vector<Tensor<double>> inputs;
    for (auto& p : params) {
      // Nonzero biases keep the check away from a symmetric starting point.
      if (p.name.ends_with("bias")) {
        for (auto& b : p.tensor.mutable_data()) b = 0.1 * static_cast<double>(&b - p.tensor.mutable_data().data()) - 0.3;
      }
      inputs.push_back(p.tensor);
    }
    // Fixed random projection of the hidden states.
    const auto w = init.normal<double>(encode_text({2, 5, 3, 7}, enc).hidden.shape(), 1.0);
    auto loss = [&] { return ops::sum(ops::mul(encode_text({2, 5, 3, 7}, enc).hidden, w)); };
    CHECK(grad_check(loss, inputs, 1e-5, 1e-4).max_relative_error <= 1e-4);
  }
}
