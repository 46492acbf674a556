#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "mimnet/toyset.hpp"
#include "oracles.hpp"

using namespace mimnet;
namespace fs = std::filesystem;

TEST_CASE("rendering is deterministic") {
  const Attributes a{ShapeKind::Triangle, Color::Purple, Pattern::Striped, Background::Speckled};
  const auto x = render_sample(a, 42), y = render_sample(a, 42);
  CHECK(x.image.values() == y.image.values());
  CHECK(x.mask.values() == y.mask.values());
  CHECK(x.caption == y.caption);
  CHECK(render_sample(a, 43).image.values() != x.image.values());
}

TEST_CASE("combination indices round-trip") {
  std::set<std::size_t> seen;
  for (std::size_t c = 0; c < kCombinationCount; ++c) {
    CHECK(Attributes::from_combination(c).combination() == c);
    seen.insert(c);
  }
  CHECK(seen.size() == 144);
  CHECK_THROWS(Attributes::from_combination(kCombinationCount));
}

TEST_CASE("object area, captions and vocabulary over 1000 samples") {
  const auto vocab = toy_vocabulary();
  std::mt19937_64 rng(5);
  for (int k = 0; k < 1000; ++k) {
    const auto attrs = Attributes::from_combination(rng() % kCombinationCount);
    const auto s = render_sample(attrs, rng());
    std::size_t area = 0;
    for (float m : s.mask.values()) {
      CHECK((m == 0.0f || m == 1.0f));
      area += m == 1.0f;
    }
    const double fraction = static_cast<double>(area) / (32.0 * 32.0);
    CHECK(fraction >= 0.25);
    CHECK(fraction <= 0.60);
    const auto words = split_words(s.caption);
    CHECK(words.size() <= 8);
    for (const auto& w : words) CHECK_MESSAGE(vocab.contains(w), w);
    CHECK(s.caption.find(name_of(attrs.color)) != std::string::npos);
    CHECK(s.caption.find(name_of(attrs.shape)) != std::string::npos);
    CHECK(s.caption.find(name_of(attrs.pattern)) != std::string::npos);
    for (float v : s.image.values()) CHECK(std::abs(v) <= 1.0f);
  }
}

TEST_CASE("each combination has at least three caption templates") {
  std::set<std::string> captions;
  const Attributes a{ShapeKind::Square, Color::Green, Pattern::Solid, Background::Lined};
  for (std::uint64_t seed = 0; seed < 200; ++seed) captions.insert(render_sample(a, seed).caption);
  CHECK(captions.size() >= 3);
}

TEST_CASE("boundary of a constant image is zero") {
  const auto b = boundary_extract(Tensor<float>::full({3, 16, 16}, 0.3f));
  for (float v : b.values()) CHECK(v == 0.0f);
}

TEST_CASE("a vertical step edge responds maximally along the edge columns") {
  std::vector<double> v(3 * 16 * 16);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) v[(c * 16 + y) * 16 + x] = x < 8 ? -1.0 : 1.0;
  const auto b = boundary_extract(Tensor<double>({3, 16, 16}, v));
  double top = 0.0;
  for (double x : b.values()) top = std::max(top, x);
  CHECK(top > 0.0);
  for (std::size_t y = 0; y < 16; ++y) {
    CHECK(b[y * 16 + 7] == top);
    CHECK(b[y * 16 + 8] == top);
    CHECK(b[y * 16 + 3] == 0.0);
  }
}

TEST_CASE("boundary matches the loop Sobel oracle") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 5; ++k) {
    std::vector<double> v(3 * 12 * 10);
    for (auto& x : v) x = u(rng);
    const auto b = boundary_extract(Tensor<double>({3, 12, 10}, v));
    CHECK(oracle::max_abs_diff(oracle::values(b), oracle::sobel(v, 12, 10)) <= 1e-12);
  }
}

TEST_CASE("boundary is translation-equivariant on interior crops") {
  const auto s = render_sample({ShapeKind::Circle, Color::Blue, Pattern::Striped, Background::Checkered}, 9);
  const auto& img = s.image;
  const std::size_t shift = 3, n = 32;
  std::vector<float> moved(3 * n * n, 0.0f);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x + shift < n; ++x) moved[(c * n + y) * n + x + shift] = img[(c * n + y) * n + x];
  const auto a = boundary_extract(img), b = boundary_extract(Tensor<float>({3, n, n}, moved));
  for (std::size_t y = 1; y + 1 < n; ++y)
    for (std::size_t x = 1; x + shift + 1 < n; ++x) CHECK(a[y * n + x] == b[y * n + x + shift]);
}

TEST_CASE("splits are disjoint, cover every attribute and hold out combinations") {
  const auto d = make_split(600, 120, 3);
  CHECK(d.train.size() == 600);
  CHECK(d.test.size() == 120);
  std::set<std::size_t> train_ids, train_combos;
  std::set<int> shapes, colors, patterns, backgrounds;
  for (const auto& s : d.train) {
    train_ids.insert(s.id);
    train_combos.insert(s.attributes.combination());
    shapes.insert(static_cast<int>(s.attributes.shape));
    colors.insert(static_cast<int>(s.attributes.color));
    patterns.insert(static_cast<int>(s.attributes.pattern));
    backgrounds.insert(static_cast<int>(s.attributes.background));
  }
  CHECK(train_ids.size() == 600);
  for (const auto& s : d.test) CHECK(train_ids.count(s.id) == 0);
  CHECK(shapes.size() == kShapeCount);
  CHECK(colors.size() == kColorCount);
  CHECK(patterns.size() == kPatternCount);
  CHECK(backgrounds.size() == kBackgroundCount);

  REQUIRE(d.held_out.size() == kHeldOutCombinations);
  std::set<std::size_t> test_combos;
  for (const auto& s : d.test) test_combos.insert(s.attributes.combination());
  for (auto c : d.held_out) {
    CHECK(train_combos.count(c) == 0);
    CHECK(test_combos.count(c) == 1);
  }
  CHECK_THROWS_AS(make_split(100000, 10, 3), InputError);
  CHECK_THROWS_AS(make_split(0, 10, 3), InputError);
}

TEST_CASE("image files and split directories round-trip") {
  const auto dir = fs::temp_directory_path() / "mimnet_toyset_test";
  fs::remove_all(dir);
  const auto d = make_split(6, 4, 1);
  save_split(dir, "test", d.test);
  const auto back = load_split(dir, "test");
  REQUIRE(back.size() == d.test.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == d.test[i].id);
    CHECK(back[i].caption == d.test[i].caption);
    CHECK(back[i].attributes == d.test[i].attributes);
    // Pixels are stored as 8-bit levels that render_sample produces exactly.
    CHECK(back[i].image.values() == d.test[i].image.values());
    CHECK(back[i].mask.values() == d.test[i].mask.values());
    CHECK(back[i].boundary.values() == d.test[i].boundary.values());
  }
  fs::create_directories(dir / "bad");
  std::ofstream(dir / "bad" / "x.ppm") << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS(read_ppm(dir / "bad" / "x.ppm"), FormatError);
  fs::remove_all(dir);
}
