#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mimnet/tensor.hpp"
#include "mimnet/text.hpp"

namespace mimnet {

enum class ShapeKind : std::uint8_t { Circle, Square, Triangle };
enum class Color : std::uint8_t { Red, Green, Blue, Yellow, Purple, Orange };
enum class Pattern : std::uint8_t { Solid, Striped };
enum class Background : std::uint8_t { Plain, Checkered, Lined, Speckled };

inline constexpr std::size_t kShapeCount = 3;
inline constexpr std::size_t kColorCount = 6;
inline constexpr std::size_t kPatternCount = 2;
inline constexpr std::size_t kBackgroundCount = 4;
inline constexpr std::size_t kCombinationCount = kShapeCount * kColorCount * kPatternCount * kBackgroundCount;

const char* name_of(ShapeKind v);
const char* name_of(Color v);
const char* name_of(Pattern v);
const char* name_of(Background v);

struct Attributes {
  ShapeKind shape = ShapeKind::Circle;
  Color color = Color::Red;
  Pattern pattern = Pattern::Solid;
  Background background = Background::Plain;

  /// Dense index in [0, kCombinationCount).
  std::size_t combination() const;
  static Attributes from_combination(std::size_t index);
  bool operator==(const Attributes&) const = default;
};

struct ToySample {
  std::size_t id = 0;
  Attributes attributes;
  std::string caption;
  Tensor<float> image;     // [3, S, S] in [-1, 1]
  Tensor<float> boundary;  // [1, S, S] in [0, 1]
  Tensor<float> mask;      // [1, S, S] binary; evaluation only
};

inline constexpr std::size_t kToyImageSize = 32;

/// Deterministic rasterization of one sample. The object covers 25-60% of
/// the image; the caption is one of several templates and names only the object.
ToySample render_sample(const Attributes& attributes, std::uint64_t seed);

/// Sobel gradient magnitude of the luminance of `image` [3,H,W] in [-1,1],
/// with replicated borders, divided by its maximum possible value 4*sqrt(2).
Tensor<float> boundary_extract(const Tensor<float>& image);
Tensor<double> boundary_extract(const Tensor<double>& image);

/// Every word that any caption can contain.
Vocabulary toy_vocabulary();

struct ToyDataset {
  std::vector<ToySample> train;
  std::vector<ToySample> test;
  std::vector<std::size_t> held_out;  // combinations absent from train
  Vocabulary vocab;
};

/// Distinct layouts rendered per attribute combination.
inline constexpr std::size_t kLayoutsPerCombination = 64;
/// Combinations reserved for the test split.
inline constexpr std::size_t kHeldOutCombinations = 8;

/// Attribute-balanced train/test splits. Held-out combinations never appear
/// in train; every single attribute value still does. Counts above the
/// split capacity raise InputError.
ToyDataset make_split(std::size_t count_train, std::size_t count_test, std::uint64_t seed);

// Binary PPM (P6) for [3,H,W] images in [-1,1] and PGM (P5) for [1,H,W] maps in [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor<float>& map);
Tensor<float> read_pgm(const std::filesystem::path& path);

/// Writes `<dir>/<split>/` with images, boundaries and masks, plus
/// manifest.txt (one sample per line) and captions.txt (index-aligned).
void save_split(const std::filesystem::path& dir, const std::string& split, const std::vector<ToySample>& samples);
std::vector<ToySample> load_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace mimnet
