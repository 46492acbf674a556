#include "mimnet/toyset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "mimnet/seed.hpp"

namespace mimnet {
namespace {

using Rgb = std::array<int, 3>;

constexpr std::array<Rgb, kColorCount> kPalette = {{
    {220, 40, 40},   // red
    {40, 180, 60},   // green
    {50, 80, 220},   // blue
    {230, 210, 40},  // yellow
    {150, 60, 190},  // purple
    {240, 140, 30},  // orange
}};

constexpr std::size_t kMinArea = kToyImageSize * kToyImageSize / 4;       // 25%
constexpr std::size_t kMaxArea = kToyImageSize * kToyImageSize * 3 / 5;   // 60%

// Uniform integer in [lo, hi] from raw engine output. The modulo bias is
// irrelevant here and keeps results identical across standard libraries.
int draw(std::mt19937& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint32_t>(hi - lo + 1));
}

using Mask = std::array<std::uint8_t, kToyImageSize * kToyImageSize>;

Mask rasterize(ShapeKind shape, std::mt19937& rng) {
  constexpr int S = kToyImageSize;
  Mask m{};
  switch (shape) {
    case ShapeKind::Circle: {
      const int r = draw(rng, 9, 13);
      const int cx = draw(rng, r, S - 1 - r), cy = draw(rng, r, S - 1 - r);
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) m[y * S + x] = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
      break;
    }
    case ShapeKind::Square: {
      const int side = draw(rng, 16, 24);
      const int x0 = draw(rng, 0, S - side), y0 = draw(rng, 0, S - side);
      for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) m[y * S + x] = 1;
      break;
    }
    case ShapeKind::Triangle: {
      // Upright isosceles triangle; row k spans a width proportional to k+1.
      const int base = draw(rng, 22, S - 1), height = draw(rng, 22, S - 1);
      const int x0 = draw(rng, 0, S - base), y0 = draw(rng, 0, S - height);
      for (int k = 0; k < height; ++k)
        for (int x = x0; x < x0 + base; ++x) {
          const int offset = std::abs(2 * x + 1 - (2 * x0 + base));
          m[(y0 + k) * S + x] = offset * height <= (k + 1) * base;
        }
      break;
    }
  }
  return m;
}

int background_level(Background bg, int x, int y, std::mt19937& rng) {
  switch (bg) {
    case Background::Plain: return 125;
    case Background::Checkered: return ((x / 4) + (y / 4)) % 2 ? 150 : 100;
    case Background::Lined: return (y / 2) % 2 ? 145 : 95;
    case Background::Speckled: return draw(rng, 90, 160);
  }
  return 0;
}

constexpr std::array<const char*, 4> kTemplates = {
    "a {color} {pattern} {shape}",
    "the {shape} is {color} and {pattern}",
    "a {pattern} {shape} colored {color}",
    "this {shape} is {pattern} and {color}",
};

std::string fill_template(std::string text, const Attributes& a) {
  auto replace = [&text](const std::string& key, const std::string& value) {
    const auto pos = text.find(key);
    if (pos != std::string::npos) text.replace(pos, key.size(), value);
  };
  replace("{color}", name_of(a.color));
  replace("{pattern}", name_of(a.pattern));
  replace("{shape}", name_of(a.shape));
  return text;
}

template <typename T>
Tensor<T> sobel(const Tensor<T>& image) {
  if (image.rank() != 3 || image.shape()[0] != 3) {
    throw DimensionError("boundary_extract: expected a [3xHxW] image, got " + to_string(image.shape()));
  }
  const std::size_t h = image.shape()[1], w = image.shape()[2], p = h * w;
  const auto& v = image.values();
  std::vector<T> lum(p);
  for (std::size_t i = 0; i < p; ++i) {
    lum[i] = (T(0.299) * (v[i] + 1) + T(0.587) * (v[p + i] + 1) + T(0.114) * (v[2 * p + i] + 1)) / T(2);
  }
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return lum[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  const T norm = T(4) * std::sqrt(T(2));
  std::vector<T> out(p);
  for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(h); ++y) {
    for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(w); ++x) {
      const T gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                   (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      const T gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                   (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
      out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] =
          std::min(T(1), std::sqrt(gx * gx + gy * gy) / norm);
    }
  }
  return Tensor<T>({1, h, w}, std::move(out));
}

float to_unit(int level) { return static_cast<float>(level) / 127.5f - 1.0f; }

int to_level(float v) {
  return std::clamp(static_cast<int>(std::lround((static_cast<double>(v) + 1.0) * 127.5)), 0, 255);
}

void write_binary_image(const std::filesystem::path& path, const char* magic, std::size_t w, std::size_t h,
                        const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

std::vector<unsigned char> read_binary_image(const std::filesystem::path& path, const std::string& magic,
                                             std::size_t channels, std::size_t& w, std::size_t& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string got;
  int maxval = 0;
  in >> got >> w >> h >> maxval;
  if (!in || got != magic || maxval != 255 || w == 0 || h == 0) {
    throw FormatError(path.string() + ": expected a " + magic + " image with maxval 255");
  }
  in.get();  // single whitespace byte before the raster
  std::vector<unsigned char> bytes(w * h * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError(path.string() + ": truncated raster");
  return bytes;
}

template <typename E>
E parse_enum(const std::string& word, std::size_t count, const char* what) {
  for (std::size_t i = 0; i < count; ++i) {
    if (word == name_of(static_cast<E>(i))) return static_cast<E>(i);
  }
  throw FormatError(std::string("unknown ") + what + " '" + word + "' in manifest");
}

}  // namespace

const char* name_of(ShapeKind v) {
  static constexpr const char* names[] = {"circle", "square", "triangle"};
  return names[static_cast<int>(v)];
}
const char* name_of(Color v) {
  static constexpr const char* names[] = {"red", "green", "blue", "yellow", "purple", "orange"};
  return names[static_cast<int>(v)];
}
const char* name_of(Pattern v) {
  static constexpr const char* names[] = {"solid", "striped"};
  return names[static_cast<int>(v)];
}
const char* name_of(Background v) {
  static constexpr const char* names[] = {"plain", "checkered", "lined", "speckled"};
  return names[static_cast<int>(v)];
}

std::size_t Attributes::combination() const {
  return ((static_cast<std::size_t>(shape) * kColorCount + static_cast<std::size_t>(color)) * kPatternCount +
          static_cast<std::size_t>(pattern)) *
             kBackgroundCount +
         static_cast<std::size_t>(background);
}

Attributes Attributes::from_combination(std::size_t index) {
  if (index >= kCombinationCount) throw InputError("attribute combination " + std::to_string(index) + " out of range");
  Attributes a;
  a.background = static_cast<Background>(index % kBackgroundCount);
  index /= kBackgroundCount;
  a.pattern = static_cast<Pattern>(index % kPatternCount);
  index /= kPatternCount;
  a.color = static_cast<Color>(index % kColorCount);
  a.shape = static_cast<ShapeKind>(index / kColorCount);
  return a;
}

ToySample render_sample(const Attributes& attributes, std::uint64_t seed) {
  constexpr int S = kToyImageSize;
  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
  Mask mask;
  std::size_t area = 0;
  do {
    mask = rasterize(attributes.shape, rng);
    area = 0;
    for (auto m : mask) area += m;
  } while (area < kMinArea || area > kMaxArea);

  const Rgb base = kPalette[static_cast<std::size_t>(attributes.color)];
  const Rgb dark = {base[0] * 45 / 100, base[1] * 45 / 100, base[2] * 45 / 100};
  std::vector<float> pixels(3 * S * S), mvals(S * S);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const int i = y * S + x;
      const int bg = background_level(attributes.background, x, y, rng);
      Rgb c = {bg, bg, bg};
      if (mask[i]) c = attributes.pattern == Pattern::Striped && ((x + y) / 3) % 2 ? dark : base;
      for (int ch = 0; ch < 3; ++ch) pixels[ch * S * S + i] = to_unit(c[ch]);
      mvals[i] = mask[i] ? 1.0f : 0.0f;
    }
  }
  ToySample s;
  s.attributes = attributes;
  s.caption = fill_template(kTemplates[rng() % kTemplates.size()], attributes);
  s.image = Tensor<float>({3, S, S}, std::move(pixels));
  s.boundary = boundary_extract(s.image);
  s.mask = Tensor<float>({1, S, S}, std::move(mvals));
  return s;
}

Tensor<float> boundary_extract(const Tensor<float>& image) { return sobel(image); }
Tensor<double> boundary_extract(const Tensor<double>& image) { return sobel(image); }

Vocabulary toy_vocabulary() {
  Vocabulary v;
  for (const char* t : kTemplates) {
    for (const auto& w : split_words(t)) {
      if (w.front() != '{') v.add(w);
    }
  }
  for (std::size_t i = 0; i < kColorCount; ++i) v.add(name_of(static_cast<Color>(i)));
  for (std::size_t i = 0; i < kPatternCount; ++i) v.add(name_of(static_cast<Pattern>(i)));
  for (std::size_t i = 0; i < kShapeCount; ++i) v.add(name_of(static_cast<ShapeKind>(i)));
  return v;
}

ToyDataset make_split(std::size_t count_train, std::size_t count_test, std::uint64_t seed) {
  if (count_train == 0 || count_test == 0) throw InputError("make_split: both splits need at least one sample");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(kCombinationCount);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng() % (i + 1)]);

  // Held-out combinations come first in the shuffled order; the rest train.
  std::vector<std::size_t> held(order.begin(), order.begin() + kHeldOutCombinations);
  std::vector<std::size_t> seen(order.begin() + kHeldOutCombinations, order.end());
  const std::size_t train_layouts = (count_train + seen.size() - 1) / seen.size();
  const std::size_t test_rounds = (count_test + kCombinationCount - 1) / kCombinationCount;
  if (train_layouts + test_rounds > kLayoutsPerCombination) {
    throw InputError("make_split: " + std::to_string(count_train) + " train and " + std::to_string(count_test) +
                     " test samples exceed the capacity of " + std::to_string(kLayoutsPerCombination) +
                     " layouts per combination");
  }

  ToyDataset ds;
  ds.held_out = held;
  ds.vocab = toy_vocabulary();
  auto make = [&](std::size_t combination, std::size_t layout) {
    const std::size_t id = combination * kLayoutsPerCombination + layout;
    ToySample s = render_sample(Attributes::from_combination(combination), derive_seed(seed, id));
    s.id = id;
    return s;
  };
  for (std::size_t i = 0; i < count_train; ++i) ds.train.push_back(make(seen[i % seen.size()], i / seen.size()));
  // Test samples cycle over held-out combinations first, taking layouts from
  // the top so they never collide with training layouts.
  std::vector<std::size_t> test_order = held;
  test_order.insert(test_order.end(), seen.begin(), seen.end());
  for (std::size_t j = 0; j < count_test; ++j) {
    ds.test.push_back(make(test_order[j % test_order.size()], kLayoutsPerCombination - 1 - j / test_order.size()));
  }
  return ds;
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.shape()[0] != 3) throw DimensionError("write_ppm: expected [3xHxW], got " + to_string(image.shape()));
  const std::size_t h = image.shape()[1], w = image.shape()[2], p = h * w;
  std::vector<unsigned char> bytes(3 * p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t c = 0; c < 3; ++c) bytes[3 * i + c] = static_cast<unsigned char>(to_level(image[c * p + i]));
  write_binary_image(path, "P6", w, h, bytes);
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  const auto bytes = read_binary_image(path, "P6", 3, w, h);
  const std::size_t p = w * h;
  std::vector<float> v(3 * p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t c = 0; c < 3; ++c) v[c * p + i] = to_unit(bytes[3 * i + c]);
  return Tensor<float>({3, h, w}, std::move(v));
}

void write_pgm(const std::filesystem::path& path, const Tensor<float>& map) {
  if (map.rank() != 3 || map.shape()[0] != 1) throw DimensionError("write_pgm: expected [1xHxW], got " + to_string(map.shape()));
  std::vector<unsigned char> bytes(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::clamp(static_cast<int>(std::lround(map[i] * 255.0f)), 0, 255));
  }
  write_binary_image(path, "P5", map.shape()[2], map.shape()[1], bytes);
}

Tensor<float> read_pgm(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  const auto bytes = read_binary_image(path, "P5", 1, w, h);
  std::vector<float> v(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = static_cast<float>(bytes[i]) / 255.0f;
  return Tensor<float>({1, h, w}, std::move(v));
}

void save_split(const std::filesystem::path& dir, const std::string& split, const std::vector<ToySample>& samples) {
  const auto root = dir / split;
  std::filesystem::create_directories(root);
  std::ofstream manifest(root / "manifest.txt"), captions(root / "captions.txt");
  if (!manifest || !captions) throw FormatError("cannot write manifest in " + root.string());
  manifest << "# id shape color pattern background image boundary mask\n";
  for (const auto& s : samples) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", s.id);
    const std::string image = std::string(stem) + ".ppm", boundary = std::string(stem) + "_boundary.pgm",
                      mask = std::string(stem) + "_mask.pgm";
    write_ppm(root / image, s.image);
    write_pgm(root / boundary, s.boundary);
    write_pgm(root / mask, s.mask);
    const auto& a = s.attributes;
    manifest << s.id << ' ' << name_of(a.shape) << ' ' << name_of(a.color) << ' ' << name_of(a.pattern) << ' '
             << name_of(a.background) << ' ' << image << ' ' << boundary << ' ' << mask << '\n';
    captions << s.caption << '\n';
  }
  if (!manifest || !captions) throw FormatError("failed writing manifest in " + root.string());
}

std::vector<ToySample> load_split(const std::filesystem::path& dir, const std::string& split) {
  const auto root = dir / split;
  std::ifstream manifest(root / "manifest.txt"), captions(root / "captions.txt");
  if (!manifest || !captions) throw FormatError("no manifest/captions in " + root.string());
  std::vector<ToySample> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    ToySample s;
    std::string shape, color, pattern, background, image, boundary, mask;
    if (!(row >> s.id >> shape >> color >> pattern >> background >> image >> boundary >> mask)) {
      throw FormatError(root.string() + "/manifest.txt: malformed line '" + line + "'");
    }
    s.attributes.shape = parse_enum<ShapeKind>(shape, kShapeCount, "shape");
    s.attributes.color = parse_enum<Color>(color, kColorCount, "color");
    s.attributes.pattern = parse_enum<Pattern>(pattern, kPatternCount, "pattern");
    s.attributes.background = parse_enum<Background>(background, kBackgroundCount, "background");
    if (!std::getline(captions, s.caption)) throw FormatError(root.string() + "/captions.txt: fewer lines than manifest");
    s.image = read_ppm(root / image);
    // The PGM copy is quantized; the model input is recomputed from the exact image.
    s.boundary = boundary_extract(s.image);
    s.mask = read_pgm(root / mask);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mimnet
