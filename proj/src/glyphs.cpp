#include "lokt/glyphs.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>

namespace lokt::glyphs {
namespace {

constexpr std::string_view kStrokeNames = "abcdefg";

struct Point {
  double x;
  double y;
};

// Stroke endpoints in a unit box: x in [0, 1] left to right, y in [0, 1] top
// to bottom, 0.5 is the middle bar.
constexpr std::array<std::array<Point, 2>, 7> kStrokes = {{
    {{{0, 0}, {1, 0}}},      // a
    {{{1, 0}, {1, 0.5}}},    // b
    {{{1, 0.5}, {1, 1}}},    // c
    {{{0, 1}, {1, 1}}},      // d
    {{{0, 0.5}, {0, 1}}},    // e
    {{{0, 0}, {0, 0.5}}},    // f
    {{{0, 0.5}, {1, 0.5}}},  // g
}};

std::vector<StrokeMask> parse_all(std::initializer_list<const char*> names) {
  std::vector<StrokeMask> out;
  out.reserve(names.size());
  for (const char* n : names) {
    out.push_back(parse_strokes(n));
  }
  return out;
}

}  // namespace

StrokeMask parse_strokes(const std::string& strokes) {
  StrokeMask m = 0;
  for (char c : strokes) {
    auto pos = kStrokeNames.find(c);
    if (pos == std::string_view::npos) {
      throw ConfigError(std::string("unknown stroke '") + c + "'");
    }
    m = static_cast<StrokeMask>(m | (1U << pos));
  }
  return m;
}

std::string format_strokes(StrokeMask mask) {
  std::string out;
  for (size_t i = 0; i < kStrokeNames.size(); ++i) {
    if ((mask >> i) & 1U) {
      out += kStrokeNames[i];
    }
  }
  return out;
}

const std::vector<StrokeMask>& digit_masks() {
  static const auto masks = parse_all({"abcdef", "bc", "abdeg", "abcdg", "bcfg", "acdfg",
                                       "acdefg", "abc", "abcdefg", "abcdfg"});
  return masks;
}

const std::vector<StrokeMask>& letter_masks() {
  static const auto masks =
      parse_all({"abcefg", "cdefg", "adef", "deg", "bcdeg", "adefg", "aefg",
                 "acdef", "bcefg", "cefg", "bcde", "def", "ceg", "cdeg",
                 "abefg", "eg", "defg", "bcdef", "cde", "bcdfg", "abcfg"});
  return masks;
}

std::vector<StrokeMask> symbol_masks(int min_digit_distance) {
  if (min_digit_distance < 1) {
    throw ConfigError("symbol_masks: min_digit_distance must be >= 1");
  }
  std::vector<StrokeMask> out;
  for (unsigned m = 1; m < 128; ++m) {
    if (std::popcount(m) < 2) {
      continue;
    }
    int nearest = 8;
    for (auto d : digit_masks()) {
      nearest = std::min(nearest, std::popcount(m ^ d));
    }
    if (nearest >= min_digit_distance) {
      out.push_back(static_cast<StrokeMask>(m));
    }
  }
  return out;
}

std::vector<StrokeMask> glyph_set(const std::string& name) {
  if (name == "digits") {
    return digit_masks();
  }
  if (name == "letters") {
    return letter_masks();
  }
  if (name == "symbols") {
    return symbol_masks(1);
  }
  if (name == "symbols-d2") {
    return symbol_masks(2);
  }
  throw ConfigError("unknown glyph set '" + name + "'");
}

torch::Tensor render(StrokeMask mask, std::mt19937_64& rng, const RenderOptions& opts) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> jitter(0.0, opts.endpoint_jitter);
  std::normal_distribution<double> noise(0.0, opts.noise_std);

  const auto size = opts.size;
  const double unit_px = static_cast<double>(size) / 16.0;
  const double scale = uniform(0.85, 1.1);
  const double rot = uniform(-0.17, 0.17);
  const double shear = uniform(-0.25, 0.05);
  const double box_w = 6.0 * scale * unit_px;
  const double box_h = 11.0 * scale * unit_px;
  const double cx = size / 2.0 + uniform(-1, 1) * unit_px;
  const double cy = size / 2.0 + uniform(-1, 1) * unit_px;
  const double width = uniform(opts.stroke_width_min, opts.stroke_width_max) * unit_px;
  const double ca = std::cos(rot);
  const double sa = std::sin(rot);

  auto place = [&](Point p) {
    double x = (p.x - 0.5) * box_w;
    double y = (p.y - 0.5) * box_h;
    x -= shear * y;
    return Point{cx + ca * x - sa * y, cy + sa * x + ca * y};
  };

  std::vector<float> img(static_cast<size_t>(size * size), 0.0F);
  for (size_t s = 0; s < kStrokes.size(); ++s) {
    if (((mask >> s) & 1U) == 0) {
      continue;
    }
    Point a = place(kStrokes[s][0]);
    Point b = place(kStrokes[s][1]);
    a.x += jitter(rng);
    a.y += jitter(rng);
    b.x += jitter(rng);
    b.y += jitter(rng);
    if (unit(rng) < opts.shorten_probability) {
      const double t = uniform(0.0, 0.35);
      if (unit(rng) < 0.5) {
        a = {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
      } else {
        b = {b.x - (b.x - a.x) * t, b.y - (b.y - a.y) * t};
      }
    }
    const double intensity = uniform(0.75, 1.0);
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy + 1e-9;
    for (int64_t r = 0; r < size; ++r) {
      for (int64_t c = 0; c < size; ++c) {
        const double px = static_cast<double>(c) + 0.5;
        const double py = static_cast<double>(r) + 0.5;
        const double t = std::clamp(((px - a.x) * dx + (py - a.y) * dy) / len2, 0.0, 1.0);
        const double dist = std::hypot(px - (a.x + t * dx), py - (a.y + t * dy));
        const double v = intensity * std::clamp(width / 2.0 + 0.5 - dist, 0.0, 1.0);
        auto& cell = img[static_cast<size_t>(r * size + c)];
        cell = std::max(cell, static_cast<float>(v));
      }
    }
  }
  for (auto& v : img) {
    const double n = std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0);
    v = static_cast<float>(n * 2.0 - 1.0);
  }
  return torch::from_blob(img.data(), {1, size, size}, torch::kFloat32).clone();
}

RenderedSet render_set(const std::vector<StrokeMask>& masks, int64_t per_class, uint64_t seed,
                       const RenderOptions& opts) {
  const auto n = static_cast<int64_t>(masks.size()) * per_class;
  auto images = torch::empty({n, 1, opts.size, opts.size});
  auto labels = torch::empty({n}, torch::kInt64);
  auto lab = labels.accessor<int64_t, 1>();
  std::mt19937_64 rng(seed);
  int64_t i = 0;
  for (size_t k = 0; k < masks.size(); ++k) {
    for (int64_t j = 0; j < per_class; ++j, ++i) {
      images[i] = render(masks[k], rng, opts);
      lab[i] = static_cast<int64_t>(k);
    }
  }
  return {images, labels};
}

}  // namespace lokt::glyphs
