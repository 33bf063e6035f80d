#pragma once

#include "lokt/common.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace lokt::glyphs {

// Procedural stroke-glyph renderer. Every glyph identity is a subset of the
// seven strokes of a segment display:
//
//    aaa
//   f   b
//    ggg
//   e   c
//    ddd
//
// Rendering applies per-sample geometric jitter (scale, rotation, shear,
// translation, endpoint noise, occasional stroke shortening), a random stroke
// width and additive pixel noise, so every identity is a cloud of images with
// easy (prototypical) and hard (distorted) members.

/// Bit i set means stroke "abcdefg"[i] is drawn.
using StrokeMask = uint8_t;

StrokeMask parse_strokes(const std::string& strokes);
std::string format_strokes(StrokeMask mask);

/// Digits 0-9 in stroke form.
const std::vector<StrokeMask>& digit_masks();

/// Letter-like identities (A b C c d E F G H h J L n o P r t U u y q). None of
/// them coincides with a digit.
const std::vector<StrokeMask>& letter_masks();

/// Every stroke subset with at least two strokes whose Hamming distance to the
/// nearest digit is at least `min_digit_distance` (>= 1).
std::vector<StrokeMask> symbol_masks(int min_digit_distance);

/// Resolves a named glyph set ("digits", "letters", "symbols", "symbols-d2").
std::vector<StrokeMask> glyph_set(const std::string& name);

struct RenderOptions {
  int64_t size = 16;
  double stroke_width_min = 0.9;
  double stroke_width_max = 1.7;
  double endpoint_jitter = 0.35;
  double shorten_probability = 0.15;
  double noise_std = 0.04;
};

/// Renders one glyph into a (1, size, size) tensor with values in [-1, 1].
torch::Tensor render(StrokeMask mask, std::mt19937_64& rng, const RenderOptions& opts = {});

/// Renders `per_class` samples of every mask; labels are the mask indices.
/// Output images are (masks.size() * per_class, 1, size, size), class-major.
struct RenderedSet {
  torch::Tensor images;
  torch::Tensor labels;
};
RenderedSet render_set(const std::vector<StrokeMask>& masks, int64_t per_class, uint64_t seed,
                       const RenderOptions& opts = {});

}  // namespace lokt::glyphs
