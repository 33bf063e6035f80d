#pragma once

#include <torch/torch.h>

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lokt {

/// Height, width and channel count of a single image. Batches are laid out
/// as (batch, channels, height, width).
struct ImageShape {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 1;

  auto operator<=>(const ImageShape&) const = default;

  int64_t numel() const { return height * width * channels; }
  std::string to_string() const;
};

/// Closed interval every pixel value must lie in.
struct PixelRange {
  float lo = -1.0F;
  float hi = 1.0F;

  auto operator<=>(const PixelRange&) const = default;

  bool contains(const torch::Tensor& images, float slack = 1e-5F) const;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Raised when an attacker-side code path tries to observe soft outputs of the
/// target model.
class PrivilegeViolation : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

/// Throws DataError unless `images` is a (B, C, H, W) float batch matching
/// `shape` with every value inside `range`.
void check_image_batch(const torch::Tensor& images, const ImageShape& shape,
                       const PixelRange& range);

/// Deterministic sub-seed derivation (splitmix64 over the inputs).
uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0);

/// A torch CPU generator seeded with `seed`.
at::Generator make_generator(uint64_t seed);

}  // namespace lokt
