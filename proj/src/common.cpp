#include "lokt/common.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <sstream>

namespace lokt {

std::string ImageShape::to_string() const {
  std::ostringstream os;
  os << channels << "x" << height << "x" << width;
  return os.str();
}

bool PixelRange::contains(const torch::Tensor& images, float slack) const {
  if (images.numel() == 0) {
    return true;
  }
  auto mn = images.min().item<float>();
  auto mx = images.max().item<float>();
  return mn >= lo - slack && mx <= hi + slack;
}

void check_image_batch(const torch::Tensor& images, const ImageShape& shape,
                       const PixelRange& range) {
  if (!images.defined() || images.dim() != 4) {
    throw DataError("image batch must be a 4-d (B, C, H, W) tensor");
  }
  if (!images.is_floating_point()) {
    throw DataError("image batch must be floating point");
  }
  if (images.size(1) != shape.channels || images.size(2) != shape.height ||
      images.size(3) != shape.width) {
    std::ostringstream os;
    os << "image batch shape " << images.sizes() << " does not match expected "
       << shape.to_string();
    throw DataError(os.str());
  }
  if (!torch::isfinite(images).all().item<bool>()) {
    throw DataError("image batch contains non-finite values");
  }
  if (!range.contains(images)) {
    std::ostringstream os;
    os << "image batch values outside pixel range [" << range.lo << ", " << range.hi << "]";
    throw DataError(os.str());
  }
}

uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b) {
  auto mix = [](uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27U)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31U);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

at::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

}  // namespace lokt
