#include "lokt/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <stdexcept>

namespace lokt {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr ||
      EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest init failed");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Sha256& Sha256::update(std::string_view bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
  return *this;
}

Sha256& Sha256::update(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU).contiguous();
  update(std::string(c.dtype().name()));
  for (auto s : c.sizes()) {
    update(std::to_string(s) + ",");
  }
  update(std::string_view(static_cast<const char*>(c.data_ptr()),
                          static_cast<size_t>(c.numel()) * c.element_size()));
  return *this;
}

std::string Sha256::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), md.data(), &len);
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    std::array<char, 3> buf{};
    std::snprintf(buf.data(), buf.size(), "%02x", md[i]);
    out += buf.data();
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) { return Sha256().update(bytes).hex(); }

std::string tensor_digest(const torch::Tensor& t) { return Sha256().update(t).hex(); }

}  // namespace lokt
