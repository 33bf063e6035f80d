#pragma once

#include "lokt/common.hpp"

namespace lokt::loss {

// All probability arguments are per-sample tensors of shape (B,). Every
// log(p) is taken as log(max(p, kLogEpsilon)); the number of clamped entries
// is added to *clamped when a counter is supplied.
inline constexpr double kLogEpsilon = 1e-8;

struct Weights {
  double lambda1 = 1.0;  // adversarial (source) terms
  double lambda2 = 1.0;  // classification terms
};

torch::Tensor clamped_log(const torch::Tensor& p, int64_t* clamped = nullptr);

/// D and C loss of a standard ACGAN:
///   -λ1 (E log P(Fake|x_f) + E log P(Real|x_r)) - λ2 (E log P(y|x_f) + E log P(y|x_r))
torch::Tensor acgan_dc_loss(const torch::Tensor& p_fake_src, const torch::Tensor& p_real_src,
                            const torch::Tensor& p_class_fake_at_y,
                            const torch::Tensor& p_class_real_at_y, Weights w = {},
                            int64_t* clamped = nullptr);

/// Generator loss, literal minimax form:
///   λ1 E log P(Fake|x_f) - λ2 E log P(y|x_f)
torch::Tensor acgan_g_loss(const torch::Tensor& p_fake_src, const torch::Tensor& p_class_fake_at_y,
                           Weights w = {}, int64_t* clamped = nullptr);

/// Generator loss with the non-saturating adversarial term:
///   -λ1 E log P(Real|x_f) - λ2 E log P(y|x_f)
torch::Tensor acgan_g_loss_nonsaturating(const torch::Tensor& p_real_src_of_fake,
                                         const torch::Tensor& p_class_fake_at_y, Weights w = {},
                                         int64_t* clamped = nullptr);

/// Target-assisted D and C loss. Real samples enter the source term only;
/// the class term uses the oracle label ỹ of each fake sample:
///   -λ1 (E log P(Fake|x_f) + E log P(Real|x_p)) - λ2 E log P(ỹ|x_f)
torch::Tensor tacgan_dc_loss(const torch::Tensor& p_fake_src, const torch::Tensor& p_real_src,
                             const torch::Tensor& p_class_fake_at_ytilde, Weights w = {},
                             int64_t* clamped = nullptr);

/// -(E log P(Fake|x_f) + E log P(Real|x_r))
torch::Tensor unconditional_d_loss(const torch::Tensor& p_fake_src,
                                   const torch::Tensor& p_real_src, int64_t* clamped = nullptr);

/// Hinge alternatives on raw source logits.
torch::Tensor hinge_d_loss(const torch::Tensor& fake_logit, const torch::Tensor& real_logit);
torch::Tensor hinge_g_loss(const torch::Tensor& fake_logit);

/// P(Real|x) = sigmoid(logit), P(Fake|x) = 1 - P(Real|x).
torch::Tensor p_real(const torch::Tensor& source_logit);
torch::Tensor p_fake(const torch::Tensor& source_logit);
/// softmax(logits)[i, labels[i]].
torch::Tensor p_class_at(const torch::Tensor& class_logits, const torch::Tensor& labels);

}  // namespace lokt::loss
