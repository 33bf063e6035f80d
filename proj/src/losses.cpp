#include "lokt/losses.hpp"

namespace lokt::loss {

torch::Tensor clamped_log(const torch::Tensor& p, int64_t* clamped) {
  if (clamped != nullptr) {
    *clamped += (p.detach() < kLogEpsilon).sum().item<int64_t>();
  }
  return torch::log(p.clamp_min(kLogEpsilon));
}

torch::Tensor acgan_dc_loss(const torch::Tensor& p_fake_src, const torch::Tensor& p_real_src,
                            const torch::Tensor& p_class_fake_at_y,
                            const torch::Tensor& p_class_real_at_y, Weights w, int64_t* clamped) {
  auto src = clamped_log(p_fake_src, clamped).mean() + clamped_log(p_real_src, clamped).mean();
  auto cls = clamped_log(p_class_fake_at_y, clamped).mean() +
             clamped_log(p_class_real_at_y, clamped).mean();
  return -w.lambda1 * src - w.lambda2 * cls;
}

torch::Tensor acgan_g_loss(const torch::Tensor& p_fake_src, const torch::Tensor& p_class_fake_at_y,
                           Weights w, int64_t* clamped) {
  return w.lambda1 * clamped_log(p_fake_src, clamped).mean() -
         w.lambda2 * clamped_log(p_class_fake_at_y, clamped).mean();
}

torch::Tensor acgan_g_loss_nonsaturating(const torch::Tensor& p_real_src_of_fake,
                                         const torch::Tensor& p_class_fake_at_y, Weights w,
                                         int64_t* clamped) {
  return -w.lambda1 * clamped_log(p_real_src_of_fake, clamped).mean() -
         w.lambda2 * clamped_log(p_class_fake_at_y, clamped).mean();
}

torch::Tensor tacgan_dc_loss(const torch::Tensor& p_fake_src, const torch::Tensor& p_real_src,
                             const torch::Tensor& p_class_fake_at_ytilde, Weights w,
                             int64_t* clamped) {
  auto src = clamped_log(p_fake_src, clamped).mean() + clamped_log(p_real_src, clamped).mean();
  return -w.lambda1 * src - w.lambda2 * clamped_log(p_class_fake_at_ytilde, clamped).mean();
}

torch::Tensor unconditional_d_loss(const torch::Tensor& p_fake_src,
                                   const torch::Tensor& p_real_src, int64_t* clamped) {
  return -(clamped_log(p_fake_src, clamped).mean() + clamped_log(p_real_src, clamped).mean());
}

torch::Tensor hinge_d_loss(const torch::Tensor& fake_logit, const torch::Tensor& real_logit) {
  return torch::relu(1.0 + fake_logit).mean() + torch::relu(1.0 - real_logit).mean();
}

torch::Tensor hinge_g_loss(const torch::Tensor& fake_logit) { return -fake_logit.mean(); }

torch::Tensor p_real(const torch::Tensor& source_logit) { return torch::sigmoid(source_logit); }

torch::Tensor p_fake(const torch::Tensor& source_logit) { return torch::sigmoid(-source_logit); }

torch::Tensor p_class_at(const torch::Tensor& class_logits, const torch::Tensor& labels) {
  return torch::softmax(class_logits, 1).gather(1, labels.view({-1, 1})).squeeze(1);
}

}  // namespace lokt::loss
