#include "helpers.hpp"

#include "lokt/baselines.hpp"

#include <gtest/gtest.h>

using namespace lokt;
using namespace lokt::baselines;

namespace {

data::DatasetSplit small_split() {
  data::SplitPolicy p;
  p.private_per_class = 5;
  p.holdout_per_class = 0;
  p.public_dataset = "glyph-letters";
  p.public_size = 120;
  return data::load_and_split(data::DatasetRegistry::builtin(), "glyph-digits", p);
}

BaselineSpec spec(Kind k) {
  BaselineSpec s;
  s.kind = k;
  s.gan = lokt::testing::tiny_gan(3, 16);
  s.classifier.epochs = 2;
  s.classifier.batch_size = 32;
  if (is_augmented(k)) {
    s.augmentation = data::AugmentationPolicy{};
  }
  return s;
}

}  // namespace

TEST(Baselines, EveryVariantQueriesExactlyThePublicSetOnce) {
  auto split = small_split();
  for (auto k : {Kind::DirectI, Kind::DirectII, Kind::AcganI, Kind::AcganII}) {
    oracle::HardLabelOracle o(lokt::testing::linear_backend(10, split.image_shape, 1));
    auto r = run_baseline(spec(k), split, o);
    EXPECT_EQ(o.ledger_report().total, split.public_images.size(0)) << to_string(k);
    EXPECT_EQ(o.ledger_report().at(oracle::QueryPhase::PublicRelabeling), split.public_images.size(0));
    EXPECT_EQ(r.surrogate->num_classes(), 10);
    EXPECT_EQ(r.surrogate->id(), "cd-head");
    EXPECT_EQ(r.gan.has_value(), !is_direct(k));
    EXPECT_EQ(r.surrogate->provenance(),
              is_direct(k) ? surrogate::Provenance::PublicTrained : surrogate::Provenance::CdHead);
  }
}

TEST(Baselines, ConstantOracleDegeneratesWithoutError) {
  auto split = small_split();
  oracle::HardLabelOracle o(lokt::testing::constant_backend(10, split.image_shape, 4));
  auto r = run_baseline(spec(Kind::DirectI), split, o);
  EXPECT_EQ(r.coverage.empty_classes.size(), 9U);
  auto pred = r.surrogate->probabilities(split.private_images).argmax(1);
  EXPECT_TRUE((pred == 4).all().item<bool>());
}

TEST(Baselines, AugmentedVariantsNeedAPolicy) {
  auto s = spec(Kind::DirectII);
  s.augmentation.reset();
  EXPECT_THROW(s.validate(), ConfigError);
  auto j = spec(Kind::AcganII).to_json();
  EXPECT_EQ(BaselineSpec::from_json(j).to_json(), j);
}
