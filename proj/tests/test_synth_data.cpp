#include <gtest/gtest.h>

#include <algorithm>

#include "mgd/trainer.hpp"

using namespace mgd;

TEST(Generate, ZeroNoiseMakesClassesConstant) {
  SynthSpec spec;
  spec.samples_per_class = 5;
  spec.noise_sigma = 0.0;
  const auto d = generate(spec);
  for (std::size_t s = spec.n_classes; s < d.size(); ++s) {
    EXPECT_EQ(d.images[s], d.images[s % spec.n_classes]);
  }
  // distinct classes are distinct patterns
  for (std::size_t a = 0; a < spec.n_classes; ++a) {
    for (std::size_t b = a + 1; b < spec.n_classes; ++b) EXPECT_NE(d.images[a], d.images[b]);
  }
}

TEST(Generate, DeterministicPerSeed) {
  SynthSpec spec;
  spec.samples_per_class = 10;
  spec.seed = 9;
  const auto a = generate(spec);
  const auto b = generate(spec);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  spec.seed = 10;
  EXPECT_NE(generate(spec).images, a.images);
}

TEST(Generate, BalancedAndClamped) {
  SynthSpec spec;
  spec.samples_per_class = 13;
  spec.noise_sigma = 2.0;
  const auto d = generate(spec);
  std::vector<std::size_t> counts(spec.n_classes, 0);
  for (auto l : d.labels) ++counts[l];
  for (auto c : counts) EXPECT_EQ(c, 13u);
  for (const auto& img : d.images) {
    for (double v : img.values()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Generate, RejectsInvalidSpec) {
  SynthSpec spec;
  spec.n_classes = 1;
  EXPECT_THROW(generate(spec), ValueError);
  spec = {};
  spec.noise_sigma = -0.1;
  EXPECT_THROW(generate(spec), ValueError);
}

TEST(Split, StratifiedAndDisjoint) {
  SynthSpec spec;
  spec.samples_per_class = 10;
  const auto d = generate(spec);
  const auto s = split(d, 0.2, 3);
  EXPECT_EQ(s.val.size(), 16u);
  EXPECT_EQ(s.train.size(), 64u);
  std::vector<std::size_t> counts(spec.n_classes, 0);
  for (auto l : s.val.labels) ++counts[l];
  for (auto c : counts) EXPECT_EQ(c, 2u);
  EXPECT_THROW(split(d, 1.0, 0), ValueError);
}

TEST(Standardize, UsesTrainingStatistics) {
  SynthSpec spec;
  spec.samples_per_class = 20;
  auto s = split(generate(spec), 0.2, 1);
  const auto before = pixel_stats(s.train);
  const auto val0 = s.val.images[0];
  standardize(s);
  const auto after = pixel_stats(s.train);
  EXPECT_NEAR(after.mean, 0.0, 1e-9);
  EXPECT_NEAR(after.stddev, 1.0, 1e-9);
  EXPECT_NEAR(s.val.images[0](0, 0), (val0(0, 0) - before.mean) / before.stddev, 1e-12);
}

TEST(Generate, ConvProbeSeparatesClassesAtLowNoise) {
  // One 3x3 conv stage + ReLU + global average pool + linear head.
  SynthSpec spec;
  spec.samples_per_class = 60;
  spec.noise_sigma = 0.1;
  spec.seed = 17;
  auto data = split(generate(spec), 0.2, spec.seed);
  standardize(data);
  TrainConfig probe;
  probe.widths = {8};
  probe.epochs = 30;
  probe.lr = 0.02;
  probe.distill = false;
  probe.seed = 1;
  const auto r = train(probe, data, nullptr);
  EXPECT_GT(r.log.final_val_acc(), 90.0);
}
