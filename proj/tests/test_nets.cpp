#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "mgd/loss.hpp"
#include "mgd/nets.hpp"
#include "oracles.hpp"

using namespace mgd;

namespace {

ToyNet random_net(NetSpec spec, std::uint64_t seed) {
  ToyNet net(std::move(spec));
  std::mt19937_64 rng(seed);
  net.init(rng);
  // non-zero biases so ReLU boundaries are not all at zero
  std::normal_distribution<double> small(0.0, 0.1);
  for (const auto& b : net.layout()) {
    if (b.shape.size() == 1) {
      for (std::size_t k = 0; k < b.size; ++k) net.params()[b.offset + k] = small(rng);
    }
  }
  return net;
}

FeatureMap random_image(std::size_t side, std::mt19937_64& rng) {
  return oracle::random_matrix(1, side * side, rng, -1, 1);
}

// CE on the logits plus a fixed linear functional on every tap, so tap
// gradients flow through backward too.
struct Objective {
  const ToyNet* net;
  FeatureMap image;
  std::size_t label;
  std::vector<FeatureMap> tap_weights;

  double operator()() const {
    const auto pass = net->forward(image);
    double f = softmax_cross_entropy(pass.logits, label).loss;
    for (std::size_t p = 0; p < tap_weights.size(); ++p) {
      for (std::size_t k = 0; k < tap_weights[p].size(); ++k) {
        f += tap_weights[p].values()[k] * pass.taps[p].values()[k];
      }
    }
    return f;
  }
};

}  // namespace

TEST(ToyNet, LayoutAndShapes) {
  ToyNet net(NetSpec{1, 16, {4, 8, 16}, 8});
  EXPECT_EQ(net.stage_count(), 3u);
  EXPECT_EQ(net.tap_side(0), 16u);
  EXPECT_EQ(net.tap_side(1), 8u);
  EXPECT_EQ(net.tap_side(2), 4u);
  const std::size_t expected = (4 * 9 + 4) + (8 * 4 * 9 + 8) + (16 * 8 * 9 + 16) + (8 * 16 + 8);
  EXPECT_EQ(net.parameter_count(), expected);
  EXPECT_EQ(net.layout().front().name, "stage0.weight");
  EXPECT_EQ(net.layout().back().name, "head.bias");
}

TEST(ToyNet, ZeroWeightsGiveZeroOutputs) {
  ToyNet net(NetSpec{1, 8, {3, 5}, 4});
  std::mt19937_64 rng(1);
  const auto pass = net.forward(random_image(8, rng));
  for (double z : pass.logits) EXPECT_EQ(z, 0.0);
  for (const auto& t : pass.taps) {
    for (double v : t.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ToyNet, ForwardIsDeterministicAndPerSample) {
  const ToyNet net = random_net(NetSpec{1, 8, {3, 5}, 4}, 2);
  std::mt19937_64 rng(3);
  const auto a = random_image(8, rng);
  const auto b = random_image(8, rng);
  const auto pa = net.forward(a);
  net.forward(b);
  const auto pa2 = net.forward(a);
  EXPECT_EQ(pa.logits, pa2.logits);
  for (std::size_t p = 0; p < pa.taps.size(); ++p) EXPECT_EQ(pa.taps[p], pa2.taps[p]);
}

TEST(ToyNet, TapsArePreActivations) {
  // ReLU of the last tap, averaged, must reproduce the pooled features.
  const ToyNet net = random_net(NetSpec{1, 8, {3, 5}, 4}, 4);
  std::mt19937_64 rng(5);
  const auto pass = net.forward(random_image(8, rng));
  const auto& z = pass.taps.back();
  bool has_negative = false;
  for (std::size_t c = 0; c < z.rows(); ++c) {
    double s = 0.0;
    for (double v : z.row(c)) {
      s += std::max(v, 0.0);
      has_negative |= v < 0.0;
    }
    EXPECT_NEAR(s / double(z.cols()), pass.pooled[c], 1e-12);
  }
  EXPECT_TRUE(has_negative);
}

TEST(ToyNet, RejectsWrongImageShape) {
  ToyNet net(NetSpec{1, 8, {3}, 4});
  EXPECT_THROW(net.forward(Matrix(1, 63)), DimensionError);
}

TEST(ToyNet, BackwardWithoutForwardThrows) {
  ToyNet net(NetSpec{1, 8, {3}, 4});
  std::vector<double> d(4, 0.0);
  EXPECT_THROW(net.backward(ForwardPass{}, d), std::logic_error);
}

TEST(ToyNet, GradientMatchesFiniteDifferences) {
  // 2 stages of 4 channels on 3x3 images; every weight is checked.
  ToyNet net = random_net(NetSpec{1, 3, {4, 4}, 3}, 6);
  std::mt19937_64 rng(7);
  Objective f{&net, random_image(3, rng), 1, {}};
  for (std::size_t p = 0; p < 2; ++p) {
    f.tap_weights.push_back(oracle::random_matrix(4, net.tap_positions(p), rng, -0.5, 0.5));
  }
  net.zero_grad();
  const auto pass = net.forward(f.image);
  const auto ce = softmax_cross_entropy(pass.logits, f.label);
  net.backward(pass, ce.grad, f.tap_weights);
  const std::vector<double> analytic(net.grads().begin(), net.grads().end());

  double worst = 0.0;
  for (std::size_t k = 0; k < net.parameter_count(); ++k) {
    const double fd = oracle::central_difference(f, net.params()[k], 1e-5);
    if (std::abs(analytic[k]) < 1e-9 && std::abs(fd) < 1e-7) continue;
    worst = std::max(worst, oracle::relative_error(analytic[k], fd, 1e-6));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(ToyNet, ZeroTapGradientsEqualTaskOnly) {
  ToyNet a = random_net(NetSpec{1, 8, {3, 5}, 4}, 8);
  ToyNet b = a;
  std::mt19937_64 rng(9);
  const auto img = random_image(8, rng);
  const auto pass = a.forward(img);
  const auto ce = softmax_cross_entropy(pass.logits, 2);
  a.zero_grad();
  b.zero_grad();
  a.backward(pass, ce.grad);
  std::vector<FeatureMap> zeros{Matrix(3, 64), Matrix(5, 16)};
  b.backward(pass, ce.grad, zeros);
  EXPECT_TRUE(std::equal(a.grads().begin(), a.grads().end(), b.grads().begin()));
}

TEST(Sgd, ZeroLearningRateKeepsWeights) {
  ToyNet net = random_net(NetSpec{1, 8, {3}, 4}, 10);
  const auto before = net.weight_hash();
  for (double& g : net.grads()) g = 1.0;
  Sgd opt(net.parameter_count());
  opt.step(net, {0.0, 0.9, 5e-4});
  EXPECT_EQ(net.weight_hash(), before);
}

TEST(Sgd, PlainStep) {
  ToyNet net = random_net(NetSpec{1, 8, {3}, 4}, 11);
  const std::vector<double> w0(net.params().begin(), net.params().end());
  for (std::size_t k = 0; k < net.parameter_count(); ++k) net.grads()[k] = 0.01 * double(k % 7);
  Sgd opt(net.parameter_count());
  opt.step(net, {0.1, 0.0, 0.0});
  for (std::size_t k = 0; k < net.parameter_count(); ++k) {
    EXPECT_DOUBLE_EQ(net.params()[k], w0[k] - 0.1 * 0.01 * double(k % 7));
  }
}

TEST(Sgd, MomentumRecursionByHand) {
  // Scalar check on the first weight: v1 = g1 + wd*w0, w1 = w0 - lr*v1,
  // v2 = mu*v1 + g2 + wd*w1, w2 = w1 - lr*v2.
  ToyNet net = random_net(NetSpec{1, 8, {3}, 4}, 12);
  const double lr = 0.05, mu = 0.9, wd = 0.01, g1 = 0.3, g2 = -0.7;
  const double w0 = net.params()[0];
  Sgd opt(net.parameter_count());
  net.zero_grad();
  net.grads()[0] = g1;
  opt.step(net, {lr, mu, wd});
  net.grads()[0] = g2;
  opt.step(net, {lr, mu, wd});
  const double v1 = g1 + wd * w0;
  const double w1 = w0 - lr * v1;
  const double v2 = mu * v1 + g2 + wd * w1;
  const double w2 = w1 - lr * v2;
  EXPECT_NEAR(net.params()[0], w2, 1e-15);
}

TEST(Checkpoint, RoundTripAtFloatPrecision) {
  const ToyNet net = random_net(NetSpec{1, 8, {3, 5}, 4}, 13);
  const auto dir = std::filesystem::temp_directory_path() / "mgd_test_ckpt";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "net").string();
  save_checkpoint(net, stem);
  EXPECT_EQ(std::filesystem::file_size(stem + ".bin"), 4 * net.parameter_count());
  const ToyNet back = load_checkpoint(net.spec(), stem);
  for (std::size_t k = 0; k < net.parameter_count(); ++k) {
    EXPECT_EQ(back.params()[k], double(float(net.params()[k])));
  }
  EXPECT_THROW(load_checkpoint(NetSpec{1, 8, {3, 6}, 4}, stem), ValueError);
  EXPECT_THROW(load_checkpoint(net.spec(), (dir / "missing").string()), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(SoftmaxCrossEntropy, GradientSumsToZero) {
  const std::vector<double> z{1.0, -2.0, 0.5};
  const auto ce = softmax_cross_entropy(z, 0);
  double s = 0.0;
  for (double g : ce.grad) s += g;
  EXPECT_NEAR(s, 0.0, 1e-15);
  const double denom = std::exp(1.0) + std::exp(-2.0) + std::exp(0.5);
  EXPECT_NEAR(ce.loss, -std::log(std::exp(1.0) / denom), 1e-12);
}
