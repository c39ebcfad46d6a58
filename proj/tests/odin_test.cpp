#include "latent_scan/odin.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <random>

#include "test_util.hpp"

namespace latent_scan {
namespace {

std::vector<std::size_t> random_sizes(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> width(2, 9);
  std::uniform_int_distribution<std::size_t> depth(1, 4);
  std::vector<std::size_t> sizes{width(rng)};
  const std::size_t layers = depth(rng);
  for (std::size_t l = 0; l < layers; ++l) sizes.push_back(width(rng));
  return sizes;
}

Vector random_input(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

double loss_at(const ReferenceNet& net, const Vector& x, const LossSpec& loss) {
  return -std::log(temperature_softmax(net.forward(x), loss.tau)[loss.class_index]);
}

TEST(Softmax, SumsToOneAndSurvivesHugeLogits) {
  const Vector p = temperature_softmax(std::vector<double>{1000.0, 999.0, -1000.0}, 1.0);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_GT(p[0], p[1]);
  EXPECT_TRUE(std::isfinite(p[2]));
}

TEST(Softmax, TemperatureFlattens) {
  const std::vector<double> z{2.0, 0.0};
  EXPECT_GT(softmax_score(temperature_softmax(z, 1.0)), softmax_score(temperature_softmax(z, 10.0)));
  EXPECT_NEAR(softmax_score(temperature_softmax(z, 1e9)), 0.5, 1e-8);
}

TEST(Softmax, ArgmaxInvariantUnderTemperature) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> d(0.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector z(2 + trial % 9);
    for (auto& v : z) v = d(rng);
    const std::size_t expected = argmax(z);
    for (double tau : {0.5, 1.0, 2.0, 5.0, 10.0}) EXPECT_EQ(argmax(temperature_softmax(z, tau)), expected);
  }
}

TEST(Softmax, BadTemperature) {
  EXPECT_THROW(temperature_softmax(std::vector<double>{1.0}, 0.0), InputError);
  EXPECT_THROW(temperature_softmax(std::vector<double>{1.0}, -1.0), InputError);
}

TEST(ReferenceNet, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sizes = random_sizes(rng);
    const auto net = ReferenceNet::random(sizes, rng);
    const Vector x = random_input(sizes.front(), rng);
    const LossSpec loss{static_cast<std::size_t>(trial) % sizes.back(), 1.0 + trial % 3};
    const Vector g = net.input_gradient(x, loss);
    double diff = 0.0, scale = 1e-12;
    for (std::size_t i = 0; i < x.size(); ++i) {
      constexpr double h = 1e-6;
      Vector hi = x, lo = x;
      hi[i] += h;
      lo[i] -= h;
      const double fd = (loss_at(net, hi, loss) - loss_at(net, lo, loss)) / (2.0 * h);
      diff = std::max(diff, std::abs(fd - g[i]));
      scale = std::max(scale, std::max(std::abs(fd), std::abs(g[i])));
    }
    EXPECT_LT(diff / scale, 1e-4) << "trial " << trial;
  }
}

TEST(ReferenceNet, LayerNamesAndActivations) {
  std::mt19937_64 rng(1);
  const std::vector<std::size_t> sizes{3, 5, 4, 2};
  const auto net = ReferenceNet::random(sizes, rng);
  EXPECT_EQ(net.layer_names(), (std::vector<std::string>{"dense_0", "dense_1", "dense_2", "softmax"}));
  const auto acts = net.named_activations(Vector{0.1, 0.2, 0.3}, 2.0);
  EXPECT_EQ(acts.at("dense_0").size(), 5u);
  EXPECT_EQ(acts.at("dense_2"), net.forward(Vector{0.1, 0.2, 0.3}));
  for (double v : acts.at("dense_1")) EXPECT_GE(v, 0.0);
  EXPECT_EQ(acts.at("softmax"), temperature_softmax(acts.at("dense_2"), 2.0));
}

TEST(ReferenceNet, ShapeChecks) {
  std::mt19937_64 rng(1);
  const std::vector<std::size_t> too_deep{2, 2, 2, 2, 2, 2};
  EXPECT_THROW(ReferenceNet::random(too_deep, rng), InputError);
  const std::vector<std::size_t> sizes{3, 2};
  const auto net = ReferenceNet::random(sizes, rng);
  EXPECT_THROW(net.forward(Vector{1.0}), InputError);
}

TEST(ReferenceNet, SaveAndLoad) {
  testing::TempDir dir;
  std::mt19937_64 rng(2);
  const std::vector<std::size_t> sizes{4, 6, 3};
  const auto net = ReferenceNet::random(sizes, rng);
  save_reference_net(net, dir.path());
  const auto back = load_reference_net(dir.path());
  ASSERT_EQ(back.layers().size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    ASSERT_EQ(back.layers()[l].weight.size(), net.layers()[l].weight.size());
    for (std::size_t i = 0; i < net.layers()[l].weight.size(); ++i)
      EXPECT_EQ(back.layers()[l].weight[i], static_cast<double>(static_cast<float>(net.layers()[l].weight[i])));
  }
  EXPECT_THROW(load_reference_net(dir.path(), "other"), InputError);
}

TEST(Odin, ZeroEpsilonIsBitwiseIdentity) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto sizes = random_sizes(rng);
    const auto net = ReferenceNet::random(sizes, rng);
    Vector x = random_input(sizes.front(), rng);
    x[0] = -0.0;
    const Vector out = odin_perturb(net, x, OdinConfig{1.0 + trial, 0.0, OdinMode::Standard});
    ASSERT_EQ(out.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(out[i]), std::bit_cast<std::uint64_t>(x[i]));
  }
}

TEST(Odin, PerturbationStaysWithinEpsilon) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> eps(0.0, 0.3);
  std::uniform_real_distribution<double> wide(-0.5, 1.5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto sizes = random_sizes(rng);
    const auto net = ReferenceNet::random(sizes, rng);
    Vector x = random_input(sizes.front(), rng);
    if (trial % 4 == 0) x[0] = wide(rng);  // outside the unit box too
    const OdinConfig cfg{1.0 + trial % 7, eps(rng), OdinMode::Standard};
    const Vector out = odin_perturb(net, x, cfg);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(out[i] - x[i]), cfg.epsilon);
  }
}

TEST(Odin, StepRaisesConfidenceForSmallEpsilon) {
  std::mt19937_64 rng(6);
  int raised = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<std::size_t> sizes{6, 8, 4};
    const auto net = ReferenceNet::random(sizes, rng);
    Vector x = random_input(6, rng);
    for (auto& v : x) v = 0.25 + 0.5 * v;  // keep away from the clip
    const OdinConfig cfg{2.0, 1e-4, OdinMode::Standard};
    const double before = softmax_score(temperature_softmax(net.forward(x), cfg.tau));
    const double after = softmax_score(temperature_softmax(net.forward(odin_perturb(net, x, cfg)), cfg.tau));
    if (after >= before) ++raised;
  }
  EXPECT_EQ(raised, 50);
}

TEST(Odin, ConfigValidationAndPresets) {
  EXPECT_THROW(OdinConfig({0.0, 0.1, OdinMode::Standard}).validate(), InputError);
  EXPECT_THROW(OdinConfig({1.0, -0.1, OdinMode::Standard}).validate(), InputError);
  EXPECT_EQ(kOdinSd198.tau, 10.0);
  EXPECT_EQ(kOdinSd198.epsilon, 0.0);
  EXPECT_EQ(kOdinIsic.tau, 5.0);
  EXPECT_EQ(kOdinIsic.epsilon, 0.0002);
  EXPECT_EQ(kOdinLow.tau, 2.0);
  EXPECT_EQ(kOdinLow.epsilon, 0.2);
  EXPECT_EQ(parse_odin_mode("low"), OdinMode::Low);
  EXPECT_THROW(parse_odin_mode("high"), InputError);
}

// One input, logits (5x, 0). Reports a zero gradient at tau == 1 so that
// perturbation only has an effect at other temperatures.
class TwoClassLine final : public DifferentiableClassifier {
 public:
  std::size_t input_dim() const override { return 1; }
  Vector forward(std::span<const double> x) const override { return {5.0 * x[0], 0.0}; }
  Vector input_gradient(std::span<const double> x, const LossSpec& loss) const override {
    if (loss.tau == 1.0) return {0.0};
    const Vector p = temperature_softmax(forward(x), loss.tau);
    const double sign = loss.class_index == 0 ? 1.0 : -1.0;
    return {-sign * (1.0 - p[loss.class_index]) * 5.0 / loss.tau};
  }
  std::map<std::string, Vector> named_activations(std::span<const double> x, double) const override {
    return {{"logits", forward(x)}};
  }
  std::vector<std::string> layer_names() const override { return {"logits"}; }
};

const std::vector<Vector> kIdVal{{0.9}, {0.95}, {0.99}};
const std::vector<Vector> kOodVal{{0.81}, {0.82}, {0.83}};

TEST(TuneOdin, MaximizePicksTheBestAurocSmallestSettingsOnTies) {
  const auto r = tune_odin(TwoClassLine{}, kIdVal, kOodVal, {2.0, 1.0}, {0.2, 0.0}, TuneObjective::Maximize);
  EXPECT_EQ(r.config.tau, 1.0);
  EXPECT_EQ(r.config.epsilon, 0.0);
  EXPECT_EQ(r.auroc, 1.0);
  EXPECT_EQ(r.grid.size(), 4u);
}

TEST(TuneOdin, MinimizeDrivesAurocToOneHalf) {
  const auto r = tune_odin(TwoClassLine{}, kIdVal, kOodVal, {1.0, 2.0}, {0.0, 0.2}, TuneObjective::Minimize);
  EXPECT_EQ(r.config.tau, 2.0);
  EXPECT_EQ(r.config.epsilon, 0.2);
  EXPECT_EQ(r.config.mode, OdinMode::Low);
  EXPECT_EQ(r.auroc, 0.5);
}

TEST(TuneOdin, EmptyGridIsAnError) {
  EXPECT_THROW(tune_odin(TwoClassLine{}, kIdVal, kOodVal, {}, {0.0}, TuneObjective::Maximize), InputError);
  EXPECT_THROW(tune_odin(TwoClassLine{}, {}, kOodVal, {1.0}, {0.0}, TuneObjective::Maximize), InputError);
}

}  // namespace
}  // namespace latent_scan
