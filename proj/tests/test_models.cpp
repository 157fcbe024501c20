#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "afdetect/models.hpp"
#include "support/oracles.hpp"

using namespace afdetect;
using nn::Shape;
using nn::Tensor;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape, bool requires_grad,
                             double spread = 0.5) {
  std::vector<double> v(nn::shape_numel(shape));
  for (double& x : v) x = spread * rng.normal();
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

void check_gradients(std::vector<Tensor<double>*> leaves,
                     const std::function<Tensor<double>()>& build,
                     double tol = 1e-5) {
  for (auto* leaf : leaves) leaf->zero_grad();
  auto loss = build();
  nn::backward(loss);
  for (auto* leaf : leaves) {
    const std::vector<double> analytic = leaf->grad();
    const std::vector<double> fd = oracle::finite_difference(
        leaf->values(), [&] { return build().item(); });
    double ref = 1.0;
    for (double g : fd) ref = std::max(ref, std::fabs(g));
    for (std::size_t i = 0; i < fd.size(); ++i)
      REQUIRE(analytic[i] == Catch::Approx(fd[i]).margin(tol * ref));
  }
}

// Named views of every parameter tensor (copies share the node, so edits and
// gradients are visible through both handles).
template <class Model>
std::map<std::string, Tensor<double>> named_params(Model& m) {
  std::map<std::string, Tensor<double>> out;
  m.visit([&out](const std::string& name, Tensor<double>& t) {
    out.emplace(name, t);
  });
  return out;
}

ResNetConfig toy_resnet_config(int n_branches = 2) {
  ResNetConfig cfg;
  cfg.in_channels = 1;
  cfg.input_height = 8;
  cfg.input_width = 8;
  cfg.stem_channels = 4;
  cfg.stem_kernel = 3;
  cfg.stem_stride = 1;
  cfg.stem_padding = 1;
  cfg.stem_maxpool = true;
  cfg.stage_widths = {4, 8};
  cfg.blocks_per_stage = 1;
  cfg.n_branches = n_branches;
  return cfg;
}

Cnn1dConfig toy_cnn_config(int n_branches = 2) {
  Cnn1dConfig cfg;
  cfg.in_channels = 1;
  cfg.input_length = 32;
  cfg.channels = {2, 3, 4};
  cfg.kernels = {7, 5, 3};
  cfg.pool = 2;
  cfg.n_branches = n_branches;
  return cfg;
}

}  // namespace

TEST_CASE("residual block with a zeroed F-path is relu(identity)") {
  Rng rng(11);
  auto block = ResidualBlock<double>::make(4, 4, 1, rng);
  REQUIRE_FALSE(block.has_projection);
  block.visit("b", [](const std::string& name, Tensor<double>& t) {
    if (name.find("conv") != std::string::npos)
      for (double& v : t.values()) v = 0.0;
  });
  auto x = random_tensor(rng, {2, 4, 5, 5}, false, 1.0);
  const auto y = block.forward(x, false);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(y.values()[i] == std::max(x.values()[i], 0.0));
}

TEST_CASE("residual block projects the shortcut when the shape changes") {
  Rng rng(12);
  auto strided = ResidualBlock<double>::make(4, 4, 2, rng);
  REQUIRE(strided.has_projection);
  auto widened = ResidualBlock<double>::make(4, 8, 1, rng);
  REQUIRE(widened.has_projection);
  auto x = random_tensor(rng, {1, 4, 8, 8}, false);
  REQUIRE(strided.forward(x, false).shape() == Shape{1, 4, 4, 4});
  REQUIRE(widened.forward(x, false).shape() == Shape{1, 8, 8, 8});
}

TEST_CASE("default ResNet18 parameter count matches hand arithmetic") {
  auto model = ResNetMb<double>::build(ResNetConfig{}, 1);
  std::size_t total = 0;
  for (auto& p : model.parameters()) total += p.size();
  // stem 7x7x1x64 conv (+bias) and bn:         3200 + 128
  // stage 1: two 64->64 blocks:                2 * 74112
  // stage 2: 64->128 w/ projection, 128->128:  230528 + 295680
  // stage 3: 128->256 w/ projection, 256->256: 919808 + 1181184
  // stage 4: 256->512 w/ projection, 512->512: 3674624 + 4721664
  // head: 512->1 linear:                       513
  REQUIRE(total == 11175553u);
}

TEST_CASE("initialization is deterministic and batch norm starts at identity") {
  auto a = ResNetMb<double>::build(toy_resnet_config(), 7);
  auto b = ResNetMb<double>::build(toy_resnet_config(), 7);
  auto c = ResNetMb<double>::build(toy_resnet_config(), 8);
  auto pa = named_params(a), pb = named_params(b), pc = named_params(c);
  REQUIRE(pa.size() == pb.size());
  bool any_differs = false;
  for (const auto& [name, t] : pa) {
    REQUIRE(t.values() == pb.at(name).values());
    if (t.values() != pc.at(name).values()) any_differs = true;
    if (name.find("gamma") != std::string::npos)
      for (double v : t.values()) REQUIRE(v == 1.0);
    if (name.find("beta") != std::string::npos)
      for (double v : t.values()) REQUIRE(v == 0.0);
  }
  REQUIRE(any_differs);
}

TEST_CASE("large weight tensors are centred near zero") {
  auto model = ResNetMb<double>::build(ResNetConfig{}, 3);
  model.visit([](const std::string& name, Tensor<double>& t) {
    if (t.size() < 1000) return;
    if (name.find("gamma") != std::string::npos ||
        name.find("beta") != std::string::npos)
      return;
    double mean = 0.0, maxabs = 0.0;
    for (double v : t.values()) {
      mean += v;
      maxabs = std::max(maxabs, std::fabs(v));
    }
    mean /= static_cast<double>(t.size());
    // |mean| of n uniform draws stays within ~3 standard errors of zero
    REQUIRE(std::fabs(mean) <
            3.0 * maxabs / std::sqrt(static_cast<double>(t.size())));
  });
}

TEST_CASE("resnet forward emits per-branch probabilities strictly inside (0,1)") {
  Rng rng(21);
  auto model = ResNetMb<double>::build(toy_resnet_config(3), 5);
  auto x = random_tensor(rng, {4, 1, 8, 8}, false, 1.0);
  for (bool training : {false, true}) {
    const auto probs = model.forward(x, training);
    REQUIRE(probs.shape() == Shape{4, 3});
    for (double p : probs.values()) {
      REQUIRE(p > 0.0);
      REQUIRE(p < 1.0);
    }
  }
}

TEST_CASE("resnet rejects inputs that disagree with its config") {
  Rng rng(22);
  auto model = ResNetMb<double>::build(toy_resnet_config(), 5);
  auto bad_hw = random_tensor(rng, {1, 1, 9, 8}, false);
  auto bad_c = random_tensor(rng, {1, 2, 8, 8}, false);
  auto bad_rank = random_tensor(rng, {1, 8, 8}, false);
  REQUIRE_THROWS_AS(model.forward(bad_hw, false), ShapeMismatch);
  REQUIRE_THROWS_AS(model.forward(bad_c, false), ShapeMismatch);
  REQUIRE_THROWS_AS(model.forward(bad_rank, false), ShapeMismatch);
  auto cfg = toy_resnet_config(0);
  REQUIRE_THROWS_AS(ResNetMb<double>::build(cfg, 1), ConfigError);
}

TEST_CASE("eval-mode inference treats batch rows independently") {
  Rng rng(23);
  auto model = Cnn1dMb<double>::build(toy_cnn_config(2), 9);
  auto sample = random_tensor(rng, {1, 1, 32}, false, 1.0);
  std::vector<double> twice = sample.values();
  twice.insert(twice.end(), sample.values().begin(), sample.values().end());
  Tensor<double> pair({2, 1, 32}, twice);

  const auto one = model.forward(sample, false);
  const auto two = model.forward(pair, false);
  REQUIRE(two.shape() == Shape{2, 2});
  for (int b = 0; b < 2; ++b) {
    REQUIRE(two.values()[b] == one.values()[b]);
    REQUIRE(two.values()[2 + b] == one.values()[b]);
  }
}

TEST_CASE("cnn1d forward matches an independent re-implementation") {
  Rng rng(31);
  const auto cfg = toy_cnn_config(2);
  auto model = Cnn1dMb<double>::build(cfg, 13);
  auto params = named_params(model);
  auto x = random_tensor(rng, {1, 1, 32}, false, 1.0);
  const auto got = model.forward(x, false);

  // straight-line eval-mode recomputation from the visited weights
  std::vector<double> h = x.values();
  int c_in = 1, len = cfg.input_length;
  for (int s = 0; s < 3; ++s) {
    const std::string p = "conv" + std::to_string(s);
    const int c_out = cfg.channels[s], k = cfg.kernels[s];
    h = oracle::naive_conv1d(h, c_in, len, params.at(p + ".weight").values(),
                             c_out, k, params.at(p + ".bias").values(), 1,
                             k / 2);
    if (s == 2) {
      // fresh running stats: mean 0, var 1
      for (double& v : h) v /= std::sqrt(1.0 + 1e-5);
    }
    for (double& v : h) v = std::max(v, 0.0);
    const int l_out = (len - cfg.pool) / cfg.pool + 1;
    std::vector<double> pooled(static_cast<std::size_t>(c_out) * l_out);
    for (int c = 0; c < c_out; ++c)
      for (int o = 0; o < l_out; ++o) {
        double best = h[static_cast<std::size_t>(c) * len + o * cfg.pool];
        for (int m = 1; m < cfg.pool; ++m)
          best = std::max(
              best, h[static_cast<std::size_t>(c) * len + o * cfg.pool + m]);
        pooled[static_cast<std::size_t>(c) * l_out + o] = best;
      }
    h = std::move(pooled);
    c_in = c_out;
    len = l_out;
  }
  REQUIRE(got.shape() == Shape{1, cfg.n_branches});
  for (int b = 0; b < cfg.n_branches; ++b) {
    const auto& w = params.at("head" + std::to_string(b) + ".weight").values();
    double logit = params.at("head" + std::to_string(b) + ".bias").values()[0];
    for (std::size_t i = 0; i < h.size(); ++i) logit += w[i] * h[i];
    const double want = 1.0 / (1.0 + std::exp(-logit));
    REQUIRE(got.values()[b] == Catch::Approx(want).margin(1e-9));
  }
}

TEST_CASE("cnn1d config validation") {
  auto cfg = toy_cnn_config();
  cfg.channels = {8, 16};
  cfg.kernels = {7, 5};
  REQUIRE_THROWS_AS(Cnn1dMb<double>::build(cfg, 1), ConfigError);
  cfg = toy_cnn_config(0);
  REQUIRE_THROWS_AS(Cnn1dMb<double>::build(cfg, 1), ConfigError);
  Rng rng(1);
  auto model = Cnn1dMb<double>::build(toy_cnn_config(), 1);
  auto bad = random_tensor(rng, {1, 1, 31}, false);
  REQUIRE_THROWS_AS(model.forward(bad, false), ShapeMismatch);
}

TEST_CASE("a zeroed head always answers 0.5") {
  Rng rng(41);
  auto model = Cnn1dMb<double>::build(toy_cnn_config(3), 17);
  model.visit([](const std::string& name, Tensor<double>& t) {
    if (name.rfind("head1", 0) == 0)
      for (double& v : t.values()) v = 0.0;
  });
  auto x = random_tensor(rng, {3, 1, 32}, false, 1.0);
  const auto probs = model.forward(x, false);
  for (int j = 0; j < 3; ++j) {
    REQUIRE(probs.values()[static_cast<std::size_t>(j) * 3 + 1] == 0.5);
    REQUIRE(probs.values()[static_cast<std::size_t>(j) * 3 + 0] != 0.5);
  }
}

TEST_CASE("mb_loss hand cases") {
  SECTION("single branch, y=1, p=0.5") {
    Tensor<double> probs({1, 1}, {0.5}, true);
    const auto loss = mb_loss(probs, {1.0}, {1u});
    REQUIRE(loss.item() == Catch::Approx(0.6931471805599453).margin(1e-12));
  }
  SECTION("one sample in three branches triples the term") {
    Tensor<double> probs({1, 3}, {0.5, 0.5, 0.5}, true);
    const auto loss = mb_loss(probs, {1.0}, {0b111u});
    REQUIRE(loss.item() ==
            Catch::Approx(3.0 * 0.6931471805599453).margin(1e-12));
  }
  SECTION("membership masks out non-member branch terms") {
    Tensor<double> probs({1, 2}, {0.5, 0.9}, true);
    const auto loss = mb_loss(probs, {1.0}, {0b01u});
    REQUIRE(loss.item() == Catch::Approx(0.6931471805599453).margin(1e-12));
  }
  SECTION("the clamp keeps a confident miss finite") {
    Tensor<double> probs({1, 1}, {0.0}, true);
    const auto loss = mb_loss(probs, {1.0}, {1u});
    REQUIRE(loss.item() == Catch::Approx(-std::log(1e-7)).margin(1e-9));
  }
}

TEST_CASE("mb_loss with one branch is plain binary cross-entropy") {
  Rng rng(51);
  const int n = 64;
  std::vector<double> p(n), y(n);
  std::vector<std::uint32_t> member(n, 1u);
  for (int j = 0; j < n; ++j) {
    p[j] = 0.05 + 0.9 * rng.uniform();
    y[j] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  Tensor<double> probs({n, 1}, p, true);
  const auto loss = mb_loss(probs, y, member);
  double bce = 0.0;
  for (int j = 0; j < n; ++j)
    bce -= y[j] * std::log(p[j]) + (1.0 - y[j]) * std::log(1.0 - p[j]);
  REQUIRE(loss.item() == Catch::Approx(bce).margin(1e-12));
}

TEST_CASE("mb_loss input validation") {
  Tensor<double> probs({2, 2}, {0.5, 0.5, 0.5, 0.5}, true);
  REQUIRE_THROWS_AS(mb_loss(probs, {1.0, 0.0}, {1u, 0u}), MembershipMismatch);
  REQUIRE_THROWS_AS(mb_loss(probs, {1.0}, {1u, 1u}), ShapeMismatch);
  REQUIRE_THROWS_AS(mb_loss(probs, {1.0, 0.0}, {1u}), ShapeMismatch);
  Tensor<double> flat({4}, {0.5, 0.5, 0.5, 0.5}, true);
  REQUIRE_THROWS_AS(mb_loss(flat, {1.0}, {1u}), ShapeMismatch);
  Tensor<double> wide({1, 33}, std::vector<double>(33, 0.5), true);
  REQUIRE_THROWS_AS(mb_loss(wide, {1.0}, {1u}), ConfigError);
}

TEST_CASE("mb_loss gradient matches finite differences") {
  Tensor<double> probs({3, 2}, {0.3, 0.7, 0.55, 0.2, 0.8, 0.45}, true);
  const std::vector<double> labels{1.0, 0.0, 1.0};
  const std::vector<std::uint32_t> member{0b01u, 0b10u, 0b11u};
  check_gradients({&probs},
                  [&] { return mb_loss(probs, labels, member); });
  // masked-out entries get exactly zero gradient
  REQUIRE(probs.grad()[1] == 0.0);
  REQUIRE(probs.grad()[2] == 0.0);
}

TEST_CASE("mb_predict averages the branches") {
  REQUIRE(mb_predict({0.7, 0.7, 0.7}) == Catch::Approx(0.7));
  REQUIRE(mb_predict({0.2, 0.4, 0.6}) == Catch::Approx(0.4));
  REQUIRE(mb_predict({0.123}) == 0.123);
  REQUIRE(mb_predict({0.2, 0.4, 0.6}) == mb_predict({0.6, 0.2, 0.4}));
  const double avg = mb_predict({0.1, 0.9, 0.5});
  REQUIRE(avg >= 0.1);
  REQUIRE(avg <= 0.9);
  REQUIRE_THROWS_AS(mb_predict({}), EmptyBranches);
  REQUIRE_THROWS_AS(mb_predict({0.5, 1.2}), ConfigError);
  REQUIRE_THROWS_AS(mb_predict({-0.1}), ConfigError);
}

TEST_CASE("branch heads only learn from their own samples") {
  Rng rng(61);
  auto model = ResNetMb<double>::build(toy_resnet_config(3), 19);
  auto params = named_params(model);
  for (auto& [name, t] : params) t.zero_grad();

  auto x = random_tensor(rng, {2, 1, 8, 8}, false, 1.0);
  auto probs = model.forward(x, false);
  // every sample lives in branch 1 only
  auto loss = mb_loss(probs, {1.0, 0.0}, {0b010u, 0b010u});
  nn::backward(loss);

  auto grad_mass = [&](const std::string& name) {
    double acc = 0.0;
    for (double g : params.at(name).grad()) acc += std::fabs(g);
    return acc;
  };
  REQUIRE(grad_mass("head0.weight") == 0.0);
  REQUIRE(grad_mass("head0.bias") == 0.0);
  REQUIRE(grad_mass("head2.weight") == 0.0);
  REQUIRE(grad_mass("head2.bias") == 0.0);
  REQUIRE(grad_mass("head1.weight") > 0.0);
  REQUIRE(grad_mass("head1.bias") > 0.0);
  // shared trunk still learns
  REQUIRE(grad_mass("stem.conv.weight") > 0.0);
  REQUIRE(grad_mass("block0.conv1.weight") > 0.0);
  REQUIRE(grad_mass("block1.conv2.weight") > 0.0);
  REQUIRE(grad_mass("stem.bn.gamma") > 0.0);
}

TEST_CASE("end-to-end resnet gradient matches finite differences") {
  Rng rng(71);
  auto model = ResNetMb<double>::build(toy_resnet_config(2), 23);
  auto params = named_params(model);
  auto x = random_tensor(rng, {2, 1, 8, 8}, true, 1.0);
  const std::vector<double> labels{1.0, 0.0};
  const std::vector<std::uint32_t> member{0b11u, 0b11u};
  auto build = [&] {
    return mb_loss(model.forward(x, true), labels, member);
  };
  check_gradients({&x, &params.at("stem.conv.bias"),
                   &params.at("head0.weight"), &params.at("head1.bias"),
                   &params.at("block0.bn1.gamma"),
                   &params.at("block1.proj.bias")},
                  build, 1e-4);
}

TEST_CASE("model configs round-trip through json") {
  auto rcfg = toy_resnet_config(3);
  rcfg.stem_maxpool = false;
  const auto r2 = ResNetConfig::from_json(rcfg.to_json());
  REQUIRE(r2.in_channels == rcfg.in_channels);
  REQUIRE(r2.input_height == rcfg.input_height);
  REQUIRE(r2.input_width == rcfg.input_width);
  REQUIRE(r2.stem_channels == rcfg.stem_channels);
  REQUIRE(r2.stem_kernel == rcfg.stem_kernel);
  REQUIRE(r2.stem_stride == rcfg.stem_stride);
  REQUIRE(r2.stem_padding == rcfg.stem_padding);
  REQUIRE(r2.stem_maxpool == rcfg.stem_maxpool);
  REQUIRE(r2.stage_widths == rcfg.stage_widths);
  REQUIRE(r2.blocks_per_stage == rcfg.blocks_per_stage);
  REQUIRE(r2.n_branches == rcfg.n_branches);

  const auto ccfg = toy_cnn_config(4);
  const auto c2 = Cnn1dConfig::from_json(ccfg.to_json());
  REQUIRE(c2.in_channels == ccfg.in_channels);
  REQUIRE(c2.input_length == ccfg.input_length);
  REQUIRE(c2.channels == ccfg.channels);
  REQUIRE(c2.kernels == ccfg.kernels);
  REQUIRE(c2.pool == ccfg.pool);
  REQUIRE(c2.n_branches == ccfg.n_branches);
}
