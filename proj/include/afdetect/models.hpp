#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "afdetect/errors.hpp"
#include "afdetect/nn/adam.hpp"
#include "afdetect/nn/ops.hpp"
#include "afdetect/nn/tensor.hpp"
#include "afdetect/rng.hpp"

namespace afdetect {

using nlohmann::json;

template <class Real>
using ParamFn = std::function<void(const std::string&, nn::Tensor<Real>&)>;
template <class Real>
using BufferFn = std::function<void(const std::string&, std::vector<Real>&)>;

namespace detail {

// Scaled uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class Real>
nn::Tensor<Real> init_uniform(nn::Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  nn::Tensor<Real> t(std::move(shape), Real(0), true);
  for (Real& v : t.values())
    v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <class Real>
struct Conv2dLayer {
  nn::Tensor<Real> weight, bias;
  int stride = 1, padding = 0;

  static Conv2dLayer make(int c_in, int c_out, int kernel, int stride,
                          int padding, Rng& rng) {
    const std::size_t fan_in =
        static_cast<std::size_t>(c_in) * kernel * kernel;
    Conv2dLayer l;
    l.weight =
        detail::init_uniform<Real>({c_out, c_in, kernel, kernel}, fan_in, rng);
    l.bias = detail::init_uniform<Real>({c_out}, fan_in, rng);
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  nn::Tensor<Real> forward(const nn::Tensor<Real>& x) {
    return nn::conv2d(x, weight, bias, stride, padding);
  }

  void visit(const std::string& prefix, const ParamFn<Real>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <class Real>
struct Conv1dLayer {
  nn::Tensor<Real> weight, bias;
  int stride = 1, padding = 0;

  static Conv1dLayer make(int c_in, int c_out, int kernel, int stride,
                          int padding, Rng& rng) {
    const std::size_t fan_in = static_cast<std::size_t>(c_in) * kernel;
    Conv1dLayer l;
    l.weight = detail::init_uniform<Real>({c_out, c_in, kernel}, fan_in, rng);
    l.bias = detail::init_uniform<Real>({c_out}, fan_in, rng);
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  nn::Tensor<Real> forward(const nn::Tensor<Real>& x) {
    return nn::conv1d(x, weight, bias, stride, padding);
  }

  void visit(const std::string& prefix, const ParamFn<Real>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

template <class Real>
struct BatchNormLayer {
  nn::Tensor<Real> gamma, beta;
  nn::BatchNormState<Real> state;

  static BatchNormLayer make(int channels) {
    BatchNormLayer l;
    l.gamma = nn::Tensor<Real>({channels}, Real(1), true);
    l.beta = nn::Tensor<Real>({channels}, Real(0), true);
    l.state.running_mean.assign(channels, Real(0));
    l.state.running_var.assign(channels, Real(1));
    return l;
  }

  nn::Tensor<Real> forward(const nn::Tensor<Real>& x, bool training) {
    return nn::batch_norm(x, gamma, beta, state, training);
  }

  void visit(const std::string& prefix, const ParamFn<Real>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
  void visit_buffers(const std::string& prefix, const BufferFn<Real>& fn) {
    fn(prefix + ".running_mean", state.running_mean);
    fn(prefix + ".running_var", state.running_var);
  }
};

template <class Real>
struct LinearLayer {
  nn::Tensor<Real> weight, bias;

  static LinearLayer make(int in_features, int out_features, Rng& rng) {
    LinearLayer l;
    l.weight = detail::init_uniform<Real>({out_features, in_features},
                                          in_features, rng);
    l.bias = detail::init_uniform<Real>({out_features}, in_features, rng);
    return l;
  }

  nn::Tensor<Real> forward(const nn::Tensor<Real>& x) {
    return nn::linear(x, weight, bias);
  }

  void visit(const std::string& prefix, const ParamFn<Real>& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// residual block: Y = relu(F(X) + shortcut(X)), F = bn(conv(relu(bn(conv)))).
// A strided 1x1 projection (with its own batch norm) carries the shortcut
// whenever the shape changes.
// ---------------------------------------------------------------------------

template <class Real>
struct ResidualBlock {
  Conv2dLayer<Real> conv1, conv2;
  BatchNormLayer<Real> bn1, bn2;
  bool has_projection = false;
  Conv2dLayer<Real> proj;
  BatchNormLayer<Real> proj_bn;

  static ResidualBlock make(int c_in, int c_out, int stride, Rng& rng) {
    ResidualBlock b;
    b.conv1 = Conv2dLayer<Real>::make(c_in, c_out, 3, stride, 1, rng);
    b.bn1 = BatchNormLayer<Real>::make(c_out);
    b.conv2 = Conv2dLayer<Real>::make(c_out, c_out, 3, 1, 1, rng);
    b.bn2 = BatchNormLayer<Real>::make(c_out);
    b.has_projection = (stride != 1 || c_in != c_out);
    if (b.has_projection) {
      b.proj = Conv2dLayer<Real>::make(c_in, c_out, 1, stride, 0, rng);
      b.proj_bn = BatchNormLayer<Real>::make(c_out);
    }
    return b;
  }

  nn::Tensor<Real> forward(const nn::Tensor<Real>& x, bool training) {
    auto f = nn::relu(bn1.forward(conv1.forward(x), training));
    f = bn2.forward(conv2.forward(f), training);
    auto shortcut =
        has_projection ? proj_bn.forward(proj.forward(x), training) : x;
    return nn::relu(nn::add(f, shortcut));
  }

  void visit(const std::string& prefix, const ParamFn<Real>& fn) {
    conv1.visit(prefix + ".conv1", fn);
    bn1.visit(prefix + ".bn1", fn);
    conv2.visit(prefix + ".conv2", fn);
    bn2.visit(prefix + ".bn2", fn);
    if (has_projection) {
      proj.visit(prefix + ".proj", fn);
      proj_bn.visit(prefix + ".proj_bn", fn);
    }
  }
  void visit_buffers(const std::string& prefix, const BufferFn<Real>& fn) {
    bn1.visit_buffers(prefix + ".bn1", fn);
    bn2.visit_buffers(prefix + ".bn2", fn);
    if (has_projection) proj_bn.visit_buffers(prefix + ".proj_bn", fn);
  }
};

// ---------------------------------------------------------------------------
// ResNet18 trunk with a multi-branching head
// ---------------------------------------------------------------------------

struct ResNetConfig {
  int in_channels = 1;
  int input_height = 128;
  int input_width = 128;
  int stem_channels = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  int stem_padding = 3;
  bool stem_maxpool = true;
  std::vector<int> stage_widths{64, 128, 256, 512};
  int blocks_per_stage = 2;
  int n_branches = 1;

  json to_json() const {
    return json{{"in_channels", in_channels},
                {"input_height", input_height},
                {"input_width", input_width},
                {"stem_channels", stem_channels},
                {"stem_kernel", stem_kernel},
                {"stem_stride", stem_stride},
                {"stem_padding", stem_padding},
                {"stem_maxpool", stem_maxpool},
                {"stage_widths", stage_widths},
                {"blocks_per_stage", blocks_per_stage},
                {"n_branches", n_branches}};
  }
  static ResNetConfig from_json(const json& j) {
    ResNetConfig c;
    c.in_channels = j.at("in_channels");
    c.input_height = j.at("input_height");
    c.input_width = j.at("input_width");
    c.stem_channels = j.at("stem_channels");
    c.stem_kernel = j.at("stem_kernel");
    c.stem_stride = j.at("stem_stride");
    c.stem_padding = j.at("stem_padding");
    c.stem_maxpool = j.at("stem_maxpool");
    c.stage_widths = j.at("stage_widths").get<std::vector<int>>();
    c.blocks_per_stage = j.at("blocks_per_stage");
    c.n_branches = j.at("n_branches");
    return c;
  }
};

template <class Real>
class ResNetMb {
 public:
  using config_type = ResNetConfig;

  static ResNetMb build(const ResNetConfig& cfg, std::uint64_t seed) {
    if (cfg.n_branches < 1) throw ConfigError("n_branches must be >= 1");
    Rng rng(seed);
    ResNetMb m;
    m.cfg_ = cfg;
    m.stem_ = Conv2dLayer<Real>::make(cfg.in_channels, cfg.stem_channels,
                                      cfg.stem_kernel, cfg.stem_stride,
                                      cfg.stem_padding, rng);
    m.stem_bn_ = BatchNormLayer<Real>::make(cfg.stem_channels);
    int c_in = cfg.stem_channels;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
      const int width = cfg.stage_widths[s];
      for (int b = 0; b < cfg.blocks_per_stage; ++b) {
        const int stride = (s > 0 && b == 0) ? 2 : 1;
        m.blocks_.push_back(ResidualBlock<Real>::make(c_in, width, stride, rng));
        c_in = width;
      }
    }
    for (int i = 0; i < cfg.n_branches; ++i)
      m.heads_.push_back(LinearLayer<Real>::make(c_in, 1, rng));
    return m;
  }

  // x: (N, C, H, W). Returns per-branch probabilities (N, N_b).
  nn::Tensor<Real> forward(const nn::Tensor<Real>& x, bool training) {
    if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels ||
        x.dim(2) != cfg_.input_height || x.dim(3) != cfg_.input_width)
      throw ShapeMismatch("resnet: input shape does not match config");
    auto h = nn::relu(stem_bn_.forward(stem_.forward(x), training));
    if (cfg_.stem_maxpool) h = nn::max_pool2d(h, 3, 2, 1);
    for (auto& block : blocks_) h = block.forward(h, training);
    h = nn::global_avg_pool2d(h);
    std::vector<nn::Tensor<Real>> branch_logits;
    branch_logits.reserve(heads_.size());
    for (auto& head : heads_) branch_logits.push_back(head.forward(h));
    return nn::sigmoid(nn::concat_columns(branch_logits));
  }

  void visit(const ParamFn<Real>& fn) {
    stem_.visit("stem.conv", fn);
    stem_bn_.visit("stem.bn", fn);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].visit("block" + std::to_string(i), fn);
    for (std::size_t i = 0; i < heads_.size(); ++i)
      heads_[i].visit("head" + std::to_string(i), fn);
  }
  void visit_buffers(const BufferFn<Real>& fn) {
    stem_bn_.visit_buffers("stem.bn", fn);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].visit_buffers("block" + std::to_string(i), fn);
  }

  std::vector<nn::Tensor<Real>> parameters() {
    std::vector<nn::Tensor<Real>> out;
    visit([&out](const std::string&, nn::Tensor<Real>& t) { out.push_back(t); });
    return out;
  }

  const ResNetConfig& config() const { return cfg_; }
  std::vector<ResidualBlock<Real>>& blocks() { return blocks_; }
  int n_branches() const { return cfg_.n_branches; }

 private:
  ResNetConfig cfg_;
  Conv2dLayer<Real> stem_;
  BatchNormLayer<Real> stem_bn_;
  std::vector<ResidualBlock<Real>> blocks_;
  std::vector<LinearLayer<Real>> heads_;
};

// ---------------------------------------------------------------------------
// 1D-CNN baseline: three conv+pool stages, one batch norm, branch heads
// ---------------------------------------------------------------------------

struct Cnn1dConfig {
  int in_channels = 1;
  int input_length = 3000;
  std::vector<int> channels{16, 32, 64};
  std::vector<int> kernels{7, 5, 3};
  int pool = 2;
  int n_branches = 1;

  json to_json() const {
    return json{{"in_channels", in_channels}, {"input_length", input_length},
                {"channels", channels},       {"kernels", kernels},
                {"pool", pool},               {"n_branches", n_branches}};
  }
  static Cnn1dConfig from_json(const json& j) {
    Cnn1dConfig c;
    c.in_channels = j.at("in_channels");
    c.input_length = j.at("input_length");
    c.channels = j.at("channels").get<std::vector<int>>();
    c.kernels = j.at("kernels").get<std::vector<int>>();
    c.pool = j.at("pool");
    c.n_branches = j.at("n_branches");
    return c;
  }
};

template <class Real>
class Cnn1dMb {
 public:
  using config_type = Cnn1dConfig;

  static Cnn1dMb build(const Cnn1dConfig& cfg, std::uint64_t seed) {
    if (cfg.channels.size() != cfg.kernels.size() || cfg.channels.size() != 3)
      throw ConfigError("cnn1d expects exactly three conv stages");
    if (cfg.n_branches < 1) throw ConfigError("n_branches must be >= 1");
    Rng rng(seed);
    Cnn1dMb m;
    m.cfg_ = cfg;
    int c_in = cfg.in_channels;
    int length = cfg.input_length;
    for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
      const int k = cfg.kernels[s];
      m.convs_.push_back(
          Conv1dLayer<Real>::make(c_in, cfg.channels[s], k, 1, k / 2, rng));
      c_in = cfg.channels[s];
      length = (length - cfg.pool) / cfg.pool + 1;
    }
    m.bn_ = BatchNormLayer<Real>::make(cfg.channels.back());
    m.flat_features_ = c_in * length;
    for (int i = 0; i < cfg.n_branches; ++i)
      m.heads_.push_back(LinearLayer<Real>::make(m.flat_features_, 1, rng));
    return m;
  }

  // x: (N, C, L). Returns per-branch probabilities (N, N_b).
  nn::Tensor<Real> forward(const nn::Tensor<Real>& x, bool training) {
    if (x.ndim() != 3 || x.dim(1) != cfg_.in_channels ||
        x.dim(2) != cfg_.input_length)
      throw ShapeMismatch("cnn1d: input shape does not match config");
    auto h = x;
    for (std::size_t s = 0; s < convs_.size(); ++s) {
      h = convs_[s].forward(h);
      if (s + 1 == convs_.size()) h = bn_.forward(h, training);
      h = nn::relu(h);
      h = nn::max_pool1d(h, cfg_.pool, cfg_.pool);
    }
    h = nn::reshape(h, {h.dim(0), flat_features_});
    std::vector<nn::Tensor<Real>> branch_logits;
    for (auto& head : heads_) branch_logits.push_back(head.forward(h));
    return nn::sigmoid(nn::concat_columns(branch_logits));
  }

  void visit(const ParamFn<Real>& fn) {
    for (std::size_t i = 0; i < convs_.size(); ++i)
      convs_[i].visit("conv" + std::to_string(i), fn);
    bn_.visit("bn", fn);
    for (std::size_t i = 0; i < heads_.size(); ++i)
      heads_[i].visit("head" + std::to_string(i), fn);
  }
  void visit_buffers(const BufferFn<Real>& fn) { bn_.visit_buffers("bn", fn); }

  std::vector<nn::Tensor<Real>> parameters() {
    std::vector<nn::Tensor<Real>> out;
    visit([&out](const std::string&, nn::Tensor<Real>& t) { out.push_back(t); });
    return out;
  }

  const Cnn1dConfig& config() const { return cfg_; }
  int n_branches() const { return cfg_.n_branches; }

 private:
  Cnn1dConfig cfg_;
  std::vector<Conv1dLayer<Real>> convs_;
  BatchNormLayer<Real> bn_;
  int flat_features_ = 0;
  std::vector<LinearLayer<Real>> heads_;
};

// ---------------------------------------------------------------------------
// multi-branching loss and inference
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityClamp = 1e-7;

// L = -sum_j sum_i I(j in D_i) [ y_j log p_ji + (1-y_j) log(1-p_ji) ]
// probs: (N, N_b); membership: per-sample bitmask of branch datasets.
template <class Real>
nn::Tensor<Real> mb_loss(const nn::Tensor<Real>& probs,
                         const std::vector<Real>& labels,
                         const std::vector<std::uint32_t>& membership) {
  if (probs.ndim() != 2) throw ShapeMismatch("mb_loss: probs must be (N,K)");
  const int n = probs.dim(0), k = probs.dim(1);
  if (labels.size() != static_cast<std::size_t>(n) ||
      membership.size() != static_cast<std::size_t>(n))
    throw ShapeMismatch("mb_loss: labels/membership length mismatch");
  if (k > 32) throw ConfigError("mb_loss: at most 32 branches supported");

  const Real lo = Real(kProbabilityClamp);
  const Real hi = Real(1) - Real(kProbabilityClamp);
  Real loss(0);
  for (int j = 0; j < n; ++j) {
    if (membership[j] == 0)
      throw MembershipMismatch("sample " + std::to_string(j) +
                               " belongs to zero branches");
    for (int i = 0; i < k; ++i) {
      if (!(membership[j] >> i & 1u)) continue;
      const Real p = std::clamp(
          probs.values()[static_cast<std::size_t>(j) * k + i], lo, hi);
      loss -= labels[j] * std::log(p) +
              (Real(1) - labels[j]) * std::log(Real(1) - p);
    }
  }

  auto pp = probs;
  return nn::Tensor<Real>::from_op(
      {1}, {loss}, {probs},
      [pp, labels, membership, n, k, lo, hi](nn::Node<Real>& node) mutable {
        if (!pp.requires_grad()) return;
        auto& g = pp.grad();
        const Real gout = node.grad[0];
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < k; ++i) {
            if (!(membership[j] >> i & 1u)) continue;
            const std::size_t idx = static_cast<std::size_t>(j) * k + i;
            const Real p = std::clamp(pp.values()[idx], lo, hi);
            g[idx] -= gout * (labels[j] / p -
                              (Real(1) - labels[j]) / (Real(1) - p));
          }
      });
}

// Branch-averaged inference probability.
inline double mb_predict(const std::vector<double>& branch_probs) {
  if (branch_probs.empty()) throw EmptyBranches("no branch outputs");
  double acc = 0.0;
  for (double p : branch_probs) {
    if (p < 0.0 || p > 1.0) throw ConfigError("branch probability out of [0,1]");
    acc += p;
  }
  return acc / static_cast<double>(branch_probs.size());
}

}  // namespace afdetect
