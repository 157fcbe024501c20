#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "afdetect/nn/tensor.hpp"

namespace afdetect::nn {

// First/second-moment state for one group of parameters.
template <class Real>
struct AdamState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::int64_t step = 0;
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);

  void init_for(const std::vector<Tensor<Real>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.size(), Real(0));
      v.emplace_back(p.size(), Real(0));
    }
    step = 0;
  }
};

// One Adam update from the grads currently held by the parameters:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <class Real>
void adam_step(std::vector<Tensor<Real>>& params, AdamState<Real>& state) {
  if (state.m.size() != params.size())
    throw ShapeMismatch("adam_step: state not initialized for these params");
  ++state.step;
  const Real bc1 =
      Real(1) - std::pow(state.beta1, static_cast<Real>(state.step));
  const Real bc2 =
      Real(1) - std::pow(state.beta2, static_cast<Real>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != params[p].size())
      throw ShapeMismatch("adam_step: parameter shape changed");
    auto& val = params[p].values();
    auto& g = params[p].grad();
    for (std::size_t i = 0; i < val.size(); ++i) {
      m[i] = state.beta1 * m[i] + (Real(1) - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (Real(1) - state.beta2) * g[i] * g[i];
      const Real m_hat = m[i] / bc1;
      const Real v_hat = v[i] / bc2;
      val[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

template <class Real>
void zero_grads(std::vector<Tensor<Real>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace afdetect::nn
