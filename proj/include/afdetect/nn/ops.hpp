#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "afdetect/nn/tensor.hpp"

namespace afdetect::nn {

template <class Real>
using MatRM =
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapM = Eigen::Map<MatRM<Real>>;
template <class Real>
using CMapM = Eigen::Map<const MatRM<Real>>;

// ---------------------------------------------------------------------------
// elementwise / reduction
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch("add: " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] + b.values()[i];
  auto pa = a, pb = b;
  return Tensor<Real>::from_op(
      a.shape(), std::move(out), {a, b}, [pa, pb](Node<Real>& n) mutable {
        detail::accumulate(*pa.node(), n.grad.data(), n.grad.size());
        detail::accumulate(*pb.node(), n.grad.data(), n.grad.size());
      });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.values()[i];
  auto pa = a;
  return Tensor<Real>::from_op(
      a.shape(), std::move(out), {a}, [pa, s](Node<Real>& n) mutable {
        if (!pa.requires_grad()) return;
        auto& g = pa.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
      });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("mul: shape disagreement");
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * b.values()[i];
  auto pa = a, pb = b;
  return Tensor<Real>::from_op(
      a.shape(), std::move(out), {a, b}, [pa, pb](Node<Real>& n) mutable {
        if (pa.requires_grad()) {
          auto& g = pa.grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * pb.values()[i];
        }
        if (pb.requires_grad()) {
          auto& g = pb.grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * pa.values()[i];
        }
      });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real acc(0);
  for (Real v : a.values()) acc += v;
  auto pa = a;
  return Tensor<Real>::from_op(
      {1}, {acc}, {a}, [pa](Node<Real>& n) mutable {
        if (!pa.requires_grad()) return;
        auto& g = pa.grad();
        for (Real& v : g) v += n.grad[0];
      });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] > Real(0) ? a.values()[i] : Real(0);
  auto pa = a;
  return Tensor<Real>::from_op(
      a.shape(), std::move(out), {a}, [pa](Node<Real>& n) mutable {
        if (!pa.requires_grad()) return;
        auto& g = pa.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          if (pa.values()[i] > Real(0)) g[i] += n.grad[i];
      });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Real(1) / (Real(1) + std::exp(-a.values()[i]));
  auto pa = a;
  Tensor<Real> result = Tensor<Real>::from_op(
      a.shape(), std::move(out), {a},
      [pa](Node<Real>& n) mutable {
        if (!pa.requires_grad()) return;
        auto& g = pa.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const Real y = n.value[i];
          g[i] += n.grad[i] * y * (Real(1) - y);
        }
      });
  return result;
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeMismatch("reshape: element count must be preserved");
  auto pa = a;
  return Tensor<Real>::from_op(
      std::move(shape), a.values(), {a}, [pa](Node<Real>& n) mutable {
        detail::accumulate(*pa.node(), n.grad.data(), n.grad.size());
      });
}

// Stack K column tensors of shape (N,1) into (N,K).
template <class Real>
Tensor<Real> concat_columns(const std::vector<Tensor<Real>>& cols) {
  if (cols.empty()) throw EmptyBranches("concat_columns: no inputs");
  const int n = cols[0].dim(0);
  const int k = static_cast<int>(cols.size());
  for (const auto& c : cols)
    if (c.ndim() != 2 || c.dim(0) != n || c.dim(1) != 1)
      throw ShapeMismatch("concat_columns expects (N,1) inputs");
  std::vector<Real> out(static_cast<std::size_t>(n) * k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i) * k + j] = cols[j].values()[i];
  auto parents = cols;
  return Tensor<Real>::from_op(
      {n, k}, std::move(out), cols, [parents, n, k](Node<Real>& node) mutable {
        for (int j = 0; j < k; ++j) {
          if (!parents[j].requires_grad()) continue;
          auto& g = parents[j].grad();
          for (int i = 0; i < n; ++i)
            g[i] += node.grad[static_cast<std::size_t>(i) * k + j];
        }
      });
}

// ---------------------------------------------------------------------------
// fully connected: y = x W^T + b, x (N,F), W (O,F), b (O)
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w,
                    const Tensor<Real>& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 ||
      x.dim(1) != w.dim(1) || w.dim(0) != b.dim(0))
    throw ShapeMismatch("linear: incompatible shapes");
  const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
  std::vector<Real> out(static_cast<std::size_t>(n) * o);
  {
    CMapM<Real> xm(x.values().data(), n, f);
    CMapM<Real> wm(w.values().data(), o, f);
    MapM<Real> ym(out.data(), n, o);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < o; ++j) ym(i, j) += b.values()[j];
  }
  auto px = x, pw = w, pb = b;
  return Tensor<Real>::from_op(
      {n, o}, std::move(out), {x, w, b},
      [px, pw, pb, n, f, o](Node<Real>& node) mutable {
        CMapM<Real> gy(node.grad.data(), n, o);
        if (px.requires_grad()) {
          MapM<Real> gx(px.grad().data(), n, f);
          CMapM<Real> wm(pw.values().data(), o, f);
          gx.noalias() += gy * wm;
        }
        if (pw.requires_grad()) {
          MapM<Real> gw(pw.grad().data(), o, f);
          CMapM<Real> xm(px.values().data(), n, f);
          gw.noalias() += gy.transpose() * xm;
        }
        if (pb.requires_grad()) {
          auto& gb = pb.grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < o; ++j) gb[j] += gy(i, j);
        }
      });
}

// ---------------------------------------------------------------------------
// convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <class Real>
void im2col(const Real* x, int c_in, int h, int w, int kh, int kw, int sh,
            int sw, int ph, int pw, int h_out, int w_out, Real* col) {
  const std::size_t patch = static_cast<std::size_t>(h_out) * w_out;
  for (int c = 0; c < c_in; ++c) {
    const Real* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        Real* row =
            col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * patch;
        for (int oi = 0; oi < h_out; ++oi) {
          const int src_i = oi * sh + ki - ph;
          Real* dst = row + static_cast<std::size_t>(oi) * w_out;
          if (src_i < 0 || src_i >= h) {
            std::fill(dst, dst + w_out, Real(0));
            continue;
          }
          const Real* src_row = plane + static_cast<std::size_t>(src_i) * w;
          for (int oj = 0; oj < w_out; ++oj) {
            const int src_j = oj * sw + kj - pw;
            dst[oj] = (src_j >= 0 && src_j < w) ? src_row[src_j] : Real(0);
          }
        }
      }
    }
  }
}

template <class Real>
void col2im_add(const Real* col, int c_in, int h, int w, int kh, int kw,
                int sh, int sw, int ph, int pw, int h_out, int w_out,
                Real* x_grad) {
  const std::size_t patch = static_cast<std::size_t>(h_out) * w_out;
  for (int c = 0; c < c_in; ++c) {
    Real* plane = x_grad + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const Real* row =
            col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * patch;
        for (int oi = 0; oi < h_out; ++oi) {
          const int dst_i = oi * sh + ki - ph;
          if (dst_i < 0 || dst_i >= h) continue;
          Real* dst_row = plane + static_cast<std::size_t>(dst_i) * w;
          const Real* src = row + static_cast<std::size_t>(oi) * w_out;
          for (int oj = 0; oj < w_out; ++oj) {
            const int dst_j = oj * sw + kj - pw;
            if (dst_j >= 0 && dst_j < w) dst_row[dst_j] += src[oj];
          }
        }
      }
    }
  }
}

// Shared 4D conv core; conv1d routes through it with kh = 1.
template <class Real>
Tensor<Real> conv_core(const Tensor<Real>& x, const Tensor<Real>& weight,
                       const Tensor<Real>& bias, int sh, int sw, int ph,
                       int pw) {
  const int batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c_in)
    throw ShapeMismatch("conv: input has " + std::to_string(c_in) +
                        " channels, kernel expects " +
                        std::to_string(weight.dim(1)));
  if (bias.ndim() != 1 || bias.dim(0) != c_out)
    throw ShapeMismatch("conv: bias must have one entry per output channel");
  const int h_out = conv_out_dim(h, kh, sh, ph);
  const int w_out = conv_out_dim(w, kw, sw, pw);
  if (h_out < 1 || w_out < 1)
    throw ShapeMismatch("conv: kernel larger than padded input");

  const std::size_t k_dim = static_cast<std::size_t>(c_in) * kh * kw;
  const std::size_t patch = static_cast<std::size_t>(h_out) * w_out;
  const std::size_t in_plane = static_cast<std::size_t>(c_in) * h * w;
  const std::size_t out_plane = static_cast<std::size_t>(c_out) * patch;

  std::vector<Real> out(static_cast<std::size_t>(batch) * out_plane);
  {
    std::vector<Real> col(k_dim * patch);
    CMapM<Real> wm(weight.values().data(), c_out, static_cast<int>(k_dim));
    for (int nb = 0; nb < batch; ++nb) {
      im2col(x.values().data() + nb * in_plane, c_in, h, w, kh, kw, sh, sw, ph,
             pw, h_out, w_out, col.data());
      CMapM<Real> cm(col.data(), static_cast<int>(k_dim),
                     static_cast<int>(patch));
      MapM<Real> om(out.data() + nb * out_plane, c_out,
                    static_cast<int>(patch));
      om.noalias() = wm * cm;
      for (int q = 0; q < c_out; ++q)
        om.row(q).array() += bias.values()[q];
    }
  }

  auto px = x, pwt = weight, pb = bias;
  return Tensor<Real>::from_op(
      {batch, c_out, h_out, w_out}, std::move(out), {x, weight, bias},
      [px, pwt, pb, batch, c_in, h, w, kh, kw, sh, sw, ph, pw, h_out, w_out,
       k_dim, patch, in_plane, out_plane](Node<Real>& node) mutable {
        const int c_out_n = pwt.node()->shape[0];
        std::vector<Real> col(k_dim * patch);
        std::vector<Real> dcol(k_dim * patch);
        CMapM<Real> wm(pwt.values().data(), c_out_n, static_cast<int>(k_dim));
        for (int nb = 0; nb < batch; ++nb) {
          CMapM<Real> gy(node.grad.data() + nb * out_plane, c_out_n,
                         static_cast<int>(patch));
          if (pwt.requires_grad() || pb.requires_grad()) {
            if (pwt.requires_grad()) {
              im2col(px.values().data() + nb * in_plane, c_in, h, w, kh, kw,
                     sh, sw, ph, pw, h_out, w_out, col.data());
              CMapM<Real> cm(col.data(), static_cast<int>(k_dim),
                             static_cast<int>(patch));
              MapM<Real> gw(pwt.grad().data(), c_out_n,
                            static_cast<int>(k_dim));
              gw.noalias() += gy * cm.transpose();
            }
            if (pb.requires_grad()) {
              // fixed-order accumulation; Eigen's vectorized redux peels an
              // address-dependent prologue, which breaks run determinism
              auto& gb = pb.grad();
              const Real* gptr = node.grad.data() + nb * out_plane;
              for (int q = 0; q < c_out_n; ++q) {
                Real acc(0);
                for (std::size_t t = 0; t < patch; ++t)
                  acc += gptr[static_cast<std::size_t>(q) * patch + t];
                gb[q] += acc;
              }
            }
          }
          if (px.requires_grad()) {
            MapM<Real> dcm(dcol.data(), static_cast<int>(k_dim),
                           static_cast<int>(patch));
            dcm.noalias() = wm.transpose() * gy;
            col2im_add(dcol.data(), c_in, h, w, kh, kw, sh, sw, ph, pw, h_out,
                       w_out, px.grad().data() + nb * in_plane);
          }
        }
      });
}

}  // namespace detail

// x (N,C,H,W) or (C,H,W); weight (C_out, C_in, s1, s2); bias (C_out)
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, int stride = 1, int padding = 0) {
  if (weight.ndim() != 4) throw ShapeMismatch("conv2d: weight must be 4D");
  if (x.ndim() == 3) {
    auto x4 = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    auto y = detail::conv_core(x4, weight, bias, stride, stride, padding,
                               padding);
    return reshape(y, {y.dim(1), y.dim(2), y.dim(3)});
  }
  if (x.ndim() != 4) throw ShapeMismatch("conv2d: input must be 3D or 4D");
  return detail::conv_core(x, weight, bias, stride, stride, padding, padding);
}

// x (N,C,L) or (C,L); weight (C_out, C_in, s); bias (C_out)
template <class Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, int stride = 1, int padding = 0) {
  if (weight.ndim() != 3) throw ShapeMismatch("conv1d: weight must be 3D");
  auto w4 = reshape(weight, {weight.dim(0), weight.dim(1), 1, weight.dim(2)});
  if (x.ndim() == 2) {
    auto x4 = reshape(x, {1, x.dim(0), 1, x.dim(1)});
    auto y = detail::conv_core(x4, w4, bias, 1, stride, 0, padding);
    return reshape(y, {y.dim(1), y.dim(3)});
  }
  if (x.ndim() != 3) throw ShapeMismatch("conv1d: input must be 2D or 3D");
  auto x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  auto y = detail::conv_core(x4, w4, bias, 1, stride, 0, padding);
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

namespace detail {

// Max pool over (N,C,H,W). Ties break to the first (row-major) index so the
// backward pass is deterministic. Padded positions never win.
template <class Real>
Tensor<Real> max_pool_core(const Tensor<Real>& x, int kh, int kw, int sh,
                           int sw, int ph, int pw) {
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int h_out = conv_out_dim(h, kh, sh, ph);
  const int w_out = conv_out_dim(w, kw, sw, pw);
  if (h_out < 1 || w_out < 1) throw ShapeMismatch("max_pool: window too large");
  const std::size_t planes = static_cast<std::size_t>(batch) * c;
  std::vector<Real> out(planes * h_out * w_out);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* plane = x.values().data() + p * h * w;
    for (int oi = 0; oi < h_out; ++oi) {
      for (int oj = 0; oj < w_out; ++oj, ++o) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::int64_t best_idx = -1;
        for (int ki = 0; ki < kh; ++ki) {
          const int i = oi * sh + ki - ph;
          if (i < 0 || i >= h) continue;
          for (int kj = 0; kj < kw; ++kj) {
            const int j = oj * sw + kj - pw;
            if (j < 0 || j >= w) continue;
            const Real v = plane[static_cast<std::size_t>(i) * w + j];
            if (v > best) {
              best = v;
              best_idx = static_cast<std::int64_t>(p * h * w + i * w + j);
            }
          }
        }
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  auto px = x;
  return Tensor<Real>::from_op(
      {batch, c, h_out, w_out}, std::move(out), {x},
      [px, argmax](Node<Real>& node) mutable {
        if (!px.requires_grad()) return;
        auto& g = px.grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i)
          if ((*argmax)[i] >= 0) g[(*argmax)[i]] += node.grad[i];
      });
}

template <class Real>
Tensor<Real> avg_pool_core(const Tensor<Real>& x, int kh, int kw, int sh,
                           int sw) {
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int h_out = conv_out_dim(h, kh, sh, 0);
  const int w_out = conv_out_dim(w, kw, sw, 0);
  if (h_out < 1 || w_out < 1) throw ShapeMismatch("avg_pool: window too large");
  const std::size_t planes = static_cast<std::size_t>(batch) * c;
  const Real inv = Real(1) / static_cast<Real>(kh * kw);
  std::vector<Real> out(planes * h_out * w_out);
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* plane = x.values().data() + p * h * w;
    for (int oi = 0; oi < h_out; ++oi)
      for (int oj = 0; oj < w_out; ++oj, ++o) {
        Real acc(0);
        for (int ki = 0; ki < kh; ++ki)
          for (int kj = 0; kj < kw; ++kj)
            acc += plane[static_cast<std::size_t>(oi * sh + ki) * w +
                         (oj * sw + kj)];
        out[o] = acc * inv;
      }
  }
  auto px = x;
  return Tensor<Real>::from_op(
      {batch, c, h_out, w_out}, std::move(out), {x},
      [px, kh, kw, sh, sw, h, w, h_out, w_out, inv,
       planes](Node<Real>& node) mutable {
        if (!px.requires_grad()) return;
        auto& g = px.grad();
        std::size_t o = 0;
        for (std::size_t p = 0; p < planes; ++p) {
          Real* plane = g.data() + p * h * w;
          for (int oi = 0; oi < h_out; ++oi)
            for (int oj = 0; oj < w_out; ++oj, ++o) {
              const Real gv = node.grad[o] * inv;
              for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj)
                  plane[static_cast<std::size_t>(oi * sh + ki) * w +
                        (oj * sw + kj)] += gv;
            }
        }
      });
}

}  // namespace detail

template <class Real>
Tensor<Real> max_pool2d(const Tensor<Real>& x, int kernel, int stride,
                        int padding = 0) {
  if (x.ndim() != 4) throw ShapeMismatch("max_pool2d: input must be 4D");
  return detail::max_pool_core(x, kernel, kernel, stride, stride, padding,
                               padding);
}

template <class Real>
Tensor<Real> avg_pool2d(const Tensor<Real>& x, int kernel, int stride) {
  if (x.ndim() != 4) throw ShapeMismatch("avg_pool2d: input must be 4D");
  return detail::avg_pool_core(x, kernel, kernel, stride, stride);
}

template <class Real>
Tensor<Real> max_pool1d(const Tensor<Real>& x, int kernel, int stride) {
  if (x.ndim() != 3) throw ShapeMismatch("max_pool1d: input must be 3D");
  auto x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  auto y = detail::max_pool_core(x4, 1, kernel, 1, stride, 0, 0);
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

template <class Real>
Tensor<Real> avg_pool1d(const Tensor<Real>& x, int kernel, int stride) {
  if (x.ndim() != 3) throw ShapeMismatch("avg_pool1d: input must be 3D");
  auto x4 = reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)});
  auto y = detail::avg_pool_core(x4, 1, kernel, 1, stride);
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

// (N,C,H,W) -> (N,C)
template <class Real>
Tensor<Real> global_avg_pool2d(const Tensor<Real>& x) {
  if (x.ndim() != 4) throw ShapeMismatch("global_avg_pool2d: input must be 4D");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const Real inv = Real(1) / static_cast<Real>(spatial);
  std::vector<Real> out(static_cast<std::size_t>(n) * c);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const Real* plane = x.values().data() + p * spatial;
    Real acc(0);
    for (std::size_t i = 0; i < spatial; ++i) acc += plane[i];
    out[p] = acc * inv;
  }
  auto px = x;
  return Tensor<Real>::from_op(
      {n, c}, std::move(out), {x}, [px, spatial, inv](Node<Real>& node) mutable {
        if (!px.requires_grad()) return;
        auto& g = px.grad();
        for (std::size_t p = 0; p < node.grad.size(); ++p) {
          const Real gv = node.grad[p] * inv;
          Real* plane = g.data() + p * spatial;
          for (std::size_t i = 0; i < spatial; ++i) plane[i] += gv;
        }
      });
}

// ---------------------------------------------------------------------------
// batch normalization over the channel axis (dim 1); stats reduce over all
// remaining axes. Training mode uses batch statistics and updates the running
// estimates; eval mode uses the running estimates.
// ---------------------------------------------------------------------------

template <class Real>
struct BatchNormState {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);
};

template <class Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, BatchNormState<Real>& state,
                        bool training) {
  if (x.ndim() < 2) throw ShapeMismatch("batch_norm: input must be >= 2D");
  const int batch = x.dim(0), c = x.dim(1);
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 ||
      beta.dim(0) != c)
    throw ShapeMismatch("batch_norm: affine params must be (C)");
  if (state.running_mean.size() != static_cast<std::size_t>(c))
    throw ShapeMismatch("batch_norm: state size mismatch");
  std::size_t spatial = 1;
  for (std::size_t d = 2; d < x.ndim(); ++d) spatial *= x.dim(d);
  const std::size_t count = static_cast<std::size_t>(batch) * spatial;

  auto mean = std::make_shared<std::vector<Real>>(c, Real(0));
  auto inv_std = std::make_shared<std::vector<Real>>(c, Real(0));
  auto channel_value = [&](const std::vector<Real>& v, int nb, int ch,
                           std::size_t s) -> Real {
    return v[(static_cast<std::size_t>(nb) * c + ch) * spatial + s];
  };

  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      Real m(0);
      for (int nb = 0; nb < batch; ++nb)
        for (std::size_t s = 0; s < spatial; ++s)
          m += channel_value(x.values(), nb, ch, s);
      m /= static_cast<Real>(count);
      Real var(0);
      for (int nb = 0; nb < batch; ++nb)
        for (std::size_t s = 0; s < spatial; ++s) {
          const Real d = channel_value(x.values(), nb, ch, s) - m;
          var += d * d;
        }
      var /= static_cast<Real>(count);
      (*mean)[ch] = m;
      (*inv_std)[ch] = Real(1) / std::sqrt(var + state.eps);
      const Real unbiased =
          count > 1 ? var * static_cast<Real>(count) /
                          static_cast<Real>(count - 1)
                    : var;
      state.running_mean[ch] =
          (Real(1) - state.momentum) * state.running_mean[ch] +
          state.momentum * m;
      state.running_var[ch] =
          (Real(1) - state.momentum) * state.running_var[ch] +
          state.momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      (*mean)[ch] = state.running_mean[ch];
      (*inv_std)[ch] = Real(1) / std::sqrt(state.running_var[ch] + state.eps);
    }
  }

  std::vector<Real> out(x.size());
  for (int nb = 0; nb < batch; ++nb)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t idx =
            (static_cast<std::size_t>(nb) * c + ch) * spatial + s;
        const Real xhat = (x.values()[idx] - (*mean)[ch]) * (*inv_std)[ch];
        out[idx] = gamma.values()[ch] * xhat + beta.values()[ch];
      }

  auto px = x, pg = gamma, pb = beta;
  return Tensor<Real>::from_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [px, pg, pb, mean, inv_std, batch, c, spatial, count,
       training](Node<Real>& node) mutable {
        // per-channel reductions of dy and dy*xhat
        std::vector<Real> sum_dy(c, Real(0)), sum_dy_xhat(c, Real(0));
        auto idx_of = [c, spatial](int nb, int ch, std::size_t s) {
          return (static_cast<std::size_t>(nb) * c + ch) * spatial + s;
        };
        for (int nb = 0; nb < batch; ++nb)
          for (int ch = 0; ch < c; ++ch)
            for (std::size_t s = 0; s < spatial; ++s) {
              const std::size_t i = idx_of(nb, ch, s);
              const Real xhat =
                  (px.values()[i] - (*mean)[ch]) * (*inv_std)[ch];
              sum_dy[ch] += node.grad[i];
              sum_dy_xhat[ch] += node.grad[i] * xhat;
            }
        if (pg.requires_grad()) {
          auto& g = pg.grad();
          for (int ch = 0; ch < c; ++ch) g[ch] += sum_dy_xhat[ch];
        }
        if (pb.requires_grad()) {
          auto& g = pb.grad();
          for (int ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
        }
        if (px.requires_grad()) {
          auto& g = px.grad();
          const Real inv_count = Real(1) / static_cast<Real>(count);
          for (int nb = 0; nb < batch; ++nb)
            for (int ch = 0; ch < c; ++ch) {
              const Real scale = pg.values()[ch] * (*inv_std)[ch];
              for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t i = idx_of(nb, ch, s);
                if (training) {
                  const Real xhat =
                      (px.values()[i] - (*mean)[ch]) * (*inv_std)[ch];
                  g[i] += scale * (node.grad[i] - sum_dy[ch] * inv_count -
                                   xhat * sum_dy_xhat[ch] * inv_count);
                } else {
                  g[i] += scale * node.grad[i];
                }
              }
            }
        }
      });
}

}  // namespace afdetect::nn
