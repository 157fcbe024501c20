#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "afdetect/ecg.hpp"
#include "afdetect/errors.hpp"

namespace afdetect {

enum class FilterKind { HighPass, LowPass, Notch };

struct FilterSpec {
  FilterKind kind = FilterKind::LowPass;
  double cutoff_hz = 0.0;   // corner (HP/LP) or center (notch)
  int order = 4;            // HP/LP only; must be even
  double q = 30.0;          // notch only
};

// One second-order section, direct form II transposed, normalized a0 = 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

namespace detail {

inline void check_cutoff(double fc, double fs) {
  if (!(fc > 0.0) || fc >= fs / 2.0)
    throw InvalidCutoff("cutoff must lie in (0, fs/2)");
}

// Butterworth HP/LP as a cascade of bilinear-transformed biquads. Section k
// of an even order-n filter has quality factor 1 / (2 sin(pi(2k+1)/(2n))).
inline std::vector<Biquad> butterworth(FilterKind kind, double fc, double fs,
                                       int order) {
  check_cutoff(fc, fs);
  if (order < 2 || order % 2 != 0)
    throw ConfigError("Butterworth order must be a positive even number");
  const double w0 = 2.0 * std::numbers::pi * fc / fs;
  const double cw = std::cos(w0);
  const double sw = std::sin(w0);
  std::vector<Biquad> sos;
  for (int k = 0; k < order / 2; ++k) {
    const double q =
        1.0 / (2.0 * std::sin(std::numbers::pi * (2 * k + 1) / (2.0 * order)));
    const double alpha = sw / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad s{};
    if (kind == FilterKind::LowPass) {
      s.b0 = (1.0 - cw) / 2.0 / a0;
      s.b1 = (1.0 - cw) / a0;
      s.b2 = s.b0;
    } else {
      s.b0 = (1.0 + cw) / 2.0 / a0;
      s.b1 = -(1.0 + cw) / a0;
      s.b2 = s.b0;
    }
    s.a1 = (-2.0 * cw) / a0;
    s.a2 = (1.0 - alpha) / a0;
    sos.push_back(s);
  }
  return sos;
}

inline std::vector<Biquad> notch(double f0, double fs, double q) {
  check_cutoff(f0, fs);
  if (!(q > 0.0)) throw ConfigError("notch Q must be positive");
  const double w0 = 2.0 * std::numbers::pi * f0 / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  Biquad s{};
  s.b0 = 1.0 / a0;
  s.b1 = -2.0 * std::cos(w0) / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2.0 * std::cos(w0) / a0;
  s.a2 = (1.0 - alpha) / a0;
  return {s};
}

inline std::vector<Biquad> design(const FilterSpec& spec, double fs) {
  switch (spec.kind) {
    case FilterKind::LowPass:
      return butterworth(FilterKind::LowPass, spec.cutoff_hz, fs, spec.order);
    case FilterKind::HighPass:
      return butterworth(FilterKind::HighPass, spec.cutoff_hz, fs, spec.order);
    case FilterKind::Notch:
      return notch(spec.cutoff_hz, fs, spec.q);
  }
  throw ConfigError("unknown filter kind");
}

inline std::vector<double> run_sos(const std::vector<Biquad>& sos,
                                   const std::vector<double>& x) {
  std::vector<double> y = x;
  for (const Biquad& s : sos) {
    double z1 = 0.0, z2 = 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

// Samples for the slowest pole to decay below 1e-9; high-Q sections ring
// far longer than the classic 3*(taps+1) rule assumes.
inline std::size_t settle_length(const std::vector<Biquad>& sos) {
  double worst = 0.0;
  for (const Biquad& s : sos) {
    const double disc = s.a1 * s.a1 - 4.0 * s.a2;
    double r;
    if (disc < 0.0) {
      r = std::sqrt(s.a2);
    } else {
      r = std::max(std::fabs(-s.a1 + std::sqrt(disc)),
                   std::fabs(-s.a1 - std::sqrt(disc))) /
          2.0;
    }
    worst = std::max(worst, r);
  }
  if (worst <= 0.0 || worst >= 1.0) return 0;
  return static_cast<std::size_t>(
      std::ceil(std::log(1e-9) / std::log(worst)));
}

// Pole angle of the slowest-decaying section; 0 when its poles are real.
// Content at this frequency is what rings longest through the cascade.
inline double slowest_pole_angle(const std::vector<Biquad>& sos) {
  double worst_r = -1.0, angle = 0.0;
  for (const Biquad& s : sos) {
    const double disc = s.a1 * s.a1 - 4.0 * s.a2;
    double r, th;
    if (disc < 0.0) {
      r = std::sqrt(s.a2);
      th = std::atan2(std::sqrt(-disc) / 2.0, -s.a1 / 2.0);
    } else {
      r = std::max(std::fabs(-s.a1 + std::sqrt(disc)),
                   std::fabs(-s.a1 - std::sqrt(disc))) /
          2.0;
      th = 0.0;
    }
    if (r > worst_r) {
      worst_r = r;
      angle = th;
    }
  }
  return angle;
}

// Least-squares fit of c0 + c1 cos(theta t) + c2 sin(theta t) over the last
// K samples (t is the absolute sample index). theta = 0 degenerates to the
// window mean. Returns {c0, c1, c2}.
inline std::array<double, 3> narrowband_fit(const std::vector<double>& x,
                                            std::size_t K, double theta) {
  const std::size_t n = x.size();
  const std::size_t t0 = n - K;
  if (theta * static_cast<double>(K) < 2.0 * std::numbers::pi) {
    double mean = 0.0;
    for (std::size_t t = t0; t < n; ++t) mean += x[t];
    return {mean / static_cast<double>(K), 0.0, 0.0};
  }
  double m[3][3] = {};
  double rhs[3] = {};
  for (std::size_t t = t0; t < n; ++t) {
    const double b[3] = {1.0, std::cos(theta * static_cast<double>(t)),
                         std::sin(theta * static_cast<double>(t))};
    for (int i = 0; i < 3; ++i) {
      rhs[i] += b[i] * x[t];
      for (int j = 0; j < 3; ++j) m[i][j] += b[i] * b[j];
    }
  }
  // 3x3 Gaussian elimination with partial pivoting
  int perm[3] = {0, 1, 2};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
    std::swap(m[col], m[piv]);
    std::swap(rhs[col], rhs[piv]);
    std::swap(perm[col], perm[piv]);
    if (std::fabs(m[col][col]) < 1e-12) {
      double mean = 0.0;
      for (std::size_t t = t0; t < n; ++t) mean += x[t];
      return {mean / static_cast<double>(K), 0.0, 0.0};
    }
    for (int r = col + 1; r < 3; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int c2 = col; c2 < 3; ++c2) m[r][c2] -= f * m[col][c2];
      rhs[r] -= f * rhs[col];
    }
  }
  std::array<double, 3> c{};
  for (int r = 2; r >= 0; --r) {
    double v = rhs[r];
    for (int c2 = r + 1; c2 < 3; ++c2) v -= m[r][c2] * c[c2];
    c[r] = v / m[r][r];
  }
  return c;
}

}  // namespace detail

// Zero-phase filtering: forward pass, reverse, forward pass, reverse.
// Each edge is extended by a narrowband least-squares continuation at the
// cascade's slowest pole frequency plus an odd reflection of the residual,
// so high-Q sections see no phase break at the cut points. The extension is
// a fixed linear map of the input, keeping the whole operation linear. A
// raised-cosine fade takes the far end of each pad to zero.
inline std::vector<double> filtfilt(const std::vector<Biquad>& sos,
                                    const std::vector<double>& x) {
  const std::size_t min_pad = 3 * (2 * sos.size() + 1);
  if (x.size() <= min_pad)
    throw TooShort("signal too short for zero-phase filtering");
  const std::size_t n = x.size();
  const std::size_t pad =
      std::min(std::max(min_pad, detail::settle_length(sos)), n - 1);
  const double theta = detail::slowest_pole_angle(sos);
  const std::size_t K = std::min(n, std::max<std::size_t>(pad, 32));

  auto taper = [pad](std::size_t k) {
    return 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(k) /
                                 static_cast<double>(pad + 1)));
  };
  auto model = [theta](const std::array<double, 3>& c, double t) {
    return c[0] + c[1] * std::cos(theta * t) + c[2] * std::sin(theta * t);
  };

  const std::array<double, 3> cr = detail::narrowband_fit(x, K, theta);
  std::vector<double> rev(x.rbegin(), x.rend());
  const std::array<double, 3> cl = detail::narrowband_fit(rev, K, theta);

  // residual at absolute index t (right edge) / reversed index (left edge)
  auto res_r = [&](std::size_t t) {
    return x[t] - model(cr, static_cast<double>(t));
  };
  auto res_l = [&](std::size_t t) {
    return rev[t] - model(cl, static_cast<double>(t));
  };

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) {
    const double v = model(cl, static_cast<double>(n - 1) +
                                   static_cast<double>(i)) +
                     2.0 * res_l(n - 1) - res_l(n - 1 - i);
    ext.push_back(v * taper(i));
  }
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) {
    const double v = model(cr, static_cast<double>(n - 1) +
                                   static_cast<double>(i)) +
                     2.0 * res_r(n - 1) - res_r(n - 1 - i);
    ext.push_back(v * taper(i));
  }

  std::vector<double> y = detail::run_sos(sos, ext);
  std::reverse(y.begin(), y.end());
  y = detail::run_sos(sos, y);
  std::reverse(y.begin(), y.end());
  return std::vector<double>(y.begin() + pad, y.begin() + pad + n);
}

inline EcgRecord apply_filter(const EcgRecord& rec, const FilterSpec& spec) {
  if (rec.samples.size() < static_cast<std::size_t>(3 * spec.order))
    throw TooShort("signal shorter than 3x filter order");
  const auto sos = detail::design(spec, rec.fs);
  EcgRecord out = rec;
  out.samples = filtfilt(sos, rec.samples);
  return out;
}

struct DenoiseConfig {
  double highpass_hz = 0.5;
  double notch_hz = 60.0;   // 50 for European line frequency
  double lowpass_hz = 40.0;
  int order = 4;
  double notch_q = 30.0;
};

// Baseline wander, power-line interference, then high-frequency noise,
// removed in that order.
inline EcgRecord denoise_chain(const EcgRecord& rec,
                               const DenoiseConfig& cfg = {}) {
  EcgRecord out = apply_filter(
      rec, {FilterKind::HighPass, cfg.highpass_hz, cfg.order, 0.0});
  out = apply_filter(out, {FilterKind::Notch, cfg.notch_hz, 2, cfg.notch_q});
  out = apply_filter(out,
                     {FilterKind::LowPass, cfg.lowpass_hz, cfg.order, 0.0});
  return out;
}

}  // namespace afdetect
