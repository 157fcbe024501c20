#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "afdetect/errors.hpp"

namespace afdetect {

// Mexican hat (negated second derivative of a Gaussian):
//   psi(t) = 2/(sqrt(3) pi^{1/4}) * exp(-t^2/2) * (1 - t^2)
inline double mexican_hat(double t) {
  static const double norm =
      2.0 / (std::sqrt(3.0) * std::pow(std::numbers::pi, 0.25));
  return norm * std::exp(-0.5 * t * t) * (1.0 - t * t);
}

// Conventional center frequency of the mexican hat wavelet.
inline constexpr double kMexicanHatCenterFrequency = 0.25;

// Wavelet argument beyond which the mexican hat tail is below 1e-13; the
// discrete transform truncates its support there.
inline constexpr double kWaveletSupportRadius = 8.0;

struct WaveletConfig {
  std::vector<double> scales;  // strictly increasing, in samples
  double center_frequency = kMexicanHatCenterFrequency;
  double fs = 0.0;  // Hz

  void validate() const {
    if (scales.empty()) throw ConfigError("scale grid is empty");
    double prev = 0.0;
    for (double a : scales) {
      if (!(a > prev)) throw NonPositiveScale("scales must be positive and strictly increasing");
      prev = a;
    }
    if (!(center_frequency > 0.0)) throw ConfigError("Fc must be positive");
    if (!(fs > 0.0)) throw ConfigError("fs must be positive");
  }
};

// F = Fc * fs / a  (a in samples, F in Hz)
inline double scale_to_frequency(double a, const WaveletConfig& cfg) {
  if (!(a > 0.0)) throw NonPositiveScale("scale must be positive");
  return cfg.center_frequency * cfg.fs / a;
}

// Logarithmic scale grid covering [f_min, f_max] Hz; scales ascend, so
// frequencies descend from f_max to f_min.
inline WaveletConfig make_wavelet_config(double fs, int n_scales = 64,
                                         double f_min = 1.0,
                                         double f_max = 40.0) {
  if (n_scales < 2 || !(f_min > 0.0) || !(f_max > f_min))
    throw ConfigError("invalid scale grid request");
  WaveletConfig cfg;
  cfg.fs = fs;
  const double a_lo = cfg.center_frequency * fs / f_max;
  const double a_hi = cfg.center_frequency * fs / f_min;
  cfg.scales.resize(n_scales);
  const double log_lo = std::log(a_lo);
  const double log_hi = std::log(a_hi);
  for (int i = 0; i < n_scales; ++i)
    cfg.scales[i] =
        std::exp(log_lo + (log_hi - log_lo) * i / (n_scales - 1));
  cfg.validate();
  return cfg;
}

// 2D grid of CWT coefficients T(a,b): one row per scale, one column per
// time shift b (= per input sample).
struct Scalogram {
  std::vector<double> coefficients;  // row-major, n_scales x n_samples
  std::vector<double> scales;
  double fs = 0.0;
  std::size_t n_scales() const { return scales.size(); }
  std::size_t n_samples() const {
    return scales.empty() ? 0 : coefficients.size() / scales.size();
  }
  double at(std::size_t row, std::size_t col) const {
    return coefficients[row * n_samples() + col];
  }
};

// Discrete CWT per Eq-style Riemann sum with unit sample spacing:
//   T(a,b) = (1/sqrt(a)) * sum_t x[t] * psi((t-b)/a)
// evaluated as a direct convolution per scale, with the wavelet support
// truncated at |t-b| > kWaveletSupportRadius * a. Edges are zero-padded.
inline Scalogram cwt_transform(const std::vector<double>& x,
                               const WaveletConfig& cfg) {
  cfg.validate();
  if (x.size() < 2) throw EmptySignal("signal must have at least 2 samples");
  const auto n = static_cast<std::ptrdiff_t>(x.size());

  Scalogram s;
  s.scales = cfg.scales;
  s.fs = cfg.fs;
  s.coefficients.assign(cfg.scales.size() * x.size(), 0.0);

  std::vector<double> kernel;
  for (std::size_t row = 0; row < cfg.scales.size(); ++row) {
    const double a = cfg.scales[row];
    const auto radius = static_cast<std::ptrdiff_t>(
        std::ceil(kWaveletSupportRadius * a));
    kernel.resize(2 * radius + 1);
    const double amp = 1.0 / std::sqrt(a);
    for (std::ptrdiff_t d = -radius; d <= radius; ++d)
      kernel[d + radius] = amp * mexican_hat(static_cast<double>(d) / a);

    double* out = s.coefficients.data() + row * x.size();
    for (std::ptrdiff_t b = 0; b < n; ++b) {
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-radius, -b);
      const std::ptrdiff_t hi = std::min(radius, n - 1 - b);
      double acc = 0.0;
      for (std::ptrdiff_t d = lo; d <= hi; ++d)
        acc += x[b + d] * kernel[d + radius];
      out[b] = acc;
    }
  }
  return s;
}

enum class ScalogramMode { Absolute, Signed };

// H x W grid of reals in [0,1], sized for the classifier input.
struct ScalogramImage {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
};

namespace detail {

// Area-average resize of one axis: out[j] = integral of in over
// [j*ratio, (j+1)*ratio) / ratio, with fractional end weights.
inline void area_resize_axis(const double* in, std::size_t n_in, double* out,
                             std::size_t n_out, std::size_t stride_in,
                             std::size_t stride_out) {
  const double ratio = static_cast<double>(n_in) / n_out;
  for (std::size_t j = 0; j < n_out; ++j) {
    const double lo = j * ratio;
    const double hi = (j + 1) * ratio;
    const auto first = static_cast<std::size_t>(lo);
    const auto last = std::min(static_cast<std::size_t>(std::ceil(hi)), n_in);
    double acc = 0.0;
    for (std::size_t k = first; k < last; ++k) {
      const double cover = std::min(hi, static_cast<double>(k + 1)) -
                           std::max(lo, static_cast<double>(k));
      acc += in[k * stride_in] * cover;
    }
    out[j * stride_out] = acc / ratio;
  }
}

}  // namespace detail

// |T| (absolute mode) or T (signed), area-averaged to H x W, then min-max
// normalized to [0,1]. A constant grid maps to all 0.5.
inline ScalogramImage scalogram_to_image(const Scalogram& s, int height,
                                         int width,
                                         ScalogramMode mode = ScalogramMode::Absolute) {
  if (height < 8 || width < 8)
    throw ConfigError("scalogram image must be at least 8x8");
  const std::size_t rows = s.n_scales();
  const std::size_t cols = s.n_samples();

  std::vector<double> grid = s.coefficients;
  if (mode == ScalogramMode::Absolute)
    for (double& v : grid) v = std::fabs(v);

  // resize columns (time axis), then rows (scale axis)
  std::vector<double> mid(rows * static_cast<std::size_t>(width));
  for (std::size_t r = 0; r < rows; ++r)
    detail::area_resize_axis(grid.data() + r * cols, cols,
                             mid.data() + r * width, width, 1, 1);
  ScalogramImage img;
  img.height = height;
  img.width = width;
  img.values.assign(static_cast<std::size_t>(height) * width, 0.0);
  for (int c = 0; c < width; ++c)
    detail::area_resize_axis(mid.data() + c, rows, img.values.data() + c,
                             height, static_cast<std::size_t>(width),
                             static_cast<std::size_t>(width));

  const auto [lo_it, hi_it] =
      std::minmax_element(img.values.begin(), img.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    std::fill(img.values.begin(), img.values.end(), 0.5);
  } else {
    for (double& v : img.values) v = (v - lo) / (hi - lo);
  }
  return img;
}

// 8-bit PGM export: file value = round(255 * v), no inversion.
inline void save_scalogram_pgm(const ScalogramImage& img,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.values)
    out.put(static_cast<char>(
        static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)))));
}

// Flat float32 grid: two little-endian uint32 (H, W), then H*W floats.
inline void save_scalogram_raw(const ScalogramImage& img,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  const std::uint32_t h = static_cast<std::uint32_t>(img.height);
  const std::uint32_t w = static_cast<std::uint32_t>(img.width);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  for (double v : img.values) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
}

}  // namespace afdetect
