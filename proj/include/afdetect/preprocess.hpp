#pragma once

#include <cmath>
#include <vector>

#include "afdetect/ecg.hpp"
#include "afdetect/errors.hpp"
#include "afdetect/filters.hpp"

namespace afdetect {

// Fixed-length, z-normalized network input.
struct StandardizedSignal {
  std::vector<double> samples;  // length exactly L
  double fs = 0.0;
  double mean_used = 0.0;
  double std_used = 0.0;  // 0 marks a constant input (output is all zeros)
};

inline std::vector<double> resample_linear(const std::vector<double>& x,
                                           double fs_in, double fs_out) {
  if (fs_in == fs_out) return x;
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.size()) * fs_out / fs_in));
  std::vector<double> y(std::max<std::size_t>(n_out, 1));
  const double step = fs_in / fs_out;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto k = static_cast<std::size_t>(pos);
    if (k + 1 >= x.size()) {
      y[i] = x.back();
    } else {
      const double t = pos - static_cast<double>(k);
      y[i] = x[k] + t * (x[k + 1] - x[k]);
    }
  }
  return y;
}

// Resample to target_fs, center-crop or symmetrically zero-pad to length L,
// then z-normalize per record (constant signals map to all zeros).
inline StandardizedSignal standardize(const EcgRecord& rec,
                                      std::size_t target_length,
                                      double target_fs) {
  if (rec.samples.empty()) throw EmptySignal("cannot standardize empty record");

  std::vector<double> x = resample_linear(rec.samples, rec.fs, target_fs);

  std::vector<double> fixed(target_length, 0.0);
  if (x.size() >= target_length) {
    const std::size_t start = (x.size() - target_length) / 2;
    std::copy(x.begin() + start, x.begin() + start + target_length,
              fixed.begin());
  } else {
    const std::size_t left = (target_length - x.size()) / 2;
    std::copy(x.begin(), x.end(), fixed.begin() + left);
  }

  double mean = 0.0;
  for (double v : fixed) mean += v;
  mean /= static_cast<double>(fixed.size());
  double var = 0.0;
  for (double v : fixed) var += (v - mean) * (v - mean);
  var /= static_cast<double>(fixed.size());
  const double sd = std::sqrt(var);

  StandardizedSignal out;
  out.fs = target_fs;
  out.mean_used = mean;
  out.std_used = sd;
  out.samples.resize(target_length);
  if (sd > 0.0) {
    for (std::size_t i = 0; i < fixed.size(); ++i)
      out.samples[i] = (fixed[i] - mean) / sd;
  }  // constant input: leave all zeros
  return out;
}

}  // namespace afdetect
