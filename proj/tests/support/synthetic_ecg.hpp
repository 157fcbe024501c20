// Synthetic single-lead ECG generator for round-trip and end-to-end tests.
// Normal rhythm: regular RR intervals with P wave, QRS complex, T wave.
// AF rhythm: irregular RR intervals, no P wave, small fibrillatory baseline.
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "afdetect/cwt.hpp"
#include "afdetect/ecg.hpp"
#include "afdetect/rng.hpp"

namespace synth {

inline std::vector<double> sine(std::size_t n, double fs, double f0,
                                double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * std::numbers::pi * f0 *
                              static_cast<double>(i) / fs +
                          phase);
  return x;
}

inline double gauss_bump(double t, double center, double width) {
  const double d = (t - center) / width;
  return std::exp(-0.5 * d * d);
}

inline afdetect::EcgRecord synthetic_ecg(afdetect::Rng& rng, bool af,
                                         double fs = 300.0,
                                         double duration = 10.0) {
  const auto n = static_cast<std::size_t>(duration * fs);
  std::vector<double> x(n, 0.0);

  // beat times
  std::vector<double> beats;
  double t = 0.3 + 0.2 * rng.uniform();
  while (t < duration) {
    beats.push_back(t);
    if (af) {
      t += 0.45 + 0.65 * rng.uniform();  // chaotic ventricular response
    } else {
      t += 0.80 + 0.04 * rng.normal();   // steady sinus rhythm
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double ti = static_cast<double>(i) / fs;
    double v = 0.0;
    for (double tb : beats) {
      if (std::fabs(ti - tb) > 0.5) continue;
      v += 1.0 * afdetect::mexican_hat((ti - tb) / 0.012);  // QRS
      v += 0.25 * gauss_bump(ti, tb + 0.25, 0.05);          // T wave
      if (!af) v += 0.15 * gauss_bump(ti, tb - 0.16, 0.025);  // P wave
    }
    x[i] = v;
  }
  if (af) {
    // fibrillatory baseline around 7 Hz with drifting phase
    double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i) {
      phase += 2.0 * std::numbers::pi * 7.0 / fs + 0.02 * rng.normal();
      x[i] += 0.08 * std::sin(phase);
    }
  }
  for (std::size_t i = 0; i < n; ++i) x[i] += 0.01 * rng.normal();

  afdetect::EcgRecord rec;
  rec.id = af ? "af" : "normal";
  rec.fs = fs;
  rec.label = af ? afdetect::Label::AF : afdetect::Label::Normal;
  rec.samples = std::move(x);
  return rec;
}

}  // namespace synth
