#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "afdetect/cwt.hpp"
#include "afdetect/rng.hpp"
#include "support/oracles.hpp"
#include "support/synthetic_ecg.hpp"

using namespace afdetect;

namespace {

WaveletConfig config_with_scales(std::vector<double> scales, double fs) {
  WaveletConfig cfg;
  cfg.scales = std::move(scales);
  cfg.fs = fs;
  return cfg;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace

TEST_CASE("mexican hat wavelet") {
  SECTION("peak value at the origin") {
    REQUIRE(mexican_hat(0.0) == Catch::Approx(0.867325).margin(1e-6));
  }
  SECTION("zeros at t = +-1") {
    REQUIRE(mexican_hat(1.0) == 0.0);
    REQUIRE(mexican_hat(-1.0) == 0.0);
  }
  SECTION("even symmetry") {
    for (double t : {0.3, 0.9, 2.0, 4.7}) {
      REQUIRE(mexican_hat(-t) == mexican_hat(t));
    }
  }
  SECTION("zero mean over the truncated support") {
    const double h = 1e-4;
    double acc = 0.0;
    for (double t = -8.0; t < 8.0; t += h)
      acc += mexican_hat(t + h / 2.0) * h;
    REQUIRE(acc == Catch::Approx(0.0).margin(1e-6));
  }
  SECTION("tail is negligible beyond the support radius") {
    REQUIRE(std::fabs(mexican_hat(8.0)) < 1e-12);
  }
}

TEST_CASE("scale to frequency conversion") {
  const WaveletConfig c300 = config_with_scales({1.0}, 300.0);
  REQUIRE(scale_to_frequency(15.0, c300) == Catch::Approx(5.0));
  const WaveletConfig c60 = config_with_scales({1.0}, 60.0);
  REQUIRE(scale_to_frequency(1.0, c60) == Catch::Approx(15.0));
  SECTION("doubling the scale halves the frequency") {
    for (double a : {0.5, 3.0, 17.0}) {
      REQUIRE(scale_to_frequency(2.0 * a, c300) ==
              Catch::Approx(scale_to_frequency(a, c300) / 2.0));
    }
  }
  SECTION("non-positive scale is rejected") {
    REQUIRE_THROWS_AS(scale_to_frequency(0.0, c300), NonPositiveScale);
    REQUIRE_THROWS_AS(scale_to_frequency(-2.0, c300), NonPositiveScale);
  }
}

TEST_CASE("logarithmic scale grid spans the requested band") {
  const WaveletConfig cfg = make_wavelet_config(300.0, 64, 1.0, 40.0);
  REQUIRE(cfg.scales.size() == 64);
  for (std::size_t i = 1; i < cfg.scales.size(); ++i)
    REQUIRE(cfg.scales[i] > cfg.scales[i - 1]);
  REQUIRE(scale_to_frequency(cfg.scales.front(), cfg) == Catch::Approx(40.0));
  REQUIRE(scale_to_frequency(cfg.scales.back(), cfg) == Catch::Approx(1.0));
  SECTION("log spacing: ratio between adjacent scales is constant") {
    const double r0 = cfg.scales[1] / cfg.scales[0];
    for (std::size_t i = 2; i < cfg.scales.size(); ++i)
      REQUIRE(cfg.scales[i] / cfg.scales[i - 1] == Catch::Approx(r0));
  }
  SECTION("degenerate grid requests are rejected") {
    REQUIRE_THROWS_AS(make_wavelet_config(300.0, 1, 1.0, 40.0), ConfigError);
    REQUIRE_THROWS_AS(make_wavelet_config(300.0, 64, 0.0, 40.0), ConfigError);
    REQUIRE_THROWS_AS(make_wavelet_config(300.0, 64, 40.0, 40.0), ConfigError);
  }
}

TEST_CASE("cwt of the zero signal is zero") {
  const WaveletConfig cfg = make_wavelet_config(300.0, 8, 5.0, 40.0);
  const Scalogram s = cwt_transform(std::vector<double>(128, 0.0), cfg);
  REQUIRE(s.n_scales() == 8);
  REQUIRE(s.n_samples() == 128);
  for (double v : s.coefficients) REQUIRE(v == 0.0);
}

TEST_CASE("cwt of a unit impulse reproduces the scaled wavelet") {
  const std::size_t n = 200, k = 90;
  std::vector<double> x(n, 0.0);
  x[k] = 1.0;
  const WaveletConfig cfg = config_with_scales({2.0, 5.0, 9.5}, 300.0);
  const Scalogram s = cwt_transform(x, cfg);
  for (std::size_t row = 0; row < cfg.scales.size(); ++row) {
    const double a = cfg.scales[row];
    for (std::size_t b = 0; b < n; ++b) {
      const double want =
          mexican_hat((static_cast<double>(k) - static_cast<double>(b)) / a) /
          std::sqrt(a);
      REQUIRE(s.at(row, b) == Catch::Approx(want).margin(1e-10));
    }
  }
}

TEST_CASE("cwt matches the direct Riemann-sum oracle") {
  Rng rng(21);
  std::vector<double> x(256);
  for (double& v : x) v = rng.normal();
  const WaveletConfig cfg = make_wavelet_config(300.0, 16, 5.0, 40.0);
  const Scalogram s = cwt_transform(x, cfg);
  const std::vector<double> want = oracle::direct_cwt(x, cfg.scales);
  const double scale_ref = max_abs(want);
  for (std::size_t i = 0; i < want.size(); ++i)
    REQUIRE(s.coefficients[i] ==
            Catch::Approx(want[i]).margin(1e-10 * scale_ref));
}

TEST_CASE("cwt is homogeneous in the input amplitude") {
  Rng rng(33);
  std::vector<double> x(180), scaled(180);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    scaled[i] = 3.25 * x[i];
  }
  const WaveletConfig cfg = make_wavelet_config(300.0, 8, 2.0, 40.0);
  const Scalogram a = cwt_transform(x, cfg);
  const Scalogram b = cwt_transform(scaled, cfg);
  const double ref = max_abs(b.coefficients);
  for (std::size_t i = 0; i < a.coefficients.size(); ++i)
    REQUIRE(b.coefficients[i] ==
            Catch::Approx(3.25 * a.coefficients[i]).margin(1e-12 * ref));
}

TEST_CASE("time-shift covariance away from the edges") {
  Rng rng(44);
  const std::size_t n = 512, k = 37;
  std::vector<double> x(n), shifted(n);
  for (double& v : x) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) shifted[(i + k) % n] = x[i];

  const WaveletConfig cfg = config_with_scales({1.5, 3.0, 6.0}, 300.0);
  const Scalogram sa = cwt_transform(x, cfg);
  const Scalogram sb = cwt_transform(shifted, cfg);

  const auto band = static_cast<std::size_t>(
      std::ceil(8.0 * cfg.scales.back())) + k;  // edge + wrap influence
  for (std::size_t row = 0; row < cfg.scales.size(); ++row)
    for (std::size_t b = band; b + band < n; ++b)
      REQUIRE(sb.at(row, (b + k) % n) ==
              Catch::Approx(sa.at(row, b)).margin(1e-9));
}

TEST_CASE("frequency localization of a pure sine") {
  const WaveletConfig cfg = make_wavelet_config(300.0, 64, 1.0, 40.0);
  for (double f0 : {4.0, 10.0, 25.0}) {
    const std::vector<double> x = synth::sine(1500, 300.0, f0);
    const Scalogram s = cwt_transform(x, cfg);
    std::size_t best = 0;
    double best_mean = -1.0;
    for (std::size_t row = 0; row < s.n_scales(); ++row) {
      double acc = 0.0;
      for (std::size_t b = 0; b < s.n_samples(); ++b)
        acc += std::fabs(s.at(row, b));
      if (acc > best_mean) {
        best_mean = acc;
        best = row;
      }
    }
    const double f_star = scale_to_frequency(cfg.scales[best], cfg);
    // one grid step in log-frequency
    const double step = cfg.scales[1] / cfg.scales[0];
    REQUIRE(f_star / f0 < step * 1.0001);
    REQUIRE(f0 / f_star < step * 1.0001);
  }
}

TEST_CASE("scalogram image resize matches the block-mean oracle") {
  Rng rng(66);
  Scalogram s;
  s.fs = 300.0;
  s.scales.resize(64);
  for (std::size_t i = 0; i < 64; ++i) s.scales[i] = 1.0 + i;
  s.coefficients.resize(64 * 300);
  for (double& v : s.coefficients) v = rng.normal();

  const ScalogramImage img = scalogram_to_image(s, 16, 32);
  std::vector<double> grid = s.coefficients;
  for (double& v : grid) v = std::fabs(v);
  std::vector<double> want = oracle::block_mean_resize(grid, 64, 300, 16, 32);
  const auto [lo_it, hi_it] = std::minmax_element(want.begin(), want.end());
  const double lo = *lo_it, hi = *hi_it;
  for (double& v : want) v = (v - lo) / (hi - lo);

  REQUIRE(img.values.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i)
    REQUIRE(img.values[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("scalogram image normalization") {
  Scalogram s;
  s.fs = 300.0;
  s.scales = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  SECTION("constant grid maps to all 0.5") {
    s.coefficients.assign(8 * 64, 2.75);
    const ScalogramImage img = scalogram_to_image(s, 8, 8);
    for (double v : img.values) REQUIRE(v == 0.5);
  }
  SECTION("non-constant grid spans exactly [0,1]") {
    Rng rng(9);
    s.coefficients.resize(8 * 64);
    for (double& v : s.coefficients) v = rng.normal();
    const ScalogramImage img = scalogram_to_image(s, 8, 16);
    const auto [lo, hi] =
        std::minmax_element(img.values.begin(), img.values.end());
    REQUIRE(*lo == 0.0);
    REQUIRE(*hi == 1.0);
  }
  SECTION("signed mode keeps negative structure that absolute mode folds") {
    s.coefficients.assign(8 * 64, 0.0);
    for (std::size_t i = 0; i < s.coefficients.size(); ++i)
      s.coefficients[i] = (i % 2 == 0) ? 1.0 : -1.0;
    const ScalogramImage abs_img =
        scalogram_to_image(s, 8, 64, ScalogramMode::Absolute);
    const ScalogramImage sgn_img =
        scalogram_to_image(s, 8, 64, ScalogramMode::Signed);
    for (double v : abs_img.values) REQUIRE(v == 0.5);  // |T| constant
    bool varies = false;
    for (double v : sgn_img.values) varies = varies || v != sgn_img.values[0];
    REQUIRE(varies);
  }
  SECTION("undersized targets are rejected") {
    s.coefficients.assign(8 * 64, 1.0);
    REQUIRE_THROWS_AS(scalogram_to_image(s, 4, 64), ConfigError);
    REQUIRE_THROWS_AS(scalogram_to_image(s, 64, 7), ConfigError);
  }
}

TEST_CASE("scalogram export formats") {
  Rng rng(77);
  Scalogram s;
  s.fs = 300.0;
  s.scales = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  s.coefficients.resize(8 * 64);
  for (double& v : s.coefficients) v = rng.normal();
  const ScalogramImage img = scalogram_to_image(s, 8, 8);

  const auto dir = std::filesystem::temp_directory_path();
  SECTION("PGM carries round(255 v) without inversion") {
    const auto p = (dir / "cwt_img.pgm").string();
    save_scalogram_pgm(img, p);
    std::ifstream in(p, std::ios::binary);
    std::string magic;
    int w, h, maxval;
    in >> magic >> w >> h >> maxval;
    REQUIRE(magic == "P5");
    REQUIRE(w == 8);
    REQUIRE(h == 8);
    REQUIRE(maxval == 255);
    in.get();
    for (double v : img.values) {
      const int byte = in.get();
      REQUIRE(byte == static_cast<int>(std::lround(255.0 * v)));
    }
  }
  SECTION("raw float grid round trips exactly at float32 precision") {
    const auto p = (dir / "cwt_img.raw").string();
    save_scalogram_raw(img, p);
    std::ifstream in(p, std::ios::binary);
    std::uint32_t h = 0, w = 0;
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    REQUIRE(h == 8);
    REQUIRE(w == 8);
    for (double v : img.values) {
      float f = 0.0f;
      in.read(reinterpret_cast<char*>(&f), 4);
      REQUIRE(f == static_cast<float>(v));
    }
  }
}
