#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "afdetect/ecg.hpp"
#include "afdetect/errors.hpp"
#include "afdetect/image.hpp"

namespace afdetect {

// Extracted set S of signal pixels, column-reduced to at most one retained
// row per column.
struct TracePointSet {
  // retained row n per column m; empty optional = column has no signal pixel
  std::vector<std::optional<int>> row_per_column;
  int width = 0;   // M
  int height = 0;  // N

  std::size_t present_count() const {
    std::size_t c = 0;
    for (const auto& r : row_per_column)
      if (r) ++c;
    return c;
  }
};

// Grid removal: pixel survives (value 1) iff its intensity reaches the trace
// threshold; grid lines and background (intensity < threshold) become 0.
inline PixelMatrix binarize_and_remove_grid(const PixelMatrix& img,
                                            double trace_threshold = 0.99) {
  if (trace_threshold <= 0.0 || trace_threshold > 1.0)
    throw ConfigError("trace threshold must be in (0,1]");
  PixelMatrix out(img.width, img.height);
  for (std::size_t i = 0; i < img.intensity.size(); ++i)
    out.intensity[i] = img.intensity[i] >= trace_threshold ? 1.0 : 0.0;
  return out;
}

// Collect S = {(m,n) | value = 1} and reduce each column to its median row,
// which shrugs off single-pixel speckle on steep strokes.
inline TracePointSet extract_trace(const PixelMatrix& bin) {
  TracePointSet trace;
  trace.width = bin.width;
  trace.height = bin.height;
  trace.row_per_column.assign(bin.width, std::nullopt);

  bool any = false;
  std::vector<int> rows;
  for (int m = 0; m < bin.width; ++m) {
    rows.clear();
    for (int n = 0; n < bin.height; ++n)
      if (bin.at(m, n) == 1.0) rows.push_back(n);
    if (!rows.empty()) {
      any = true;
      trace.row_per_column[m] = rows[rows.size() / 2];  // rows are sorted
    }
  }
  if (!any) throw NoSignalPixels("no signal pixels in binary matrix");
  return trace;
}

// Reconstruct the numeric series. Image rows grow downward, so amplitude is
// (N-1-n). Gaps are linearly interpolated between present neighbors;
// leading/trailing gaps take the nearest present value.
inline EcgRecord trace_to_signal(const TracePointSet& trace, double fs) {
  if (trace.present_count() == 0)
    throw NoSignalPixels("empty trace");
  const int M = trace.width;
  std::vector<double> amp(M, 0.0);
  std::vector<bool> present(M, false);
  for (int m = 0; m < M; ++m) {
    if (trace.row_per_column[m]) {
      amp[m] = static_cast<double>(trace.height - 1 - *trace.row_per_column[m]);
      present[m] = true;
    }
  }
  int first = 0;
  while (!present[first]) ++first;
  int last = M - 1;
  while (!present[last]) --last;
  for (int m = 0; m < first; ++m) amp[m] = amp[first];
  for (int m = last + 1; m < M; ++m) amp[m] = amp[last];
  int prev = first;
  for (int m = first + 1; m <= last; ++m) {
    if (!present[m]) continue;
    for (int k = prev + 1; k < m; ++k) {
      const double t = static_cast<double>(k - prev) / (m - prev);
      amp[k] = amp[prev] + t * (amp[m] - amp[prev]);
    }
    prev = m;
  }

  EcgRecord rec;
  rec.id = "digitized";
  rec.fs = fs;
  rec.samples = std::move(amp);
  return rec;
}

struct RenderOptions {
  double grid_intensity = 0.4;  // must stay < 1 so binarization removes it
  int grid_step = 16;           // pixels between grid lines; 0 disables
};

// Test-oracle inverse of the digitizer: draws the signal at intensity 1.0
// with vertical continuity between adjacent columns, over an optional grid.
inline PixelMatrix render_signal(const EcgRecord& rec, int width, int height,
                                 const RenderOptions& opt = {}) {
  if (width < 2 || height < 2)
    throw DegenerateRange("render target must be at least 2x2");
  if (opt.grid_intensity >= 1.0)
    throw ConfigError("grid intensity must be < 1");
  PixelMatrix img(width, height);

  if (opt.grid_step > 0) {
    for (int m = 0; m < width; m += opt.grid_step)
      for (int n = 0; n < height; ++n) img.at(m, n) = opt.grid_intensity;
    for (int n = 0; n < height; n += opt.grid_step)
      for (int m = 0; m < width; ++m) img.at(m, n) = opt.grid_intensity;
  }

  const auto& x = rec.samples;
  double lo = *std::min_element(x.begin(), x.end());
  double hi = *std::max_element(x.begin(), x.end());
  auto to_row = [&](double v) {
    if (hi == lo) return height / 2;  // constant signal centered
    const double unit = (v - lo) / (hi - lo);
    return static_cast<int>(std::lround((1.0 - unit) * (height - 1)));
  };
  // resample to one amplitude per column
  auto sample_at = [&](int m) {
    if (x.size() == 1) return x[0];
    const double pos =
        static_cast<double>(m) * (x.size() - 1) / (width - 1);
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= x.size()) return x.back();
    const double t = pos - static_cast<double>(i);
    return x[i] + t * (x[i + 1] - x[i]);
  };

  int prev_row = to_row(sample_at(0));
  for (int m = 0; m < width; ++m) {
    const int row = to_row(sample_at(m));
    const int a = std::min(prev_row, row);
    const int b = std::max(prev_row, row);
    for (int n = a; n <= b; ++n) img.at(m, n) = 1.0;
    prev_row = row;
  }
  return img;
}

// Full image-to-record pipeline used by the digitize command.
inline EcgRecord digitize_image(const PixelMatrix& img, double fs,
                                double trace_threshold = 0.99) {
  const PixelMatrix bin = binarize_and_remove_grid(img, trace_threshold);
  const TracePointSet trace = extract_trace(bin);
  return trace_to_signal(trace, fs);
}

}  // namespace afdetect
