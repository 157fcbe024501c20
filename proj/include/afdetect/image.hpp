#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "afdetect/errors.hpp"

namespace afdetect {

// Grayscale raster, intensities in [0,1]. Indexed (column m, row n); row 0
// is the top of the image. Intensity 1.0 is the signal trace (darkest ink),
// 0.0 is background.
struct PixelMatrix {
  int width = 0;   // M columns
  int height = 0;  // N rows
  std::vector<double> intensity;  // row-major, size width*height

  PixelMatrix() = default;
  PixelMatrix(int w, int h, double fill = 0.0)
      : width(w), height(h), intensity(static_cast<std::size_t>(w) * h, fill) {
    if (w < 1 || h < 1) throw DegenerateRange("PixelMatrix dims must be >= 1");
  }

  double& at(int m, int n) {
    return intensity[static_cast<std::size_t>(n) * width + m];
  }
  double at(int m, int n) const {
    return intensity[static_cast<std::size_t>(n) * width + m];
  }
};

// Binary PGM (P5) reader. File values v in [0,255] are mapped to intensity
// 1 - v/255 so that the darkest pixels carry intensity 1.0.
inline PixelMatrix load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedFile("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw MalformedFile(path + ": not a binary PGM (P5)");
  auto next_int = [&in, &path]() {
    // skip whitespace and '#' comment lines
    while (true) {
      int c = in.peek();
      if (c == '#') {
        std::string comment;
        std::getline(in, comment);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) throw MalformedFile(path + ": bad PGM header");
    return v;
  };
  const long w = next_int();
  const long h = next_int();
  const long maxval = next_int();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw MalformedFile(path + ": unsupported PGM dimensions/depth");
  in.get();  // single whitespace before payload
  PixelMatrix img(static_cast<int>(w), static_cast<int>(h));
  std::vector<unsigned char> row(static_cast<std::size_t>(w));
  for (long n = 0; n < h; ++n) {
    in.read(reinterpret_cast<char*>(row.data()), w);
    if (in.gcount() != w) throw MalformedFile(path + ": truncated PGM payload");
    for (long m = 0; m < w; ++m)
      img.at(static_cast<int>(m), static_cast<int>(n)) =
          1.0 - static_cast<double>(row[m]) / maxval;
  }
  return img;
}

// Inverse of load_pgm's mapping: intensity 1.0 writes as black (0).
inline void save_pgm(const PixelMatrix& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (int n = 0; n < img.height; ++n) {
    for (int m = 0; m < img.width; ++m) {
      const double v = std::clamp(img.at(m, n), 0.0, 1.0);
      const unsigned char byte =
          static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)));
      out.put(static_cast<char>(byte));
    }
  }
}

}  // namespace afdetect
