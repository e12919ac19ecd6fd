#pragma once

// Plain-text artifacts: P2 PGM images with min/max sidecars, and dataset export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgd/synth_data.hpp"
#include "mgd/tensor.hpp"

namespace mgd {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 0..255
  double min = 0.0;                  // original value range
  double max = 0.0;
};

// Min-max normalizes to [0, 1] and quantizes to 0..255; a constant input maps
// to mid gray (128).
inline GrayImage normalize_to_gray(std::span<const double> values, std::size_t width,
                                   std::size_t height) {
  if (values.size() != width * height || values.empty()) {
    throw DimensionError("normalize_to_gray: value count does not match image size");
  }
  GrayImage img{width, height, {}, values[0], values[0]};
  for (double v : values) {
    img.min = std::min(img.min, v);
    img.max = std::max(img.max, v);
  }
  const double range = img.max - img.min;
  img.pixels.reserve(values.size());
  for (double v : values) {
    const double unit = range > 0.0 ? (v - img.min) / range : 0.5;
    img.pixels.push_back(static_cast<std::uint8_t>(std::lround(unit * 255.0)));
  }
  return img;
}

inline void write_pgm(std::ostream& os, const GrayImage& img) {
  os << "P2\n" << img.width << ' ' << img.height << "\n255\n";
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      if (x) os << ' ';
      os << static_cast<int>(img.pixels[y * img.width + x]);
    }
    os << '\n';
  }
}

// Writes <path> and a <path minus .pgm>.txt sidecar holding the original
// min/max values.
inline void save_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_pgm: cannot write " + path.string());
  write_pgm(os, img);
  auto sidecar = path;
  sidecar.replace_extension(".txt");
  std::ofstream meta(sidecar);
  meta << std::setprecision(17) << "min " << img.min << "\nmax " << img.max << '\n';
}

inline GrayImage read_pgm(std::istream& is) {
  std::string magic;
  GrayImage img;
  int maxval = 0;
  if (!(is >> magic >> img.width >> img.height >> maxval) || magic != "P2" || maxval != 255) {
    throw ValueError("read_pgm: not a plain 8-bit PGM");
  }
  img.pixels.resize(img.width * img.height);
  for (auto& p : img.pixels) {
    int v = 0;
    if (!(is >> v)) throw ValueError("read_pgm: truncated pixel data");
    p = static_cast<std::uint8_t>(v);
  }
  return img;
}

// Side-by-side panels separated by a one-pixel black gutter; every panel is
// normalized on its own.
inline GrayImage montage(const std::vector<GrayImage>& panels) {
  if (panels.empty()) throw ValueError("montage: no panels");
  const std::size_t h = panels.front().height;
  std::size_t w = 0;
  for (const auto& p : panels) {
    if (p.height != h) throw DimensionError("montage: panel heights differ");
    w += p.width;
  }
  w += panels.size() - 1;
  GrayImage out{w, h, std::vector<std::uint8_t>(w * h, 0), 0.0, 0.0};
  std::size_t x0 = 0;
  for (const auto& p : panels) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(p.pixels.begin() + static_cast<std::ptrdiff_t>(y * p.width), p.width,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(y * w + x0));
    }
    x0 += p.width + 1;
  }
  out.min = panels.front().min;
  out.max = panels.front().max;
  for (const auto& p : panels) {
    out.min = std::min(out.min, p.min);
    out.max = std::max(out.max, p.max);
  }
  return out;
}

// One PGM per sample plus labels.csv (file,label).
inline void export_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw std::runtime_error("export_dataset: cannot write " + dir.string());
  labels << "file,label\n";
  for (std::size_t s = 0; s < data.size(); ++s) {
    std::ostringstream name;
    name << "sample_" << std::setw(5) << std::setfill('0') << s << ".pgm";
    save_pgm(dir / name.str(),
             normalize_to_gray(data.images[s].values(), data.image_size, data.image_size));
    labels << name.str() << ',' << data.labels[s] << '\n';
  }
}

}  // namespace mgd
