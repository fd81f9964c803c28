#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ulm/errors.hpp"

namespace ulm {

// Row-major 2-D raster. data[y*width + x].
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T(0)) : width(w), height(h) {
    if (w < 0 || h < 0) throw InvalidParameter("Image: negative dimensions");
    data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill);
  }

  T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Image<U> cast() const {
    Image<U> out(width, height);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Frame = Image<double>;

template <typename T>
T image_min(const Image<T>& f) {
  return *std::min_element(f.data.begin(), f.data.end());
}

template <typename T>
T image_max(const Image<T>& f) {
  return *std::max_element(f.data.begin(), f.data.end());
}

template <typename T>
double image_sum(const Image<T>& f) {
  double s = 0;
  for (T v : f.data) s += static_cast<double>(v);
  return s;
}

template <typename T>
double image_mean(const Image<T>& f) {
  if (f.empty()) throw DegenerateInput("image_mean: empty image");
  return image_sum(f) / static_cast<double>(f.size());
}

// Sum of squares.
template <typename T>
double image_energy(const Image<T>& f) {
  double s = 0;
  for (T v : f.data) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

template <typename T>
double image_dot(const Image<T>& a, const Image<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    s += static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
  return s;
}

template <typename T>
bool image_finite(const Image<T>& f) {
  for (T v : f.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// Bilinear lookup with zero outside the domain. Pixel centers at integer coords.
template <typename T>
double sample_bilinear(const Image<T>& f, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  auto px = [&](int xi, int yi) -> double {
    return f.in_bounds(xi, yi) ? static_cast<double>(f.at(xi, yi)) : 0.0;
  };
  return (1 - fx) * (1 - fy) * px(x0, y0) + fx * (1 - fy) * px(x0 + 1, y0) +
         (1 - fx) * fy * px(x0, y0 + 1) + fx * fy * px(x0 + 1, y0 + 1);
}

enum class SeqKind { BMode, Ceus };

inline std::string to_string(SeqKind k) { return k == SeqKind::BMode ? "bmode" : "ceus"; }

inline SeqKind seq_kind_from_string(const std::string& s) {
  if (s == "bmode") return SeqKind::BMode;
  if (s == "ceus") return SeqKind::Ceus;
  throw InvalidParameter("unknown sequence kind: " + s);
}

// Time-ordered stack of frames with physical metadata.
struct FrameSequence {
  std::vector<Frame> frames;
  double frame_rate_hz = 25.0;
  SeqKind kind = SeqKind::Ceus;
  double pixel_um = 125.0;

  int width() const { return frames.empty() ? 0 : frames.front().width; }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int n_frames() const { return static_cast<int>(frames.size()); }

  void validate() const {
    if (frame_rate_hz <= 0) throw InvalidParameter("FrameSequence: frame_rate_hz must be > 0");
    if (pixel_um <= 0) throw InvalidParameter("FrameSequence: pixel_um must be > 0");
    for (const Frame& f : frames) {
      if (!f.same_shape(frames.front()))
        throw InvalidParameter("FrameSequence: frames differ in dimensions");
      if (!image_finite(f)) throw InvalidParameter("FrameSequence: non-finite values");
    }
  }
};

}  // namespace ulm
