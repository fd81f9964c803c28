#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ulm/conv.hpp"
#include "ulm/image.hpp"
#include "ulm/psf.hpp"

namespace ulm {

// Optional display blur, max-normalize, power-law gamma, quantize to 16 bits.
inline Image<std::uint16_t> render_map(const Frame& acc, double gamma = 0.5,
                                       double blur_sigma_px = 0) {
  if (gamma <= 0) throw InvalidParameter("render_map: gamma must be > 0");
  if (image_min(acc) < 0) throw InvalidParameter("render_map: accumulator must be non-negative");
  Frame work = acc;
  if (blur_sigma_px > 0) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * blur_sigma_px)));
    work = correlate_same(acc, gaussian_kernel(blur_sigma_px, radius, 1.0, true));
  }
  Image<std::uint16_t> out(work.width, work.height);
  const double vmax = image_max(work);
  if (vmax <= 0) return out;  // all-zero map stays all-zero
  for (std::size_t i = 0; i < work.data.size(); ++i) {
    const double v = std::pow(std::clamp(work.data[i] / vmax, 0.0, 1.0), gamma);
    out.data[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  return out;
}

// Line segment in physical coordinates.
struct ProbeSegment {
  double x0_um = 0, y0_um = 0;
  double x1_um = 0, y1_um = 0;
};

struct ProfilePeak {
  double t_um = 0;  // position along the segment
  double value = 0;
};

struct ProbeResult {
  std::vector<double> t_um;      // sample positions along the segment
  std::vector<double> value;     // bilinear-sampled intensity
  std::vector<ProfilePeak> peaks;
  // for the two highest peaks: the minimum between them and the dip ratio
  double dip_value = 0;
  double dip_ratio = 0;  // 1 - dip/lower_peak, 0 when fewer than two peaks
};

// Bilinear intensity profile along a segment, averaged over an optional
// perpendicular band, plus peak/dip statistics.
template <typename T>
ProbeResult resolution_probe(const Image<T>& img, double pixel_um, const ProbeSegment& seg,
                             double step_um = 0, double band_halfwidth_um = 0) {
  const double len = std::hypot(seg.x1_um - seg.x0_um, seg.y1_um - seg.y0_um);
  if (!(len > 0)) throw DegenerateInput("resolution_probe: degenerate segment");
  if (pixel_um <= 0) throw InvalidParameter("resolution_probe: pixel_um must be > 0");
  if (step_um <= 0) step_um = 0.5 * pixel_um;

  const double ux = (seg.x1_um - seg.x0_um) / len;
  const double uy = (seg.y1_um - seg.y0_um) / len;
  const double px = -uy, py = ux;  // perpendicular
  const int n = static_cast<int>(std::floor(len / step_um)) + 1;
  const int band_n = band_halfwidth_um > 0
                         ? static_cast<int>(std::floor(band_halfwidth_um / step_um))
                         : 0;

  ProbeResult res;
  res.t_um.reserve(n);
  res.value.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double t = i * step_um;
    double acc = 0;
    int cnt = 0;
    for (int b = -band_n; b <= band_n; ++b) {
      const double x = seg.x0_um + t * ux + b * step_um * px;
      const double y = seg.y0_um + t * uy + b * step_um * py;
      // physical -> pixel-center coords
      acc += sample_bilinear(img, x / pixel_um - 0.5, y / pixel_um - 0.5);
      ++cnt;
    }
    res.t_um.push_back(t);
    res.value.push_back(acc / cnt);
  }

  for (int i = 1; i + 1 < n; ++i)
    if (res.value[i] > res.value[i - 1] && res.value[i] >= res.value[i + 1])
      res.peaks.push_back({res.t_um[i], res.value[i]});

  if (res.peaks.size() >= 2) {
    // two highest peaks
    int a = 0, b = 1;
    if (res.peaks[b].value > res.peaks[a].value) std::swap(a, b);
    for (int i = 2; i < static_cast<int>(res.peaks.size()); ++i) {
      if (res.peaks[i].value > res.peaks[a].value) {
        b = a;
        a = i;
      } else if (res.peaks[i].value > res.peaks[b].value) {
        b = i;
      }
    }
    const double ta = res.peaks[std::min(a, b)].t_um, tb = res.peaks[std::max(a, b)].t_um;
    double dip = res.peaks[a].value;
    for (int i = 0; i < n; ++i)
      if (res.t_um[i] > ta && res.t_um[i] < tb) dip = std::min(dip, res.value[i]);
    res.dip_value = dip;
    const double lower = std::min(res.peaks[a].value, res.peaks[b].value);
    res.dip_ratio = lower > 0 ? 1.0 - dip / lower : 0.0;
  }
  return res;
}

}  // namespace ulm
