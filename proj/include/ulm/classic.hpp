#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "ulm/grid.hpp"
#include "ulm/image.hpp"
#include "ulm/localization.hpp"

namespace ulm {

struct ClassicConfig {
  double detect_threshold_rel = 0.3;  // fraction of frame max
  int min_separation_px = 2;          // LR pixels between accepted maxima
  int window_radius_px = 2;           // centroid window half-size (~PSF FWHM)

  void validate() const {
    if (detect_threshold_rel <= 0 || detect_threshold_rel > 1)
      throw InvalidParameter("ClassicConfig: threshold must be in (0,1]");
    if (min_separation_px < 1 || window_radius_px < 1)
      throw InvalidParameter("ClassicConfig: radii must be >= 1");
  }
};

// Pixels strictly greater than all 8 neighbors and above the relative
// threshold, greedily pruned highest-first so accepted maxima stay at least
// min_separation apart. The threshold is taken relative to the frame's
// intensity range, which makes the detected set invariant under positive
// affine rescaling (and equal to rel*max for the usual zero-floored frames).
inline std::vector<std::pair<int, int>> detect_maxima(const Frame& f, const ClassicConfig& cfg) {
  cfg.validate();
  if (f.empty()) throw InvalidParameter("detect_maxima: empty frame");
  const double fmax = image_max(f);
  const double fmin = image_min(f);
  const double thr = fmin + cfg.detect_threshold_rel * (fmax - fmin);

  struct Peak {
    int x, y;
    double v;
  };
  std::vector<Peak> peaks;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const double v = f.at(x, y);
      if (!(v >= thr)) continue;
      bool strict = true;
      for (int dy = -1; dy <= 1 && strict; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx, ny = y + dy;
          if (f.in_bounds(nx, ny) && f.at(nx, ny) >= v) {
            strict = false;
            break;
          }
        }
      if (strict) peaks.push_back({x, y, v});
    }

  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.v > b.v; });
  std::vector<std::pair<int, int>> accepted;
  const double min_sep2 =
      static_cast<double>(cfg.min_separation_px) * static_cast<double>(cfg.min_separation_px);
  for (const Peak& p : peaks) {
    bool ok = true;
    for (const auto& [ax, ay] : accepted) {
      const double dx = p.x - ax, dy = p.y - ay;
      if (dx * dx + dy * dy < min_sep2) {
        ok = false;
        break;
      }
    }
    if (ok) accepted.emplace_back(p.x, p.y);
  }
  return accepted;
}

// Intensity-weighted center of mass over a (2R+1)^2 window, weights shifted by
// the window minimum; degenerate zero weight falls back to the peak pixel.
inline Localization centroid_localize(const Frame& f, std::pair<int, int> peak,
                                      const ClassicConfig& cfg, const GridSpec& grid) {
  cfg.validate();
  const int R = cfg.window_radius_px;
  const int x0 = std::max(0, peak.first - R), x1 = std::min(f.width - 1, peak.first + R);
  const int y0 = std::max(0, peak.second - R), y1 = std::min(f.height - 1, peak.second + R);

  double wmin = f.at(x0, y0);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) wmin = std::min(wmin, f.at(x, y));

  double wsum = 0, xsum = 0, ysum = 0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double w = f.at(x, y) - wmin;
      wsum += w;
      xsum += w * x;
      ysum += w * y;
    }
  double cx = peak.first, cy = peak.second;
  if (wsum > 0) {
    cx = xsum / wsum;
    cy = ysum / wsum;
  }
  return {0, grid.lr_px_to_um(cx), grid.lr_px_to_um(cy), f.at(peak.first, peak.second)};
}

// Per-frame classical pipeline: maxima then centroids.
inline LocalizationSet classic_localize_frame(const Frame& f, int frame_index,
                                              const ClassicConfig& cfg, const GridSpec& grid) {
  LocalizationSet out;
  for (const auto& peak : detect_maxima(f, cfg)) {
    Localization l = centroid_localize(f, peak, cfg, grid);
    l.frame_index = frame_index;
    out.push_back(l);
  }
  return out;
}

enum class AccumulateMode { Count, IntensitySum };

struct AccumulateResult {
  Frame image;          // HR grid
  int dropped_oob = 0;  // localizations outside the grid extent
};

// Sum localizations per HR pixel (count, or intensity-weighted).
inline AccumulateResult accumulate(const LocalizationSet& locs, const GridSpec& grid,
                                   AccumulateMode mode = AccumulateMode::Count) {
  grid.validate();
  AccumulateResult res;
  res.image = Frame(grid.hr_width(), grid.hr_height());
  const double hr_px = grid.hr_pixel_um();
  for (const Localization& l : locs) {
    const int qx = static_cast<int>(std::floor(l.x_um / hr_px));
    const int qy = static_cast<int>(std::floor(l.y_um / hr_px));
    if (!res.image.in_bounds(qx, qy)) {
      ++res.dropped_oob;
      continue;
    }
    res.image.at(qx, qy) += mode == AccumulateMode::Count ? 1.0 : l.intensity;
  }
  return res;
}

}  // namespace ulm
