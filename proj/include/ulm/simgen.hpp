#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "ulm/conv.hpp"
#include "ulm/grid.hpp"
#include "ulm/image.hpp"
#include "ulm/localization.hpp"
#include "ulm/preprocess.hpp"
#include "ulm/psf.hpp"
#include "ulm/rng.hpp"

namespace ulm {

// User-defined ranges the on-line generator draws from. Defaults span dense
// overlapping-source scenes on a 32x32 LR patch at realistic SNR.
struct SampleDistributions {
  int n_min = 0, n_max = 40;                  // sources per frame
  double a_min = 0.3, a_max = 1.0;            // source intensity, subset of (0,1]
  double sigma_min = 0.7, sigma_max = 1.5;    // PSF sigma in LR px
  double noise_min = 0.0, noise_max = 0.05;   // additive white-noise std
  double bg_min = 0.0, bg_max = 0.1;          // constant background level

  void validate() const {
    if (n_min < 0 || n_max < n_min) throw InvalidParameter("SampleDistributions: bad n range");
    if (!(a_min > 0) || a_max < a_min || a_max > 1)
      throw InvalidParameter("SampleDistributions: intensity range must be in (0,1]");
    if (!(sigma_min > 0) || sigma_max < sigma_min)
      throw InvalidParameter("SampleDistributions: bad sigma range");
    if (noise_min < 0 || noise_max < noise_min)
      throw InvalidParameter("SampleDistributions: bad noise range");
    if (bg_min < 0 || bg_max < bg_min)
      throw InvalidParameter("SampleDistributions: bad background range");
  }
};

// One supervised pair: diffraction-limited LR input, sparse HR target, and the
// continuous-position ground truth behind both.
struct TrainingSample {
  Frame input_lr;
  Frame target_hr;
  LocalizationSet truth;
  double sigma_lr = 1.0;  // PSF sigma drawn for this sample
};

// Sum of analytic Gaussians evaluated at LR pixel centers. Positions are in
// continuous LR pixel coordinates. This is the exact forward model the
// dictionary operator discretizes.
inline void render_sources_lr(Frame& img, const std::vector<std::array<double, 3>>& sources,
                              double sigma_lr) {
  const double inv2s2 = 1.0 / (2.0 * sigma_lr * sigma_lr);
  const double reach = 5.0 * sigma_lr;
  for (const auto& s : sources) {
    const double sx = s[0], sy = s[1], amp = s[2];
    const int x0 = std::max(0, static_cast<int>(std::floor(sx - reach)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(sx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(sy - reach)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(sy + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - sx;
        const double dy = y - sy;
        img.at(x, y) += amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
  }
}

// Draw order is fixed: sigma, background, noise std, n, then per source
// (x, y, intensity) with rejection on HR-pixel collisions, then per-pixel noise
// row-major. Identical rng state always reproduces the identical sample.
inline TrainingSample gen_sample(const SampleDistributions& dist, const GridSpec& grid, Rng& rng) {
  dist.validate();
  grid.validate();
  if (dist.n_max > grid.hr_width() * grid.hr_height())
    throw InvalidParameter("gen_sample: n_max exceeds HR pixel count");

  TrainingSample s;
  s.sigma_lr = rng.uniform(dist.sigma_min, dist.sigma_max);
  const double bg = rng.uniform(dist.bg_min, dist.bg_max);
  const double noise_std = rng.uniform(dist.noise_min, dist.noise_max);
  const int n = rng.uniform_int(dist.n_min, dist.n_max);

  const double margin = 3.0 * s.sigma_lr;
  const double xlo = -0.5 + margin, xhi = grid.lr_width - 0.5 - margin;
  const double ylo = -0.5 + margin, yhi = grid.lr_height - 0.5 - margin;
  if (n > 0 && (xhi <= xlo || yhi <= ylo))
    throw InvalidParameter("gen_sample: margin leaves no interior for sources");

  s.target_hr = Frame(grid.hr_width(), grid.hr_height());
  std::vector<std::array<double, 3>> sources;
  sources.reserve(n);
  for (int i = 0; i < n; ++i) {
    int qx = 0, qy = 0;
    double x = 0, y = 0;
    int attempts = 0;
    // reject positions whose HR pixel is already taken so nnz(target) == |truth|
    do {
      if (++attempts > 10000) throw InvalidParameter("gen_sample: cannot place sources");
      x = rng.uniform(xlo, xhi);
      y = rng.uniform(ylo, yhi);
      qx = static_cast<int>(std::lround(grid.lr_to_hr(x)));
      qy = static_cast<int>(std::lround(grid.lr_to_hr(y)));
      qx = std::clamp(qx, 0, grid.hr_width() - 1);
      qy = std::clamp(qy, 0, grid.hr_height() - 1);
    } while (s.target_hr.at(qx, qy) != 0.0);
    const double amp = rng.uniform(dist.a_min, dist.a_max);
    s.target_hr.at(qx, qy) = amp;
    sources.push_back({x, y, amp});
    s.truth.push_back({0, grid.lr_px_to_um(x), grid.lr_px_to_um(y), amp});
  }

  s.input_lr = Frame(grid.lr_width, grid.lr_height, bg);
  render_sources_lr(s.input_lr, sources, s.sigma_lr);
  if (noise_std > 0)
    for (double& v : s.input_lr.data) v += noise_std * rng.normal();
  return s;
}

// ---------------------------------------------------------------------------
// Vessel phantom: a handful of tube-like vessels carrying point scatterers,
// over a static textured tissue layer with optional bulk in-plane motion.
// ---------------------------------------------------------------------------

struct Vessel {
  std::vector<std::array<double, 2>> polyline_um;  // centerline, >= 2 points
  double radius_um = 10.0;
  double flow_speed_um_per_frame = 2.0;
  double bubble_rate = 1.0;  // expected new bubbles per frame

  double length_um() const {
    double len = 0;
    for (std::size_t i = 1; i < polyline_um.size(); ++i)
      len += std::hypot(polyline_um[i][0] - polyline_um[i - 1][0],
                        polyline_um[i][1] - polyline_um[i - 1][1]);
    return len;
  }

  // Point and unit tangent at arc length s.
  void point_at(double s, double& x, double& y, double& tx, double& ty) const {
    double acc = 0;
    for (std::size_t i = 1; i < polyline_um.size(); ++i) {
      const double ax = polyline_um[i - 1][0], ay = polyline_um[i - 1][1];
      const double bx = polyline_um[i][0], by = polyline_um[i][1];
      const double seg = std::hypot(bx - ax, by - ay);
      if (s <= acc + seg || i + 1 == polyline_um.size()) {
        const double f = seg > 0 ? (s - acc) / seg : 0.0;
        x = ax + f * (bx - ax);
        y = ay + f * (by - ay);
        tx = seg > 0 ? (bx - ax) / seg : 1.0;
        ty = seg > 0 ? (by - ay) / seg : 0.0;
        return;
      }
      acc += seg;
    }
    x = polyline_um.front()[0];
    y = polyline_um.front()[1];
    tx = 1;
    ty = 0;
  }
};

enum class MotionMode { None, Drift, Sinusoidal, List };

struct MotionSpec {
  MotionMode mode = MotionMode::None;
  double dx_um_per_frame = 0, dy_um_per_frame = 0;           // Drift
  double amp_x_um = 0, amp_y_um = 0, period_frames = 100;    // Sinusoidal
  std::vector<std::array<double, 2>> list;                   // List

  // Absolute translation of frame t relative to frame 0.
  std::array<double, 2> at(int t) const {
    switch (mode) {
      case MotionMode::None:
        return {0, 0};
      case MotionMode::Drift:
        return {dx_um_per_frame * t, dy_um_per_frame * t};
      case MotionMode::Sinusoidal: {
        const double ph = 6.283185307179586 * t / period_frames;
        return {amp_x_um * std::sin(ph), amp_y_um * std::sin(ph)};
      }
      case MotionMode::List:
        if (list.empty()) return {0, 0};
        return list[std::min<std::size_t>(t, list.size() - 1)];
    }
    return {0, 0};
  }
};

struct VesselPhantom {
  std::vector<Vessel> vessels;
  Frame tissue_background;  // LR grid; empty -> zero tissue
  MotionSpec motion;
  double ceus_tissue_residual = 0.00;  // fraction of tissue leaking into CEUS
  double ceus_noise_std = 0.0;
  double bmode_noise_std = 0.0;
  double bubble_amp_min = 0.5, bubble_amp_max = 1.0;

  void validate(const GridSpec& grid) const {
    for (const Vessel& v : vessels) {
      if (v.radius_um <= 0) throw InvalidParameter("VesselPhantom: radius_um must be > 0");
      if (v.polyline_um.size() < 2) throw InvalidParameter("VesselPhantom: polyline needs >= 2 points");
      for (const auto& p : v.polyline_um)
        if (p[0] < 0 || p[0] > grid.width_um() || p[1] < 0 || p[1] > grid.height_um())
          throw InvalidParameter("VesselPhantom: polyline outside grid extent");
    }
    if (ceus_tissue_residual < 0 || ceus_noise_std < 0 || bmode_noise_std < 0)
      throw InvalidParameter("VesselPhantom: negative level");
  }
};

// Smoothed random field for use as tissue background.
inline Frame make_tissue(const GridSpec& grid, Rng& rng, double smooth_sigma_px = 2.0,
                         double level = 1.0) {
  Frame noise(grid.lr_width, grid.lr_height);
  for (double& v : noise.data) v = rng.uniform();
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * smooth_sigma_px)));
  const Image<double> k = gaussian_kernel(smooth_sigma_px, radius, 1.0, true);
  Frame out = correlate_same(noise, k);
  const double lo = image_min(out), hi = image_max(out);
  for (double& v : out.data) v = hi > lo ? level * (v - lo) / (hi - lo) : 0.0;
  return out;
}

struct PhantomResult {
  FrameSequence ceus;
  FrameSequence bmode;
  LocalizationSet truth;  // motion-free reference frame (frame 0 coordinates)
};

// Bubbles spawn Poisson(bubble_rate) per vessel per frame at the vessel inlet
// with a uniform perpendicular offset inside the lumen, advect along the
// centerline at flow speed, and despawn at the outlet. Deterministic given rng.
inline PhantomResult gen_phantom_sequence(const VesselPhantom& ph, const GridSpec& grid,
                                          int n_frames, const PsfModel& psf, Rng& rng) {
  grid.validate();
  psf.validate();
  ph.validate(grid);
  if (n_frames < 1) throw InvalidParameter("gen_phantom_sequence: n_frames must be >= 1");

  PhantomResult out;
  out.ceus.kind = SeqKind::Ceus;
  out.bmode.kind = SeqKind::BMode;
  out.ceus.pixel_um = out.bmode.pixel_um = grid.lr_pixel_um;

  const bool has_tissue = !ph.tissue_background.empty();
  Frame zero_tissue(grid.lr_width, grid.lr_height);
  const Frame& tissue = has_tissue ? ph.tissue_background : zero_tissue;

  struct Bubble {
    int vessel;
    double s;       // arc length along centerline [um]
    double offset;  // perpendicular offset [um]
    double amp;
  };
  std::vector<Bubble> live;

  for (int t = 0; t < n_frames; ++t) {
    // advect, then spawn
    for (Bubble& b : live) b.s += ph.vessels[b.vessel].flow_speed_um_per_frame;
    std::erase_if(live, [&](const Bubble& b) { return b.s > ph.vessels[b.vessel].length_um(); });
    for (std::size_t vi = 0; vi < ph.vessels.size(); ++vi) {
      const int born = rng.poisson(ph.vessels[vi].bubble_rate);
      for (int i = 0; i < born; ++i) {
        Bubble b;
        b.vessel = static_cast<int>(vi);
        b.s = 0;
        b.offset = rng.uniform(-ph.vessels[vi].radius_um, ph.vessels[vi].radius_um);
        b.amp = rng.uniform(ph.bubble_amp_min, ph.bubble_amp_max);
        live.push_back(b);
      }
    }

    const auto [mx, my] = ph.motion.at(t);

    std::vector<std::array<double, 3>> sources;  // LR px coords, shifted by motion
    sources.reserve(live.size());
    for (const Bubble& b : live) {
      double x, y, tx, ty;
      ph.vessels[b.vessel].point_at(b.s, x, y, tx, ty);
      const double px = x - ty * b.offset;  // perpendicular = (-ty, tx)
      const double py = y + tx * b.offset;
      out.truth.push_back({t, px, py, b.amp});
      sources.push_back({grid.um_to_lr_px(px + mx), grid.um_to_lr_px(py + my), b.amp});
    }

    Frame ceus(grid.lr_width, grid.lr_height);
    render_sources_lr(ceus, sources, psf.sigma_lr);
    Frame shifted_tissue = (mx != 0 || my != 0)
                               ? apply_translation(tissue, mx / grid.lr_pixel_um, my / grid.lr_pixel_um)
                               : tissue;
    if (ph.ceus_tissue_residual > 0)
      for (std::size_t i = 0; i < ceus.data.size(); ++i)
        ceus.data[i] += ph.ceus_tissue_residual * shifted_tissue.data[i];
    if (ph.ceus_noise_std > 0)
      for (double& v : ceus.data) v += ph.ceus_noise_std * rng.normal();

    Frame bmode = shifted_tissue;
    if (ph.bmode_noise_std > 0)
      for (double& v : bmode.data) v += ph.bmode_noise_std * rng.normal();

    out.ceus.frames.push_back(std::move(ceus));
    out.bmode.frames.push_back(std::move(bmode));
  }
  return out;
}

}  // namespace ulm
