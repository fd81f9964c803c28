#pragma once

#include <cmath>

#include "ulm/grid.hpp"
#include "ulm/image.hpp"

namespace ulm {

// Isotropic Gaussian point spread function. sigma is stated in LR pixels;
// on the HR grid it scales by the upsampling factor.
struct PsfModel {
  double sigma_lr = 1.0;
  double amplitude = 1.0;

  void validate() const {
    if (sigma_lr <= 0) throw InvalidParameter("PsfModel: sigma_lr must be > 0");
    if (amplitude <= 0) throw InvalidParameter("PsfModel: amplitude must be > 0");
  }
};

enum class GridTarget { LR, HR };

// Unchecked Gaussian kernel on a (2*radius+1)^2 support, peak at the center.
inline Image<double> gaussian_kernel(double sigma, int radius, double amplitude = 1.0,
                                     bool normalize = false) {
  if (sigma <= 0) throw InvalidParameter("gaussian_kernel: sigma must be > 0");
  if (radius < 0) throw InvalidParameter("gaussian_kernel: negative radius");
  const int side = 2 * radius + 1;
  Image<double> k(side, side);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double dx = x - radius;
      const double dy = y - radius;
      k.at(x, y) = amplitude * std::exp(-(dx * dx + dy * dy) * inv2s2);
    }
  if (normalize) {
    const double s = image_sum(k);
    for (double& v : k.data) v /= s;
  }
  return k;
}

inline double psf_sigma_px(const PsfModel& psf, const GridSpec& grid, GridTarget target) {
  return target == GridTarget::LR ? psf.sigma_lr : psf.sigma_lr * grid.upsample;
}

// Sample the PSF onto the requested grid. The radius must cover at least
// 3 sigma in target-grid pixels.
inline Image<double> sample_psf(const PsfModel& psf, const GridSpec& grid, GridTarget target,
                                int radius_px) {
  psf.validate();
  grid.validate();
  const double sigma = psf_sigma_px(psf, grid, target);
  if (radius_px < static_cast<int>(std::ceil(3.0 * sigma)))
    throw InvalidParameter("sample_psf: radius_px must be >= ceil(3*sigma)");
  return gaussian_kernel(sigma, radius_px, psf.amplitude);
}

}  // namespace ulm
