#pragma once

#include <utility>

#include "ulm/errors.hpp"

namespace ulm {

// Low-resolution acquisition grid plus the derived high-resolution recovery grid.
// Pixel-center convention: the center of LR pixel (0,0) maps to the center of its
// r x r HR block, i.e. x_hr = r*x_lr + (r-1)/2. Physical coordinates are measured
// from the top-left frame corner: x_um = (x_lr + 0.5) * lr_pixel_um, which makes
// x_um = (x_hr + 0.5) * hr_pixel_um hold on the HR grid as well.
struct GridSpec {
  int lr_width = 32;
  int lr_height = 32;
  double lr_pixel_um = 125.0;  // axial = lateral
  int upsample = 4;

  void validate() const {
    if (lr_width <= 0 || lr_height <= 0) throw InvalidParameter("GridSpec: non-positive size");
    if (lr_pixel_um <= 0) throw InvalidParameter("GridSpec: non-positive pixel size");
    if (upsample < 1) throw InvalidParameter("GridSpec: upsample must be >= 1");
  }

  int hr_width() const { return lr_width * upsample; }
  int hr_height() const { return lr_height * upsample; }
  double hr_pixel_um() const { return lr_pixel_um / upsample; }

  double width_um() const { return lr_width * lr_pixel_um; }
  double height_um() const { return lr_height * lr_pixel_um; }

  double lr_to_hr(double x_lr) const { return upsample * x_lr + (upsample - 1) * 0.5; }
  double hr_to_lr(double x_hr) const { return (x_hr - (upsample - 1) * 0.5) / upsample; }

  double lr_px_to_um(double x_lr) const { return (x_lr + 0.5) * lr_pixel_um; }
  double um_to_lr_px(double x_um) const { return x_um / lr_pixel_um - 0.5; }
  double hr_px_to_um(double x_hr) const { return (x_hr + 0.5) * hr_pixel_um(); }
  double um_to_hr_px(double x_um) const { return x_um / hr_pixel_um() - 0.5; }
};

inline std::pair<double, double> lr_to_hr_coords(double x_lr, double y_lr, const GridSpec& g) {
  return {g.lr_to_hr(x_lr), g.lr_to_hr(y_lr)};
}

inline std::pair<double, double> hr_to_lr_coords(double x_hr, double y_hr, const GridSpec& g) {
  return {g.hr_to_lr(x_hr), g.hr_to_lr(y_hr)};
}

}  // namespace ulm
