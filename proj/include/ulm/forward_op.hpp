#pragma once

#include <cmath>
#include <vector>

#include "ulm/conv.hpp"
#include "ulm/grid.hpp"
#include "ulm/image.hpp"
#include "ulm/psf.hpp"
#include "ulm/rng.hpp"

namespace ulm {

// The measurement operator H: HR image -> LR image, realized as convolution
// with the PSF sampled on the HR grid followed by r-fold subsampling at the HR
// positions aligned to LR pixel centers (bilinear pick when the aligned
// position falls between HR pixels, i.e. for even r). The adjoint is exact.
class ForwardOp {
 public:
  ForwardOp(const GridSpec& grid, const PsfModel& psf) : grid_(grid), psf_(psf) {
    grid.validate();
    psf.validate();
    const double sigma_hr = psf.sigma_lr * grid.upsample;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma_hr));
    kernel_ = sample_psf(psf, grid, GridTarget::HR, radius);
    const double u = grid_.lr_to_hr(0.0);  // fractional part is 0 or 0.5
    base_ = static_cast<int>(std::floor(u));
    frac_ = u - base_;
  }

  const GridSpec& grid() const { return grid_; }
  const PsfModel& psf() const { return psf_; }
  const Image<double>& kernel_hr() const { return kernel_; }

  Image<double> apply(const Image<double>& x_hr) const {
    check_hr(x_hr);
    const Image<double> c = correlate_same(x_hr, kernel_);
    Image<double> y(grid_.lr_width, grid_.lr_height);
    for_each_tap([&](int i, int j, int qx, int qy, double w) {
      if (qx >= 0 && qx < c.width && qy >= 0 && qy < c.height) y.at(i, j) += w * c.at(qx, qy);
    });
    return y;
  }

  Image<double> apply_adjoint(const Image<double>& y_lr) const {
    check_lr(y_lr);
    Image<double> z(grid_.hr_width(), grid_.hr_height());
    for_each_tap([&](int i, int j, int qx, int qy, double w) {
      if (qx >= 0 && qx < z.width && qy >= 0 && qy < z.height) z.at(qx, qy) += w * y_lr.at(i, j);
    });
    return correlate_same(z, flip_kernel(kernel_));
  }

 private:
  template <typename Fn>
  void for_each_tap(Fn&& fn) const {
    const int r = grid_.upsample;
    for (int j = 0; j < grid_.lr_height; ++j) {
      const int qy = r * j + base_;
      for (int i = 0; i < grid_.lr_width; ++i) {
        const int qx = r * i + base_;
        if (frac_ == 0.0) {
          fn(i, j, qx, qy, 1.0);
        } else {
          fn(i, j, qx, qy, 0.25);
          fn(i, j, qx + 1, qy, 0.25);
          fn(i, j, qx, qy + 1, 0.25);
          fn(i, j, qx + 1, qy + 1, 0.25);
        }
      }
    }
  }

  void check_hr(const Image<double>& x) const {
    if (x.width != grid_.hr_width() || x.height != grid_.hr_height())
      throw InvalidParameter("ForwardOp: image does not match HR grid");
  }
  void check_lr(const Image<double>& y) const {
    if (y.width != grid_.lr_width || y.height != grid_.lr_height)
      throw InvalidParameter("ForwardOp: image does not match LR grid");
  }

  GridSpec grid_;
  PsfModel psf_;
  Image<double> kernel_;
  int base_ = 0;
  double frac_ = 0;
};

// Explicit dense H (lr pixels x hr pixels), column-by-column, for small-grid
// cross-checks and the coordinate-descent oracle.
inline std::vector<std::vector<double>> explicit_matrix(const ForwardOp& op) {
  const GridSpec& g = op.grid();
  const std::size_t n_hr = static_cast<std::size_t>(g.hr_width()) * g.hr_height();
  if (n_hr > 32u * 32u * 4u)
    throw InvalidParameter("explicit_matrix: grid too large for dense mode");
  std::vector<std::vector<double>> cols(n_hr);
  Image<double> e(g.hr_width(), g.hr_height());
  for (std::size_t q = 0; q < n_hr; ++q) {
    e.data[q] = 1.0;
    cols[q] = op.apply(e).data;
    e.data[q] = 0.0;
  }
  return cols;
}

// Largest eigenvalue of H^T H via power iteration (Rayleigh quotient, which is
// non-decreasing across iterations for a symmetric PSD operator).
inline double power_iteration_L(const ForwardOp& op, int iters = 50,
                                std::uint64_t seed = 0x9d3f7u) {
  Rng rng(seed);
  Image<double> v(op.grid().hr_width(), op.grid().hr_height());
  for (double& x : v.data) x = rng.uniform(-1.0, 1.0);
  double rayleigh = 0;
  for (int it = 0; it < iters; ++it) {
    const Image<double> w = op.apply_adjoint(op.apply(v));
    const double vv = image_energy(v);
    if (vv == 0) return 0;
    rayleigh = image_dot(v, w) / vv;
    const double nw = std::sqrt(image_energy(w));
    if (nw == 0) return 0;
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = w.data[i] / nw;
  }
  return rayleigh;
}

}  // namespace ulm
