#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <unsupported/Eigen/FFT>

#include "ulm/errors.hpp"
#include "ulm/image.hpp"

namespace ulm {

// Region of interest in LR pixels, used for the subsequencing correlation gate.
struct Roi {
  int x0 = 0, y0 = 0;
  int width = 0, height = 0;

  void validate(int frame_w, int frame_h) const {
    if (x0 < 0 || y0 < 0 || width <= 0 || height <= 0 || x0 + width > frame_w ||
        y0 + height > frame_h)
      throw InvalidParameter("Roi: outside frame bounds");
    if (width * height < 16) throw InvalidParameter("Roi: area must be >= 16 pixels");
  }
};

inline Roi full_frame_roi(int w, int h) { return Roi{0, 0, w, h}; }

// ---------------------------------------------------------------------------
// Time-intensity curve and wash-out selection
// ---------------------------------------------------------------------------

// Mean intensity per frame.
inline std::vector<double> tic(const FrameSequence& seq) {
  if (seq.frames.empty()) throw DegenerateInput("tic: empty sequence");
  std::vector<double> out;
  out.reserve(seq.frames.size());
  for (const Frame& f : seq.frames) out.push_back(image_mean(f));
  return out;
}

// Index of the TIC maximum; ties break to the earliest frame.
inline int washout_start(const std::vector<double>& curve) {
  if (curve.empty()) throw DegenerateInput("washout_start: empty TIC");
  int best = 0;
  for (int i = 1; i < static_cast<int>(curve.size()); ++i)
    if (curve[i] > curve[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Zero-normalized cross-correlation over an ROI
// ---------------------------------------------------------------------------

inline double ncc(const Frame& a, const Frame& b, const Roi& roi) {
  if (!a.same_shape(b)) throw InvalidParameter("ncc: frame dimensions differ");
  roi.validate(a.width, a.height);
  const double n = static_cast<double>(roi.width) * roi.height;
  double ma = 0, mb = 0;
  for (int y = roi.y0; y < roi.y0 + roi.height; ++y)
    for (int x = roi.x0; x < roi.x0 + roi.width; ++x) {
      ma += a.at(x, y);
      mb += b.at(x, y);
    }
  ma /= n;
  mb /= n;
  double saa = 0, sbb = 0, sab = 0;
  for (int y = roi.y0; y < roi.y0 + roi.height; ++y)
    for (int x = roi.x0; x < roi.x0 + roi.width; ++x) {
      const double da = a.at(x, y) - ma;
      const double db = b.at(x, y) - mb;
      saa += da * da;
      sbb += db * db;
      sab += da * db;
    }
  if (saa == 0 || sbb == 0) throw DegenerateInput("ncc: zero-variance ROI");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Subsequence splitting
// ---------------------------------------------------------------------------

struct SubsequenceIndex {
  std::vector<std::pair<int, int>> ranges;  // inclusive [start, end], disjoint, sorted
  int min_len = 1000;
  double corr_threshold = 0.90;
};

namespace detail {

// Correlation gate for one frame pair. Flat frames carry no registration
// signal; an exactly repeated flat pair passes, anything else breaks.
inline bool frames_similar(const Frame& a, const Frame& b, const Roi& roi, double threshold) {
  try {
    return ncc(a, b, roi) > threshold;
  } catch (const DegenerateInput&) {
    for (int y = roi.y0; y < roi.y0 + roi.height; ++y)
      for (int x = roi.x0; x < roi.x0 + roi.width; ++x)
        if (a.at(x, y) != b.at(x, y)) return false;
    return true;
  }
}

}  // namespace detail

// Consecutive frames stay in one subsequence iff their ROI cross-correlation
// exceeds the threshold; only runs of length >= min_len are kept. With
// `anchored`, frames are instead compared against the first frame of the
// current run.
inline SubsequenceIndex split_subsequences(const FrameSequence& bmode, const Roi& roi,
                                           double corr_threshold = 0.90, int min_len = 1000,
                                           bool anchored = false) {
  if (bmode.frames.empty()) throw DegenerateInput("split_subsequences: empty sequence");
  roi.validate(bmode.width(), bmode.height());
  if (min_len < 1) throw InvalidParameter("split_subsequences: min_len must be >= 1");

  SubsequenceIndex out;
  out.min_len = min_len;
  out.corr_threshold = corr_threshold;

  const int n = bmode.n_frames();
  int start = 0;
  for (int t = 0; t + 1 < n; ++t) {
    const Frame& ref = anchored ? bmode.frames[start] : bmode.frames[t];
    if (!detail::frames_similar(ref, bmode.frames[t + 1], roi, corr_threshold)) {
      if (t - start + 1 >= min_len) out.ranges.emplace_back(start, t);
      start = t + 1;
    }
  }
  if (n - start >= min_len) out.ranges.emplace_back(start, n - 1);
  return out;
}

// ---------------------------------------------------------------------------
// Translation registration (FFT cross-correlation + parabolic subpixel peak)
// ---------------------------------------------------------------------------

namespace detail {

using Cd = std::complex<double>;

inline std::vector<Cd> fft2_complex(std::vector<Cd> buf, int W, int H, bool inverse) {
  Eigen::FFT<double> fft;
  std::vector<Cd> line(W), linef(W);
  for (int y = 0; y < H; ++y) {
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(y) * W,
              buf.begin() + static_cast<std::ptrdiff_t>(y + 1) * W, line.begin());
    if (inverse)
      fft.inv(linef, line);
    else
      fft.fwd(linef, line);
    std::copy(linef.begin(), linef.end(), buf.begin() + static_cast<std::ptrdiff_t>(y) * W);
  }
  std::vector<Cd> col(H), colf(H);
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) col[y] = buf[static_cast<std::size_t>(y) * W + x];
    if (inverse)
      fft.inv(colf, col);
    else
      fft.fwd(colf, col);
    for (int y = 0; y < H; ++y) buf[static_cast<std::size_t>(y) * W + x] = colf[y];
  }
  return buf;
}

inline std::vector<Cd> fft2(const Frame& f, bool inverse = false) {
  std::vector<Cd> buf(f.data.begin(), f.data.end());
  return fft2_complex(std::move(buf), f.width, f.height, inverse);
}

inline double parabolic_offset(double ym, double y0, double yp) {
  const double denom = ym + yp - 2.0 * y0;
  if (std::abs(denom) < 1e-300) return 0.0;
  return std::clamp((ym - yp) / (2.0 * denom), -0.5, 0.5);
}

}  // namespace detail

inline Frame apply_translation(const Frame& f, double dx, double dy);

namespace detail {

inline std::pair<double, double> phase_correlate_once(const Frame& ref, const Frame& moving);

}  // namespace detail

// Subpixel translation of `moving` relative to `ref`: peak of the circular
// phase correlation of the Hann-windowed zero-mean frames, refined by a
// parabolic fit of the peak and its 4 neighbors, then a second pass on the
// unshifted pair to cancel the window-induced shrinkage.
// apply_translation(ref, dx, dy) ~ moving.
inline std::pair<double, double> estimate_translation(const Frame& ref, const Frame& moving) {
  const auto [dx1, dy1] = detail::phase_correlate_once(ref, moving);
  const Frame aligned = apply_translation(moving, -dx1, -dy1);
  const auto [dx2, dy2] = detail::phase_correlate_once(ref, aligned);
  return {dx1 + dx2, dy1 + dy2};
}

namespace detail {

inline std::pair<double, double> phase_correlate_once(const Frame& ref, const Frame& moving) {
  if (!ref.same_shape(moving)) throw InvalidParameter("estimate_translation: dimensions differ");
  const int W = ref.width, H = ref.height;
  if (static_cast<std::size_t>(W) * H < 4) throw DegenerateInput("estimate_translation: tiny frame");

  const double mr = image_mean(ref), mm = image_mean(moving);
  Frame a(W, H), b(W, H);
  double va = 0, vb = 0;
  for (int y = 0; y < H; ++y) {
    // Hann window suppresses the wraparound discontinuity of non-circular data
    const double wy = 0.5 - 0.5 * std::cos(2.0 * M_PI * y / (H - 1));
    for (int x = 0; x < W; ++x) {
      const double w = wy * (0.5 - 0.5 * std::cos(2.0 * M_PI * x / (W - 1)));
      a.at(x, y) = w * (ref.at(x, y) - mr);
      b.at(x, y) = w * (moving.at(x, y) - mm);
      va += a.at(x, y) * a.at(x, y);
      vb += b.at(x, y) * b.at(x, y);
    }
  }
  if (va == 0 || vb == 0) throw DegenerateInput("estimate_translation: flat image");

  auto A = detail::fft2(a);
  auto B = detail::fft2(b);
  double mag_sum = 0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    A[i] = B[i] * std::conj(A[i]);
    mag_sum += std::abs(A[i]);
  }
  // soft spectral whitening: strong bins approach unit magnitude, bins far
  // below the mean cross-power stay suppressed instead of contributing
  // amplified noise phase
  const double eps = 0.05 * (mag_sum / static_cast<double>(A.size())) + 1e-300;
  for (auto& v : A) v /= std::abs(v) + eps;
  auto C = detail::fft2_complex(std::move(A), W, H, true);

  int best = 0;
  for (std::size_t i = 1; i < C.size(); ++i)
    if (C[i].real() > C[best].real()) best = static_cast<int>(i);
  const int ix = best % W, iy = best / W;

  auto cc = [&](int x, int y) {
    x = ((x % W) + W) % W;
    y = ((y % H) + H) % H;
    return C[static_cast<std::size_t>(y) * W + x].real();
  };
  const double dxf = detail::parabolic_offset(cc(ix - 1, iy), cc(ix, iy), cc(ix + 1, iy));
  const double dyf = detail::parabolic_offset(cc(ix, iy - 1), cc(ix, iy), cc(ix, iy + 1));

  const double dx = (ix > W / 2 ? ix - W : ix) + dxf;
  const double dy = (iy > H / 2 ? iy - H : iy) + dyf;
  return {dx, dy};
}

}  // namespace detail

// Bilinear resampling; out-of-domain pixels are 0. Content moves by (+dx, +dy).
inline Frame apply_translation(const Frame& f, double dx, double dy) {
  if (!std::isfinite(dx) || !std::isfinite(dy))
    throw InvalidParameter("apply_translation: non-finite shift");
  Frame out(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) out.at(x, y) = sample_bilinear(f, x - dx, y - dy);
  return out;
}

// ---------------------------------------------------------------------------
// Spatiotemporal SVD clutter filter
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::MatrixXd casorati(const FrameSequence& seq) {
  const auto P = static_cast<Eigen::Index>(seq.width()) * seq.height();
  const auto T = static_cast<Eigen::Index>(seq.n_frames());
  Eigen::MatrixXd M(P, T);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index p = 0; p < P; ++p) M(p, t) = seq.frames[t].data[p];
  return M;
}

}  // namespace detail

// Singular values of the Casorati matrix (pixels x frames), descending.
inline std::vector<double> svd_spectrum(const FrameSequence& seq) {
  if (seq.frames.empty()) throw DegenerateInput("svd_spectrum: empty sequence");
  seq.validate();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(detail::casorati(seq));
  std::vector<double> out(svd.singularValues().data(),
                          svd.singularValues().data() + svd.singularValues().size());
  return out;
}

// Zero the n_low largest singular values (tissue clutter) and the n_high
// smallest (noise), then reconstruct.
inline FrameSequence svd_filter(const FrameSequence& seq, int n_low, int n_high = 0) {
  seq.validate();
  if (n_low < 0 || n_high < 0) throw InvalidParameter("svd_filter: negative cutoff");
  const int T = seq.n_frames();
  const auto P = static_cast<Eigen::Index>(seq.width()) * seq.height();
  const int n_sv = static_cast<int>(std::min<Eigen::Index>(P, T));
  if (n_low + n_high >= T || n_low + n_high >= n_sv)
    throw InvalidParameter("svd_filter: insufficient frames for requested cutoffs");

  Eigen::MatrixXd M = detail::casorati(seq);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd S = svd.singularValues();
  for (int i = 0; i < n_low; ++i) S(i) = 0;
  for (int i = 0; i < n_high; ++i) S(n_sv - 1 - i) = 0;
  Eigen::MatrixXd F = svd.matrixU() * S.asDiagonal() * svd.matrixV().transpose();

  FrameSequence out = seq;
  for (int t = 0; t < T; ++t)
    for (Eigen::Index p = 0; p < P; ++p) out.frames[t].data[p] = F(p, t);
  return out;
}

// ---------------------------------------------------------------------------
// Full preprocessing pipeline: washout trim -> subsequence split ->
// per-subsequence registration (B-mode shifts applied to CEUS) -> SVD filter.
// ---------------------------------------------------------------------------

struct PreprocessConfig {
  Roi roi{0, 0, -1, -1};  // -1 sizes resolve to the full frame
  double corr_threshold = 0.90;
  int min_len = 1000;
  int svd_low = 2;
  int svd_high = 0;
  bool washout_trim = true;
  bool anchored_subsequences = false;
};

struct PreprocessReport {
  int washout_start = 0;
  std::vector<std::pair<int, int>> subsequences;  // absolute frame indices
  std::pair<int, int> selected{-1, -1};
  std::vector<std::array<double, 2>> shifts;  // per selected frame, B-mode derived
  std::vector<double> singular_values;
  int registration_skipped_flat = 0;
};

struct PreprocessResult {
  FrameSequence filtered;
  PreprocessReport report;
};

inline PreprocessResult preprocess_run(const FrameSequence& ceus, const FrameSequence& bmode,
                                       const PreprocessConfig& cfg) {
  ceus.validate();
  bmode.validate();
  if (ceus.n_frames() != bmode.n_frames())
    throw InvalidParameter("preprocess_run: CEUS and B-mode frame counts differ");
  if (ceus.width() != bmode.width() || ceus.height() != bmode.height())
    throw InvalidParameter("preprocess_run: CEUS and B-mode dimensions differ");

  Roi roi = cfg.roi;
  if (roi.width < 0) roi = full_frame_roi(ceus.width(), ceus.height());
  roi.validate(ceus.width(), ceus.height());

  PreprocessResult res;
  PreprocessReport& rep = res.report;

  // 1. wash-out trim
  int offset = 0;
  if (cfg.washout_trim) offset = washout_start(tic(ceus));
  rep.washout_start = offset;

  FrameSequence bmode_trim = bmode;
  bmode_trim.frames.assign(bmode.frames.begin() + offset, bmode.frames.end());

  // 2. subsequence split on B-mode
  const SubsequenceIndex idx = split_subsequences(bmode_trim, roi, cfg.corr_threshold, cfg.min_len,
                                                  cfg.anchored_subsequences);
  for (const auto& [s, e] : idx.ranges) rep.subsequences.emplace_back(s + offset, e + offset);
  if (idx.ranges.empty())
    throw DegenerateInput("preprocess_run: no subsequence of the required length");

  // longest range, earliest on ties
  std::size_t best = 0;
  for (std::size_t i = 1; i < idx.ranges.size(); ++i)
    if (idx.ranges[i].second - idx.ranges[i].first >
        idx.ranges[best].second - idx.ranges[best].first)
      best = i;
  const int s0 = idx.ranges[best].first + offset;
  const int s1 = idx.ranges[best].second + offset;
  rep.selected = {s0, s1};

  // 3. registration: shifts from B-mode against the subsequence's first frame,
  // inverse shift applied to the concurrent CEUS frames
  FrameSequence aligned = ceus;
  aligned.frames.assign(ceus.frames.begin() + s0, ceus.frames.begin() + s1 + 1);
  const Frame& ref = bmode.frames[s0];
  const bool ref_flat = image_energy(ref) == 0 || image_max(ref) == image_min(ref);
  for (int t = s0; t <= s1; ++t) {
    double dx = 0, dy = 0;
    if (t != s0) {
      const Frame& mov = bmode.frames[t];
      const bool mov_flat = image_max(mov) == image_min(mov);
      if (ref_flat || mov_flat) {
        ++rep.registration_skipped_flat;
      } else {
        std::tie(dx, dy) = estimate_translation(ref, mov);
        aligned.frames[t - s0] = apply_translation(aligned.frames[t - s0], -dx, -dy);
      }
    }
    rep.shifts.push_back({dx, dy});
  }

  // 4. SVD clutter filter
  rep.singular_values = svd_spectrum(aligned);
  res.filtered = svd_filter(aligned, cfg.svd_low, cfg.svd_high);
  return res;
}

}  // namespace ulm
