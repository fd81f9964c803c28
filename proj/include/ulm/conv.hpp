#pragma once

#include <cstddef>

#include "ulm/image.hpp"

namespace ulm {

// 180-degree rotation.
template <typename T>
Image<T> flip_kernel(const Image<T>& k) {
  Image<T> out(k.width, k.height);
  for (std::size_t i = 0; i < k.data.size(); ++i) out.data[i] = k.data[k.data.size() - 1 - i];
  return out;
}

template <typename T>
std::size_t count_nonzero(const Image<T>& f) {
  std::size_t n = 0;
  for (T v : f.data) n += (v != T(0));
  return n;
}

namespace detail {

// out[p] += sum_o in[p+o] * ker[o+R], one shifted AXPY pass per kernel tap.
template <typename T>
void correlate_dense(const Image<T>& in, const Image<T>& ker, Image<T>& out) {
  const int R = ker.width / 2;
  const int W = in.width, H = in.height;
  for (int oy = -R; oy <= R; ++oy) {
    const int y0 = std::max(0, -oy), y1 = H - 1 - std::max(0, oy);
    for (int ox = -R; ox <= R; ++ox) {
      const T w = ker.at(ox + R, oy + R);
      if (w == T(0)) continue;
      const int x0 = std::max(0, -ox), x1 = W - 1 - std::max(0, ox);
      for (int y = y0; y <= y1; ++y) {
        T* __restrict dst = &out.at(x0, y);
        const T* __restrict src = &in.at(x0 + ox, y + oy);
        const int n = x1 - x0 + 1;
        for (int i = 0; i < n; ++i) dst[i] += w * src[i];
      }
    }
  }
}

// Scatter from the nonzeros of `in`; same result as correlate_dense.
template <typename T>
void correlate_sparse(const Image<T>& in, const Image<T>& ker, Image<T>& out) {
  const int R = ker.width / 2;
  const int W = in.width, H = in.height;
  const Image<T> kf = flip_kernel(ker);  // out[q-o] += in[q]*ker[o] == row AXPY with flipped kernel
  for (int qy = 0; qy < H; ++qy) {
    const T* row = &in.at(0, qy);
    for (int qx = 0; qx < W; ++qx) {
      const T v = row[qx];
      if (v == T(0)) continue;
      const int py0 = std::max(0, qy - R), py1 = std::min(H - 1, qy + R);
      const int px0 = std::max(0, qx - R), px1 = std::min(W - 1, qx + R);
      for (int py = py0; py <= py1; ++py) {
        T* __restrict dst = &out.at(px0, py);
        const T* __restrict kr = &kf.at(px0 - (qx - R), py - (qy - R));
        const int n = px1 - px0 + 1;
        for (int i = 0; i < n; ++i) dst[i] += v * kr[i];
      }
    }
  }
}

}  // namespace detail

// Zero-padded same-size cross-correlation: out[p] = sum_o in[p+o] * ker[o+R].
// For symmetric kernels this equals convolution. Picks a scatter path when the
// input is sparse enough for it to win; both paths are deterministic.
template <typename T>
Image<T> correlate_same(const Image<T>& in, const Image<T>& ker) {
  if (ker.width != ker.height || ker.width % 2 == 0)
    throw InvalidParameter("correlate_same: kernel must be odd and square");
  Image<T> out(in.width, in.height);
  const std::size_t nnz = count_nonzero(in);
  if (nnz * 8 < in.size())
    detail::correlate_sparse(in, ker, out);
  else
    detail::correlate_dense(in, ker, out);
  return out;
}

namespace detail {

template <typename T>
void kernel_grad_over_gout(const Image<T>& g_out, const Image<T>& in, int radius, Image<T>& gk) {
  const int W = in.width, H = in.height;
  for (int py = 0; py < H; ++py) {
    const T* row = &g_out.at(0, py);
    for (int px = 0; px < W; ++px) {
      const T g = row[px];
      if (g == T(0)) continue;
      const int oy0 = std::max(-radius, -py), oy1 = std::min(radius, H - 1 - py);
      const int ox0 = std::max(-radius, -px), ox1 = std::min(radius, W - 1 - px);
      for (int oy = oy0; oy <= oy1; ++oy) {
        T* __restrict dst = &gk.at(ox0 + radius, oy + radius);
        const T* __restrict src = &in.at(px + ox0, py + oy);
        const int n = ox1 - ox0 + 1;
        for (int i = 0; i < n; ++i) dst[i] += g * src[i];
      }
    }
  }
}

// Same sum reorganized around gk[o] += in[q] * g_out[q-o].
template <typename T>
void kernel_grad_over_in(const Image<T>& g_out, const Image<T>& in, int radius, Image<T>& gk) {
  const int W = in.width, H = in.height;
  for (int qy = 0; qy < H; ++qy) {
    const T* row = &in.at(0, qy);
    for (int qx = 0; qx < W; ++qx) {
      const T v = row[qx];
      if (v == T(0)) continue;
      const int oy0 = std::max(-radius, qy - (H - 1)), oy1 = std::min(radius, qy);
      const int ox0 = std::max(-radius, qx - (W - 1)), ox1 = std::min(radius, qx);
      for (int oy = oy0; oy <= oy1; ++oy)
        for (int ox = ox0; ox <= ox1; ++ox)
          gk.at(ox + radius, oy + radius) += v * g_out.at(qx - ox, qy - oy);
    }
  }
}

}  // namespace detail

// Gradient of correlate_same with respect to the kernel:
// gk[o] = sum_p g_out[p] * in[p+o]. Iterates whichever side is sparser.
template <typename T>
Image<T> correlate_kernel_grad(const Image<T>& g_out, const Image<T>& in, int radius) {
  Image<T> gk(2 * radius + 1, 2 * radius + 1);
  if (count_nonzero(in) < count_nonzero(g_out))
    detail::kernel_grad_over_in(g_out, in, radius, gk);
  else
    detail::kernel_grad_over_gout(g_out, in, radius, gk);
  return gk;
}

// Gradient of correlate_same with respect to the input:
// g_in = correlate_same(g_out, flip(ker)).
template <typename T>
Image<T> correlate_input_grad(const Image<T>& g_out, const Image<T>& ker) {
  return correlate_same(g_out, flip_kernel(ker));
}

}  // namespace ulm
