#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "ulm/conv.hpp"
#include "ulm/forward_op.hpp"
#include "ulm/grid.hpp"
#include "ulm/image.hpp"
#include "ulm/io.hpp"
#include "ulm/ista.hpp"
#include "ulm/localization.hpp"
#include "ulm/parallel.hpp"
#include "ulm/psf.hpp"
#include "ulm/rng.hpp"
#include "ulm/simgen.hpp"

namespace ulm {

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
inline double softplus_inv(double y) { return y > 30 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// All learnable parameters of the K-block unrolled network. Per block: a
// kernel applied to the encoded input term (w), a kernel applied to the
// current estimate (v), and a raw threshold theta with effective threshold
// rho = softplus(theta) >= 0 by construction.
template <typename T>
struct NetParams {
  int upsample = 4;
  Image<T> w_in;
  std::vector<Image<T>> w_blocks;
  std::vector<Image<T>> v_blocks;
  std::vector<T> theta;

  int blocks() const { return static_cast<int>(theta.size()); }
  int kernel_size() const { return w_in.width; }
  int kernel_radius() const { return w_in.width / 2; }

  void validate() const {
    if (blocks() < 1) throw InvalidParameter("NetParams: need at least one block");
    if (w_blocks.size() != theta.size() || v_blocks.size() != theta.size())
      throw InvalidParameter("NetParams: inconsistent block counts");
    if (w_in.width != w_in.height || w_in.width % 2 == 0)
      throw InvalidParameter("NetParams: kernels must be odd and square");
  }

  std::size_t n_params() const {
    return w_in.size() + theta.size() +
           std::accumulate(w_blocks.begin(), w_blocks.end(), std::size_t{0},
                           [](std::size_t a, const Image<T>& k) { return a + k.size(); }) +
           std::accumulate(v_blocks.begin(), v_blocks.end(), std::size_t{0},
                           [](std::size_t a, const Image<T>& k) { return a + k.size(); });
  }

  // Flat order: w_in, then per block w_k, v_k, theta_k.
  std::vector<double> to_flat() const {
    std::vector<double> out;
    out.reserve(n_params());
    for (T v : w_in.data) out.push_back(static_cast<double>(v));
    for (int k = 0; k < blocks(); ++k) {
      for (T v : w_blocks[k].data) out.push_back(static_cast<double>(v));
      for (T v : v_blocks[k].data) out.push_back(static_cast<double>(v));
      out.push_back(static_cast<double>(theta[k]));
    }
    return out;
  }

  void from_flat(const std::vector<double>& flat) {
    if (flat.size() != n_params()) throw InvalidParameter("NetParams: flat size mismatch");
    std::size_t i = 0;
    for (T& v : w_in.data) v = static_cast<T>(flat[i++]);
    for (int k = 0; k < blocks(); ++k) {
      for (T& v : w_blocks[k].data) v = static_cast<T>(flat[i++]);
      for (T& v : v_blocks[k].data) v = static_cast<T>(flat[i++]);
      theta[k] = static_cast<T>(flat[i++]);
    }
  }

  template <typename U>
  NetParams<U> cast() const {
    NetParams<U> out;
    out.upsample = upsample;
    out.w_in = w_in.template cast<U>();
    for (const auto& k : w_blocks) out.w_blocks.push_back(k.template cast<U>());
    for (const auto& k : v_blocks) out.v_blocks.push_back(k.template cast<U>());
    for (T t : theta) out.theta.push_back(static_cast<U>(t));
    return out;
  }

  NetParams<T> zeros_like() const {
    NetParams<T> out;
    out.upsample = upsample;
    out.w_in = Image<T>(w_in.width, w_in.height);
    for (int k = 0; k < blocks(); ++k) {
      out.w_blocks.emplace_back(w_in.width, w_in.height);
      out.v_blocks.emplace_back(w_in.width, w_in.height);
      out.theta.push_back(T(0));
    }
    return out;
  }
};

struct NetConfig {
  int blocks = 9;
  int kernel_size = 11;    // odd, HR pixels
  bool psf_init = true;    // false: small random init (ablation mode)
  double init_sigma_lr = 0;  // 0: midpoint of the training sigma range
  double init_rho = 0.01;    // initial soft-threshold level

  void validate() const {
    if (blocks < 1) throw InvalidParameter("NetConfig: blocks must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw InvalidParameter("NetConfig: kernel_size must be odd and positive");
    if (init_rho <= 0) throw InvalidParameter("NetConfig: init_rho must be > 0");
  }
};

struct TrainConfig {
  double lambda = 0.01;
  double gauss_sigma_px = 1.0;  // HR pixels
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr = 5e-4;
  int batch_size = 64;
  int epochs = 1000;
  int steps_per_epoch = 50;
  int val_size = 64;
  std::uint64_t seed = 0x1ceb00daULL;

  void validate() const {
    if (lambda < 0 || gauss_sigma_px <= 0 || adam_eps <= 0 || lr < 0)
      throw InvalidParameter("TrainConfig: non-positive value");
    if (adam_beta1 <= 0 || adam_beta1 >= 1 || adam_beta2 <= 0 || adam_beta2 >= 1)
      throw InvalidParameter("TrainConfig: betas must be in (0,1)");
    if (batch_size < 1 || epochs < 1 || steps_per_epoch < 1 || val_size < 1)
      throw InvalidParameter("TrainConfig: counts must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

// Zero-insertion upsampling; LR pixel (i,j) lands at HR (r*i+off, r*j+off)
// with off = floor((r-1)/2).
template <typename T>
Image<T> upsample_zero_insert(const Image<T>& x, int r) {
  Image<T> out(x.width * r, x.height * r);
  const int off = (r - 1) / 2;
  for (int y = 0; y < x.height; ++y)
    for (int x0 = 0; x0 < x.width; ++x0) out.at(r * x0 + off, r * y + off) = x.at(x0, y);
  return out;
}

template <typename T>
struct ForwardTrace {
  Image<T> xu;                    // zero-inserted input
  Image<T> u;                     // encoded input term
  std::vector<Image<T>> preact;   // a_k, k = 1..K
  std::vector<Image<T>> z;        // z_k, k = 1..K
};

// u = w_in * upsample(x); z_0 = 0; z_k = S_rho_k(z_{k-1} + w_k*u - v_k*z_{k-1}).
// The final block applies the one-sided operator so the output is non-negative.
template <typename T>
Image<T> net_forward(const Image<T>& x_lr, const NetParams<T>& p, ForwardTrace<T>* trace = nullptr) {
  p.validate();
  const int K = p.blocks();
  Image<T> xu = upsample_zero_insert(x_lr, p.upsample);
  Image<T> u = correlate_same(xu, p.w_in);
  if (trace) {
    trace->xu = std::move(xu);
    trace->preact.clear();
    trace->z.clear();
    trace->preact.reserve(K);
    trace->z.reserve(K);
  }
  Image<T> z(u.width, u.height);
  for (int k = 0; k < K; ++k) {
    const double rho = softplus(static_cast<double>(p.theta[k]));
    Image<T> a = correlate_same(u, p.w_blocks[k]);
    if (k > 0) {  // z_0 = 0 contributes nothing
      const Image<T> vz = correlate_same(z, p.v_blocks[k]);
      for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += z.data[i] - vz.data[i];
    }
    const bool one_sided = (k == K - 1);
    Image<T> zn(a.width, a.height);
    for (std::size_t i = 0; i < a.data.size(); ++i)
      zn.data[i] = static_cast<T>(soft_threshold(static_cast<double>(a.data[i]), rho, one_sided));
    if (trace) {
      trace->preact.push_back(std::move(a));
      trace->z.push_back(zn);
    }
    z = std::move(zn);
  }
  if (trace) trace->u = std::move(u);
  return z;
}

// ---------------------------------------------------------------------------
// Loss (squared l2 against the Gaussian-blurred target plus l1 sparsity)
// ---------------------------------------------------------------------------

template <typename T>
Image<T> loss_blur_kernel(double gauss_sigma_px) {
  const int radius = static_cast<int>(std::ceil(3.0 * gauss_sigma_px));
  return gaussian_kernel(gauss_sigma_px, radius, 1.0, true).cast<T>();
}

// ||f - G*y||_2^2 + lambda * ||f||_1 with G the unit-sum Gaussian kernel.
template <typename T>
double net_loss(const Image<T>& f, const Image<T>& y_target, double lambda,
                const Image<T>& blur_kernel) {
  if (!f.same_shape(y_target)) throw InvalidParameter("net_loss: shape mismatch");
  const Image<T> gy = correlate_same(y_target, blur_kernel);
  double l2 = 0, l1 = 0;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const double d = static_cast<double>(f.data[i]) - static_cast<double>(gy.data[i]);
    l2 += d * d;
    l1 += std::abs(static_cast<double>(f.data[i]));
  }
  return l2 + lambda * l1;
}

// ---------------------------------------------------------------------------
// Backward pass (exact reverse accumulation; subgradient 0 at kinks)
// ---------------------------------------------------------------------------

template <typename T>
double net_backward_sample(const Image<T>& x_lr, const Image<T>& y_target, const NetParams<T>& p,
                           double lambda, const Image<T>& blur_kernel, NetParams<T>& grads) {
  ForwardTrace<T> tr;
  const Image<T> f = net_forward(x_lr, p, &tr);
  const int K = p.blocks();
  const int R = p.kernel_radius();

  const Image<T> gy = correlate_same(y_target, blur_kernel);
  double l2 = 0, l1 = 0;
  Image<T> gz(f.width, f.height);
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const double fv = static_cast<double>(f.data[i]);
    const double d = fv - static_cast<double>(gy.data[i]);
    l2 += d * d;
    l1 += std::abs(fv);
    double g = 2.0 * d;
    if (fv > 0)
      g += lambda;
    else if (fv < 0)
      g -= lambda;
    gz.data[i] = static_cast<T>(g);
  }

  Image<T> gu(f.width, f.height);
  for (int k = K - 1; k >= 0; --k) {
    const double rho = softplus(static_cast<double>(p.theta[k]));
    const bool one_sided = (k == K - 1);
    const Image<T>& a = tr.preact[k];

    // gate the upstream gradient through the soft-threshold derivative
    Image<T> ga(a.width, a.height);
    double g_rho = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      const double av = static_cast<double>(a.data[i]);
      bool active;
      double sgn;
      if (one_sided) {
        active = av > rho;
        sgn = 1.0;
      } else {
        active = std::abs(av) > rho;
        sgn = av > 0 ? 1.0 : -1.0;
      }
      if (active) {
        ga.data[i] = gz.data[i];
        g_rho -= sgn * static_cast<double>(gz.data[i]);
      }
    }
    grads.theta[k] += static_cast<T>(g_rho * sigmoid(static_cast<double>(p.theta[k])));

    const Image<T> gw = correlate_kernel_grad(ga, tr.u, R);
    for (std::size_t i = 0; i < gw.data.size(); ++i) grads.w_blocks[k].data[i] += gw.data[i];

    const Image<T> gu_k = correlate_input_grad(ga, p.w_blocks[k]);
    for (std::size_t i = 0; i < gu.data.size(); ++i) gu.data[i] += gu_k.data[i];

    if (k > 0) {
      const Image<T>& z_prev = tr.z[k - 1];
      const Image<T> gv = correlate_kernel_grad(ga, z_prev, R);
      for (std::size_t i = 0; i < gv.data.size(); ++i) grads.v_blocks[k].data[i] -= gv.data[i];
      const Image<T> gvz = correlate_input_grad(ga, p.v_blocks[k]);
      for (std::size_t i = 0; i < gz.data.size(); ++i) gz.data[i] = ga.data[i] - gvz.data[i];
    }
  }

  const Image<T> gwin = correlate_kernel_grad(gu, tr.xu, R);
  for (std::size_t i = 0; i < gwin.data.size(); ++i) grads.w_in.data[i] += gwin.data[i];

  return l2 + lambda * l1;
}

struct BatchSample {
  Image<float> input_lr;
  Image<float> target_hr;
};

// Mean loss and mean gradients over a batch. Per-sample work may run in
// parallel; the reduction order over samples is fixed.
inline double net_backward_batch(const std::vector<BatchSample>& batch, const NetParams<float>& p,
                                 double lambda, const Image<float>& blur_kernel,
                                 std::vector<double>& flat_grads) {
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw InvalidParameter("net_backward_batch: empty batch");
  std::vector<NetParams<float>> slots(B, p.zeros_like());
  std::vector<double> losses(B, 0.0);
  parallel_for(B, [&](int i) {
    losses[i] = net_backward_sample(batch[i].input_lr, batch[i].target_hr, p, lambda, blur_kernel,
                                    slots[i]);
  });
  flat_grads.assign(p.n_params(), 0.0);
  double loss = 0;
  for (int i = 0; i < B; ++i) {
    const std::vector<double> g = slots[i].to_flat();
    for (std::size_t j = 0; j < g.size(); ++j) flat_grads[j] += g[j];
    loss += losses[i];
  }
  for (double& g : flat_grads) g /= B;
  return loss / B;
}

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Standard bias-corrected update; t advances by one per call.
inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw InvalidParameter("adam_step: size mismatch");
  state.t += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1 - b2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

// s x s crop of an image around (cx, cy).
inline Image<double> crop_window(const Image<double>& img, int cx, int cy, int s) {
  const int R = s / 2;
  Image<double> out(s, s);
  for (int dy = -R; dy <= R; ++dy)
    for (int dx = -R; dx <= R; ++dx) {
      const int x = cx + dx, y = cy + dy;
      if (img.in_bounds(x, y)) out.at(dx + R, dy + R) = img.at(x, y);
    }
  return out;
}

}  // namespace detail

// Kernels seeded so the untrained network performs K ISTA steps with mu = 1/L:
// w_in carries the cropped impulse response of mu*H^T (the encoded input term
// is then mu*H^T y), w_k starts as the identity kernel, v_k as the cropped
// impulse response of mu*H^T H, thresholds at softplus^-1(0.01).
inline NetParams<float> init_net_params(const NetConfig& net, const GridSpec& grid,
                                        double sigma_lr, Rng& rng) {
  net.validate();
  grid.validate();
  NetParams<float> p;
  p.upsample = grid.upsample;
  const int R = net.kernel_size / 2;

  if (net.psf_init) {
    PsfModel psf{sigma_lr, 1.0};
    const ForwardOp op(grid, psf);
    const double L = power_iteration_L(op, 50, rng.next_u64());
    const double mu = L > 0 ? 1.0 / L : 1.0;
    const int off = (grid.upsample - 1) / 2;

    const int lcx = grid.lr_width / 2, lcy = grid.lr_height / 2;
    Image<double> delta_lr(grid.lr_width, grid.lr_height);
    delta_lr.at(lcx, lcy) = 1.0;
    Image<double> win = detail::crop_window(op.apply_adjoint(delta_lr),
                                            grid.upsample * lcx + off, grid.upsample * lcy + off,
                                            net.kernel_size);
    for (double& v : win.data) v *= mu;

    // calibrate the encoder gain so a unit-amplitude source sits well above
    // the initial threshold: peak of u for a centered unit blob -> 0.3
    {
      Image<double> blob(grid.lr_width, grid.lr_height);
      const double inv2s2 = 1.0 / (2.0 * sigma_lr * sigma_lr);
      for (int y = 0; y < blob.height; ++y)
        for (int x = 0; x < blob.width; ++x) {
          const double dx = x - lcx, dy = y - lcy;
          blob.at(x, y) = std::exp(-(dx * dx + dy * dy) * inv2s2);
        }
      const Image<double> u_probe =
          correlate_same(upsample_zero_insert(blob, grid.upsample), win);
      const double peak = image_max(u_probe);
      if (peak > 0)
        for (double& v : win.data) v *= 0.3 / peak;
    }

    const int hcx = grid.hr_width() / 2, hcy = grid.hr_height() / 2;
    Image<double> delta_hr(grid.hr_width(), grid.hr_height());
    delta_hr.at(hcx, hcy) = 1.0;
    Image<double> vk = detail::crop_window(op.apply_adjoint(op.apply(delta_hr)), hcx, hcy,
                                           net.kernel_size);
    for (double& v : vk.data) v *= mu;

    Image<double> ident(net.kernel_size, net.kernel_size);
    ident.at(R, R) = 1.0;

    p.w_in = win.cast<float>();
    for (int k = 0; k < net.blocks; ++k) {
      p.w_blocks.push_back(ident.cast<float>());
      p.v_blocks.push_back(vk.cast<float>());
      p.theta.push_back(static_cast<float>(softplus_inv(net.init_rho)));
    }
  } else {
    auto rand_kernel = [&](double scale) {
      Image<double> k(net.kernel_size, net.kernel_size);
      for (double& v : k.data) v = scale * rng.normal();
      return k.cast<float>();
    };
    const double s = 1.0 / (net.kernel_size * net.kernel_size);
    p.w_in = rand_kernel(s);
    for (int k = 0; k < net.blocks; ++k) {
      p.w_blocks.push_back(rand_kernel(s));
      p.v_blocks.push_back(rand_kernel(s));
      p.theta.push_back(static_cast<float>(softplus_inv(net.init_rho)));
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoint (JSON manifest + little-endian f32 blob in manifest order)
// ---------------------------------------------------------------------------

struct Checkpoint {
  NetParams<float> params;
  GridSpec grid;
  NetConfig net;
  TrainConfig train;
  std::int64_t step = 0;
  std::uint64_t master_seed = 0;
};

inline nlohmann::json grid_to_json(const GridSpec& g) {
  return {{"lr_width", g.lr_width},
          {"lr_height", g.lr_height},
          {"lr_pixel_um", g.lr_pixel_um},
          {"upsample", g.upsample}};
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.lr_width = j.at("lr_width").get<int>();
  g.lr_height = j.at("lr_height").get<int>();
  g.lr_pixel_um = j.at("lr_pixel_um").get<double>();
  g.upsample = j.at("upsample").get<int>();
  g.validate();
  return g;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& manifest_path,
                            const std::string& blob_path) {
  c.params.validate();
  nlohmann::json tensors = nlohmann::json::array();
  const int s = c.params.kernel_size();
  tensors.push_back({{"name", "w_in"}, {"shape", {s, s}}});
  for (int k = 0; k < c.params.blocks(); ++k) {
    tensors.push_back({{"name", "w_" + std::to_string(k + 1)}, {"shape", {s, s}}});
    tensors.push_back({{"name", "v_" + std::to_string(k + 1)}, {"shape", {s, s}}});
    tensors.push_back({{"name", "theta_" + std::to_string(k + 1)}, {"shape", {1}}});
  }
  nlohmann::json manifest = {
      {"format", "ulm-checkpoint"},
      {"version", 1},
      {"dtype", "f32le"},
      {"blob", std::filesystem::path(blob_path).filename().string()},
      {"grid", grid_to_json(c.grid)},
      {"net",
       {{"blocks", c.net.blocks},
        {"kernel_size", c.net.kernel_size},
        {"psf_init", c.net.psf_init},
        {"init_sigma_lr", c.net.init_sigma_lr},
        {"init_rho", c.net.init_rho}}},
      {"train",
       {{"lambda", c.train.lambda},
        {"gauss_sigma_px", c.train.gauss_sigma_px},
        {"adam_beta1", c.train.adam_beta1},
        {"adam_beta2", c.train.adam_beta2},
        {"adam_eps", c.train.adam_eps},
        {"lr", c.train.lr},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"steps_per_epoch", c.train.steps_per_epoch},
        {"val_size", c.train.val_size},
        {"seed", c.train.seed}}},
      {"step", c.step},
      {"master_seed", c.master_seed},
      {"tensors", tensors}};
  atomic_write_text(manifest_path, manifest.dump(2) + "\n");

  atomic_write_file(blob_path, [&](std::ostream& os) {
    auto dump = [&](const float* ptr, std::size_t n) {
      os.write(reinterpret_cast<const char*>(ptr), static_cast<std::streamsize>(n * sizeof(float)));
    };
    dump(c.params.w_in.data.data(), c.params.w_in.size());
    for (int k = 0; k < c.params.blocks(); ++k) {
      dump(c.params.w_blocks[k].data.data(), c.params.w_blocks[k].size());
      dump(c.params.v_blocks[k].data.data(), c.params.v_blocks[k].size());
      dump(&c.params.theta[k], 1);
    }
  });
}

inline Checkpoint load_checkpoint(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open checkpoint manifest: " + manifest_path);
  nlohmann::json j = nlohmann::json::parse(is, nullptr, true);
  if (j.at("format") != "ulm-checkpoint" || j.at("version") != 1)
    throw IoError("unsupported checkpoint format: " + manifest_path);

  Checkpoint c;
  c.grid = grid_from_json(j.at("grid"));
  c.net.blocks = j.at("net").at("blocks").get<int>();
  c.net.kernel_size = j.at("net").at("kernel_size").get<int>();
  c.net.psf_init = j.at("net").at("psf_init").get<bool>();
  c.net.init_sigma_lr = j.at("net").at("init_sigma_lr").get<double>();
  c.net.init_rho = j.at("net").at("init_rho").get<double>();
  const auto& t = j.at("train");
  c.train.lambda = t.at("lambda").get<double>();
  c.train.gauss_sigma_px = t.at("gauss_sigma_px").get<double>();
  c.train.adam_beta1 = t.at("adam_beta1").get<double>();
  c.train.adam_beta2 = t.at("adam_beta2").get<double>();
  c.train.adam_eps = t.at("adam_eps").get<double>();
  c.train.lr = t.at("lr").get<double>();
  c.train.batch_size = t.at("batch_size").get<int>();
  c.train.epochs = t.at("epochs").get<int>();
  c.train.steps_per_epoch = t.at("steps_per_epoch").get<int>();
  c.train.val_size = t.at("val_size").get<int>();
  c.train.seed = t.at("seed").get<std::uint64_t>();
  c.step = j.at("step").get<std::int64_t>();
  c.master_seed = j.at("master_seed").get<std::uint64_t>();

  const std::string blob_path =
      (std::filesystem::path(manifest_path).parent_path() / j.at("blob").get<std::string>())
          .string();
  std::ifstream bs(blob_path, std::ios::binary);
  if (!bs) throw IoError("cannot open checkpoint blob: " + blob_path);

  const int s = c.net.kernel_size;
  c.params.upsample = c.grid.upsample;
  auto read_tensor = [&](std::size_t n) {
    std::vector<float> buf(n);
    bs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!bs) throw IoError("truncated checkpoint blob: " + blob_path);
    return buf;
  };
  auto read_kernel = [&]() {
    Image<float> k(s, s);
    auto buf = read_tensor(k.size());
    k.data.assign(buf.begin(), buf.end());
    return k;
  };
  c.params.w_in = read_kernel();
  for (int k = 0; k < c.net.blocks; ++k) {
    c.params.w_blocks.push_back(read_kernel());
    c.params.v_blocks.push_back(read_kernel());
    c.params.theta.push_back(read_tensor(1)[0]);
  }
  c.params.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Training (on-line synthesized batches, fixed substream layout)
// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainResult {
  Checkpoint ckpt;
  std::vector<EpochStats> curve;
};

// Substream layout: stream 0 = init, stream 1+v = validation sample v,
// stream 1000000+i = training sample i (global counter).
inline TrainResult train(const SampleDistributions& dist, const GridSpec& grid,
                         const NetConfig& net_cfg, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = nullptr) {
  dist.validate();
  grid.validate();
  net_cfg.validate();
  cfg.validate();

  const SeedSpec seeds{cfg.seed};
  Rng init_rng = seeds.stream(0);
  const double init_sigma =
      net_cfg.init_sigma_lr > 0 ? net_cfg.init_sigma_lr : 0.5 * (dist.sigma_min + dist.sigma_max);
  NetParams<float> params = init_net_params(net_cfg, grid, init_sigma, init_rng);
  const Image<float> blur = loss_blur_kernel<float>(cfg.gauss_sigma_px);

  auto make_sample = [&](std::uint64_t stream) {
    Rng rng = seeds.stream(stream);
    TrainingSample s = gen_sample(dist, grid, rng);
    BatchSample b;
    b.input_lr = s.input_lr.cast<float>();
    b.target_hr = s.target_hr.cast<float>();
    return b;
  };

  std::vector<BatchSample> val_set;
  val_set.reserve(cfg.val_size);
  for (int v = 0; v < cfg.val_size; ++v) val_set.push_back(make_sample(1 + v));

  auto val_loss = [&]() {
    std::vector<double> losses(val_set.size(), 0.0);
    parallel_for(static_cast<int>(val_set.size()), [&](int i) {
      const Image<float> f = net_forward(val_set[i].input_lr, params);
      losses[i] = net_loss(f, val_set[i].target_hr, cfg.lambda, blur);
    });
    double s = 0;
    for (double l : losses) s += l;
    return s / static_cast<double>(losses.size());
  };

  std::vector<double> flat = params.to_flat();
  AdamState adam(flat.size());
  std::vector<double> grads;
  std::uint64_t sample_counter = 0;

  TrainResult res;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_loss = 0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<BatchSample> batch;
      batch.reserve(cfg.batch_size);
      for (int b = 0; b < cfg.batch_size; ++b)
        batch.push_back(make_sample(1000000 + sample_counter++));
      const double loss = net_backward_batch(batch, params, cfg.lambda, blur, grads);
      if (!std::isfinite(loss)) throw NumericDivergence("train: non-finite loss");
      epoch_loss += loss;
      adam_step(flat, grads, adam, cfg);
      params.from_flat(flat);   // params live as f32
      flat = params.to_flat();  // adam continues from the stored values
      for (double v : flat)
        if (!std::isfinite(v)) throw NumericDivergence("train: non-finite parameters");
    }
    EpochStats st{epoch, epoch_loss / cfg.steps_per_epoch, val_loss()};
    res.curve.push_back(st);
    if (on_epoch) on_epoch(st);
  }

  res.ckpt.params = std::move(params);
  res.ckpt.grid = grid;
  res.ckpt.net = net_cfg;
  res.ckpt.train = cfg;
  res.ckpt.step = adam.t;
  res.ckpt.master_seed = cfg.seed;
  return res;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct InferConfig {
  double detect_threshold_rel = 0.1;  // fraction of the frame's output max
  double norm_percentile = 99.9;      // sequence normalization percentile
  double smooth_sigma_px = 1.0;       // pre-detection smoothing of the output map (0 = off)
  bool keep_frames = false;
};

struct InferResult {
  std::vector<Image<float>> outputs;  // per frame, only when keep_frames
  LocalizationSet locs;
  double norm_scale = 0;
};

inline double sequence_percentile(const FrameSequence& seq, double pct) {
  std::vector<double> all;
  all.reserve(seq.frames.size() * (seq.frames.empty() ? 0 : seq.frames[0].size()));
  for (const Frame& f : seq.frames) all.insert(all.end(), f.data.begin(), f.data.end());
  if (all.empty()) throw DegenerateInput("sequence_percentile: empty sequence");
  const auto idx = static_cast<std::size_t>(
      std::clamp(pct / 100.0, 0.0, 1.0) * static_cast<double>(all.size() - 1));
  std::nth_element(all.begin(), all.begin() + idx, all.end());
  return all[idx];
}

// Localizations from one network output frame: strict 8-neighbor local maxima
// above rel*max, refined by a 3x3 intensity-weighted centroid. An optional
// Gaussian pre-smoothing (matching the training loss blur) merges the split
// lobes a sparsity-driven output produces for one source.
inline void extract_net_localizations(const Image<float>& raw, int frame_index,
                                      const GridSpec& grid, double threshold_rel,
                                      LocalizationSet& locs, double smooth_sigma_px = 1.0) {
  Image<float> smoothed;
  const Image<float>* src = &raw;
  if (smooth_sigma_px > 0) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * smooth_sigma_px)));
    smoothed = correlate_same(raw, gaussian_kernel(smooth_sigma_px, radius, 1.0, true).cast<float>());
    src = &smoothed;
  }
  const Image<float>& out = *src;
  const float fmax = image_max(out);
  if (!(fmax > 0)) return;
  const auto thr = static_cast<float>(threshold_rel * fmax);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const float v = out.at(x, y);
      if (!(v > thr)) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx, ny = y + dy;
          if (out.in_bounds(nx, ny) && out.at(nx, ny) >= v) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      double wsum = 0, xsum = 0, ysum = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (!out.in_bounds(nx, ny)) continue;
          const double w = std::max(0.0f, out.at(nx, ny));
          wsum += w;
          xsum += w * nx;
          ysum += w * ny;
        }
      const double cx = wsum > 0 ? xsum / wsum : x;
      const double cy = wsum > 0 ? ysum / wsum : y;
      locs.push_back({frame_index, grid.hr_px_to_um(cx), grid.hr_px_to_um(cy),
                      static_cast<double>(v)});
    }
}

// Forward pass per frame over a preprocessed sequence. Frames are normalized
// by the sequence's 99.9th-percentile intensity and clamped to [0,1], then
// passed through the network and localized.
inline InferResult infer_sequence(const FrameSequence& seq, const Checkpoint& ckpt,
                                  const InferConfig& cfg = {}) {
  seq.validate();
  if (seq.width() != ckpt.grid.lr_width || seq.height() != ckpt.grid.lr_height)
    throw InvalidParameter("infer_sequence: frames do not match checkpoint grid");

  InferResult res;
  if (seq.frames.empty()) return res;
  res.norm_scale = sequence_percentile(seq, cfg.norm_percentile);
  if (!(res.norm_scale > 0)) return res;  // no signal anywhere

  const int n = seq.n_frames();
  std::vector<LocalizationSet> per_frame(n);
  if (cfg.keep_frames) res.outputs.resize(n);
  parallel_for(n, [&](int t) {
    Image<float> x(seq.frames[t].width, seq.frames[t].height);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      x.data[i] = static_cast<float>(std::clamp(seq.frames[t].data[i] / res.norm_scale, 0.0, 1.0));
    Image<float> out = net_forward(x, ckpt.params);
    extract_net_localizations(out, t, ckpt.grid, cfg.detect_threshold_rel, per_frame[t],
                              cfg.smooth_sigma_px);
    if (cfg.keep_frames) res.outputs[t] = std::move(out);
  });
  for (int t = 0; t < n; ++t)
    res.locs.insert(res.locs.end(), per_frame[t].begin(), per_frame[t].end());
  return res;
}

}  // namespace ulm
