#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "ulm/classic.hpp"
#include "ulm/grid.hpp"
#include "ulm/ista.hpp"
#include "ulm/preprocess.hpp"
#include "ulm/psf.hpp"
#include "ulm/simgen.hpp"
#include "ulm/unrolled.hpp"

namespace ulm {

inline constexpr const char* kVersion = "1.0.0";

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidParameter("config: section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known)
      throw InvalidParameter("config: unknown key '" + it.key() + "' in section '" + section + "'");
  }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// Fully-resolved run configuration; every field has a declared default and the
// resolved values are echoed alongside every artifact. Unknown keys are
// rejected.
struct PipelineConfig {
  GridSpec grid;
  PsfModel psf;
  SampleDistributions simgen;
  double sim_frame_rate_hz = 25.0;
  PreprocessConfig preprocess;
  IstaConfig ista;
  NetConfig net;
  TrainConfig train;
  InferConfig infer;
  ClassicConfig classic;
  double eval_tolerance_um = 31.25;  // 1 HR pixel
  double render_gamma = 0.5;
  double render_blur_sigma_px = 0.0;
  std::string accumulate_mode = "count";  // or "intensity"

  AccumulateMode accumulate() const {
    if (accumulate_mode == "count") return AccumulateMode::Count;
    if (accumulate_mode == "intensity") return AccumulateMode::IntensitySum;
    throw InvalidParameter("config: accumulate_mode must be 'count' or 'intensity'");
  }

  void validate() const {
    grid.validate();
    psf.validate();
    simgen.validate();
    ista.validate();
    net.validate();
    train.validate();
    classic.validate();
    accumulate();
    if (eval_tolerance_um < 0) throw InvalidParameter("config: negative eval tolerance");
    if (sim_frame_rate_hz <= 0) throw InvalidParameter("config: frame rate must be > 0");
  }
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  return {
      {"grid",
       {{"lr_width", c.grid.lr_width},
        {"lr_height", c.grid.lr_height},
        {"lr_pixel_um", c.grid.lr_pixel_um},
        {"upsample", c.grid.upsample}}},
      {"psf", {{"sigma_lr", c.psf.sigma_lr}, {"amplitude", c.psf.amplitude}}},
      {"simgen",
       {{"n_min", c.simgen.n_min},
        {"n_max", c.simgen.n_max},
        {"intensity_min", c.simgen.a_min},
        {"intensity_max", c.simgen.a_max},
        {"sigma_lr_min", c.simgen.sigma_min},
        {"sigma_lr_max", c.simgen.sigma_max},
        {"noise_std_min", c.simgen.noise_min},
        {"noise_std_max", c.simgen.noise_max},
        {"background_min", c.simgen.bg_min},
        {"background_max", c.simgen.bg_max},
        {"frame_rate_hz", c.sim_frame_rate_hz}}},
      {"preprocess",
       {{"roi", {c.preprocess.roi.x0, c.preprocess.roi.y0, c.preprocess.roi.width,
                 c.preprocess.roi.height}},
        {"corr_threshold", c.preprocess.corr_threshold},
        {"min_len", c.preprocess.min_len},
        {"svd_low", c.preprocess.svd_low},
        {"svd_high", c.preprocess.svd_high},
        {"washout_trim", c.preprocess.washout_trim},
        {"anchored_subsequences", c.preprocess.anchored_subsequences}}},
      {"ista",
       {{"lambda", c.ista.lambda},
        {"mu", c.ista.mu},
        {"max_iters", c.ista.max_iters},
        {"tol", c.ista.tol},
        {"nonneg", c.ista.nonneg},
        {"power_iters", c.ista.power_iters}}},
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
      {"infer",
       {{"detect_threshold_rel", c.infer.detect_threshold_rel},
        {"norm_percentile", c.infer.norm_percentile},
        {"smooth_sigma_px", c.infer.smooth_sigma_px}}},
      {"classic",
       {{"detect_threshold_rel", c.classic.detect_threshold_rel},
        {"min_separation_px", c.classic.min_separation_px},
        {"window_radius_px", c.classic.window_radius_px}}},
      {"evaluate", {{"tolerance_um", c.eval_tolerance_um}}},
      {"render",
       {{"gamma", c.render_gamma},
        {"blur_sigma_px", c.render_blur_sigma_px},
        {"accumulate_mode", c.accumulate_mode}}}};
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::get_if;
  PipelineConfig c;
  check_keys(j, "<root>", {"grid", "psf", "simgen", "preprocess", "ista", "net", "train", "infer",
                           "classic", "evaluate", "render"});
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    check_keys(g, "grid", {"lr_width", "lr_height", "lr_pixel_um", "upsample"});
    get_if(g, "lr_width", c.grid.lr_width);
    get_if(g, "lr_height", c.grid.lr_height);
    get_if(g, "lr_pixel_um", c.grid.lr_pixel_um);
    get_if(g, "upsample", c.grid.upsample);
  }
  if (j.contains("psf")) {
    const auto& p = j.at("psf");
    check_keys(p, "psf", {"sigma_lr", "amplitude"});
    get_if(p, "sigma_lr", c.psf.sigma_lr);
    get_if(p, "amplitude", c.psf.amplitude);
  }
  if (j.contains("simgen")) {
    const auto& s = j.at("simgen");
    check_keys(s, "simgen",
               {"n_min", "n_max", "intensity_min", "intensity_max", "sigma_lr_min", "sigma_lr_max",
                "noise_std_min", "noise_std_max", "background_min", "background_max",
                "frame_rate_hz"});
    get_if(s, "n_min", c.simgen.n_min);
    get_if(s, "n_max", c.simgen.n_max);
    get_if(s, "intensity_min", c.simgen.a_min);
    get_if(s, "intensity_max", c.simgen.a_max);
    get_if(s, "sigma_lr_min", c.simgen.sigma_min);
    get_if(s, "sigma_lr_max", c.simgen.sigma_max);
    get_if(s, "noise_std_min", c.simgen.noise_min);
    get_if(s, "noise_std_max", c.simgen.noise_max);
    get_if(s, "background_min", c.simgen.bg_min);
    get_if(s, "background_max", c.simgen.bg_max);
    get_if(s, "frame_rate_hz", c.sim_frame_rate_hz);
  }
  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    check_keys(p, "preprocess",
               {"roi", "corr_threshold", "min_len", "svd_low", "svd_high", "washout_trim",
                "anchored_subsequences"});
    if (p.contains("roi")) {
      const auto& r = p.at("roi");
      if (!r.is_array() || r.size() != 4)
        throw InvalidParameter("config: preprocess.roi must be [x0, y0, width, height]");
      c.preprocess.roi = {r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
    }
    get_if(p, "corr_threshold", c.preprocess.corr_threshold);
    get_if(p, "min_len", c.preprocess.min_len);
    get_if(p, "svd_low", c.preprocess.svd_low);
    get_if(p, "svd_high", c.preprocess.svd_high);
    get_if(p, "washout_trim", c.preprocess.washout_trim);
    get_if(p, "anchored_subsequences", c.preprocess.anchored_subsequences);
  }
  if (j.contains("ista")) {
    const auto& i = j.at("ista");
    check_keys(i, "ista", {"lambda", "mu", "max_iters", "tol", "nonneg", "power_iters"});
    get_if(i, "lambda", c.ista.lambda);
    get_if(i, "mu", c.ista.mu);
    get_if(i, "max_iters", c.ista.max_iters);
    get_if(i, "tol", c.ista.tol);
    get_if(i, "nonneg", c.ista.nonneg);
    get_if(i, "power_iters", c.ista.power_iters);
  }
  if (j.contains("net")) {
    const auto& n = j.at("net");
    check_keys(n, "net", {"blocks", "kernel_size", "psf_init", "init_sigma_lr", "init_rho"});
    get_if(n, "blocks", c.net.blocks);
    get_if(n, "kernel_size", c.net.kernel_size);
    get_if(n, "psf_init", c.net.psf_init);
    get_if(n, "init_sigma_lr", c.net.init_sigma_lr);
    get_if(n, "init_rho", c.net.init_rho);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"lambda", "gauss_sigma_px", "adam_beta1", "adam_beta2", "adam_eps", "lr",
                "batch_size", "epochs", "steps_per_epoch", "val_size", "seed"});
    get_if(t, "lambda", c.train.lambda);
    get_if(t, "gauss_sigma_px", c.train.gauss_sigma_px);
    get_if(t, "adam_beta1", c.train.adam_beta1);
    get_if(t, "adam_beta2", c.train.adam_beta2);
    get_if(t, "adam_eps", c.train.adam_eps);
    get_if(t, "lr", c.train.lr);
    get_if(t, "batch_size", c.train.batch_size);
    get_if(t, "epochs", c.train.epochs);
    get_if(t, "steps_per_epoch", c.train.steps_per_epoch);
    get_if(t, "val_size", c.train.val_size);
    get_if(t, "seed", c.train.seed);
  }
  if (j.contains("infer")) {
    const auto& i = j.at("infer");
    check_keys(i, "infer", {"detect_threshold_rel", "norm_percentile", "smooth_sigma_px"});
    get_if(i, "detect_threshold_rel", c.infer.detect_threshold_rel);
    get_if(i, "norm_percentile", c.infer.norm_percentile);
    get_if(i, "smooth_sigma_px", c.infer.smooth_sigma_px);
  }
  if (j.contains("classic")) {
    const auto& cl = j.at("classic");
    check_keys(cl, "classic", {"detect_threshold_rel", "min_separation_px", "window_radius_px"});
    get_if(cl, "detect_threshold_rel", c.classic.detect_threshold_rel);
    get_if(cl, "min_separation_px", c.classic.min_separation_px);
    get_if(cl, "window_radius_px", c.classic.window_radius_px);
  }
  if (j.contains("evaluate")) {
    const auto& e = j.at("evaluate");
    check_keys(e, "evaluate", {"tolerance_um"});
    get_if(e, "tolerance_um", c.eval_tolerance_um);
  }
  if (j.contains("render")) {
    const auto& r = j.at("render");
    check_keys(r, "render", {"gamma", "blur_sigma_px", "accumulate_mode"});
    get_if(r, "gamma", c.render_gamma);
    get_if(r, "blur_sigma_px", c.render_blur_sigma_px);
    get_if(r, "accumulate_mode", c.accumulate_mode);
  }
  c.validate();
  return c;
}

// Desk-scale training preset: 32x32 LR at r=4, K=9, batch 16, 100 epochs x 50
// steps, PSF sigma narrowed so the 11x11 kernels cover its support.
inline void apply_small_preset(PipelineConfig& c) {
  c.grid.lr_width = 32;
  c.grid.lr_height = 32;
  c.grid.lr_pixel_um = 125.0;
  c.grid.upsample = 4;
  c.simgen.sigma_min = 0.7;
  c.simgen.sigma_max = 1.0;
  c.train.batch_size = 16;
  c.train.epochs = 100;
  c.train.steps_per_epoch = 50;
  c.train.val_size = 64;
}

// FNV-1a 64 over the canonical JSON dump.
inline std::string config_hash(const PipelineConfig& c) {
  const std::string dump = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ulm
