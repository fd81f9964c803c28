// ulm — super-resolution ultrasound localization microscopy pipeline CLI.
// Subcommands: simulate, preprocess, train, localize, evaluate, render,
// svd-spectrum. Every run writes a .run.json provenance record next to its
// primary output; all artifacts are written atomically.

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ulm/classic.hpp"
#include "ulm/config.hpp"
#include "ulm/io.hpp"
#include "ulm/ista.hpp"
#include "ulm/metrics.hpp"
#include "ulm/parallel.hpp"
#include "ulm/preprocess.hpp"
#include "ulm/render.hpp"
#include "ulm/simgen.hpp"
#include "ulm/unrolled.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;

ulm::PipelineConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream is(path);
  if (!is) throw ulm::IoError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ulm::InvalidParameter("config parse error in " + path + ": " + e.what());
  }
  return ulm::config_from_json(j);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class RunRecord {
 public:
  RunRecord(std::string subcommand, const ulm::PipelineConfig& cfg)
      : subcommand_(std::move(subcommand)), cfg_(cfg), start_(std::chrono::steady_clock::now()) {}

  void add_output(const std::string& path) { outputs_.push_back(path); }

  void write(const std::string& primary_output) const {
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
            .count();
    json j = {{"tool", "ulm"},
              {"version", ulm::kVersion},
              {"subcommand", subcommand_},
              {"config_hash", ulm::config_hash(cfg_)},
              {"seed", cfg_.train.seed},
              {"config", ulm::config_to_json(cfg_)},
              {"outputs", outputs_},
              {"elapsed_ms", ms},
              {"timestamp_utc", utc_timestamp()}};
    ulm::atomic_write_text(primary_output + ".run.json", j.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  const ulm::PipelineConfig& cfg_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Phantom JSON
// ---------------------------------------------------------------------------

ulm::VesselPhantom phantom_from_json(const json& j, const ulm::GridSpec& grid, ulm::Rng& tissue_rng) {
  ulm::detail::check_keys(j, "phantom",
                          {"vessels", "tissue", "motion", "ceus_tissue_residual", "ceus_noise_std",
                           "bmode_noise_std", "bubble_amp"});
  ulm::VesselPhantom ph;
  if (j.contains("vessels")) {
    for (const auto& vj : j.at("vessels")) {
      ulm::detail::check_keys(vj, "phantom.vessels[]",
                              {"polyline_um", "radius_um", "flow_speed_um_per_frame", "bubble_rate"});
      ulm::Vessel v;
      for (const auto& p : vj.at("polyline_um"))
        v.polyline_um.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      v.radius_um = vj.at("radius_um").get<double>();
      v.flow_speed_um_per_frame = vj.at("flow_speed_um_per_frame").get<double>();
      v.bubble_rate = vj.at("bubble_rate").get<double>();
      ph.vessels.push_back(std::move(v));
    }
  }
  if (j.contains("tissue")) {
    const auto& tj = j.at("tissue");
    ulm::detail::check_keys(tj, "phantom.tissue", {"level", "smooth_sigma_px"});
    const double level = tj.value("level", 1.0);
    const double smooth = tj.value("smooth_sigma_px", 2.0);
    ph.tissue_background = ulm::make_tissue(grid, tissue_rng, smooth, level);
  }
  if (j.contains("motion")) {
    const auto& mj = j.at("motion");
    ulm::detail::check_keys(mj, "phantom.motion",
                            {"mode", "dx_um_per_frame", "dy_um_per_frame", "amp_x_um", "amp_y_um",
                             "period_frames", "values"});
    const std::string mode = mj.value("mode", "none");
    if (mode == "none") {
      ph.motion.mode = ulm::MotionMode::None;
    } else if (mode == "drift") {
      ph.motion.mode = ulm::MotionMode::Drift;
      ph.motion.dx_um_per_frame = mj.value("dx_um_per_frame", 0.0);
      ph.motion.dy_um_per_frame = mj.value("dy_um_per_frame", 0.0);
    } else if (mode == "sinusoidal") {
      ph.motion.mode = ulm::MotionMode::Sinusoidal;
      ph.motion.amp_x_um = mj.value("amp_x_um", 0.0);
      ph.motion.amp_y_um = mj.value("amp_y_um", 0.0);
      ph.motion.period_frames = mj.value("period_frames", 100.0);
    } else if (mode == "list") {
      ph.motion.mode = ulm::MotionMode::List;
      for (const auto& p : mj.at("values"))
        ph.motion.list.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    } else {
      throw ulm::InvalidParameter("phantom.motion.mode must be none|drift|sinusoidal|list");
    }
  }
  ph.ceus_tissue_residual = j.value("ceus_tissue_residual", 0.0);
  ph.ceus_noise_std = j.value("ceus_noise_std", 0.0);
  ph.bmode_noise_std = j.value("bmode_noise_std", 0.0);
  if (j.contains("bubble_amp")) {
    ph.bubble_amp_min = j.at("bubble_amp").at(0).get<double>();
    ph.bubble_amp_max = j.at("bubble_amp").at(1).get<double>();
  }
  return ph;
}

// Two parallel vertical vessels around the grid center, in a sparse regime
// (a handful of bubbles live per frame).
ulm::VesselPhantom two_vessel_preset(const ulm::GridSpec& grid, double separation_um,
                                     double bubble_rate) {
  ulm::VesselPhantom ph;
  const double cx = grid.width_um() / 2;
  const double y0 = grid.height_um() * 0.1, y1 = grid.height_um() * 0.9;
  for (int s : {-1, 1}) {
    ulm::Vessel v;
    const double x = cx + s * separation_um / 2;
    v.polyline_um = {{x, y0}, {x, y1}};
    v.radius_um = 5.0;
    v.flow_speed_um_per_frame = 150.0;
    v.bubble_rate = bubble_rate;
    ph.vessels.push_back(v);
  }
  return ph;
}

// Localizations from per-frame HR recovery maps (shared by net and ista paths).
void write_report_json(const std::string& path, const ulm::MatchReport& rep) {
  json j = {{"tolerance_um", rep.tolerance_um},
            {"true_positives", rep.true_positives},
            {"false_positives", rep.false_positives},
            {"false_negatives", rep.false_negatives},
            {"precision", rep.precision},
            {"recall", rep.recall},
            {"f1", rep.f1},
            {"rmse_um", rep.rmse_um}};
  ulm::atomic_write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config_path, phantom_path, out_prefix = "phantom";
  int n_frames = 1000;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double separation_um = 62.5;
  double bubble_rate = 0.2;
};

int cmd_simulate(const SimulateArgs& a) {
  ulm::PipelineConfig cfg = load_config(a.config_path);
  if (a.seed_set) cfg.train.seed = a.seed;
  cfg.validate();
  RunRecord rec("simulate", cfg);

  const ulm::SeedSpec seeds{cfg.train.seed};
  ulm::Rng tissue_rng = seeds.stream(9000);
  ulm::VesselPhantom ph;
  if (!a.phantom_path.empty()) {
    std::ifstream is(a.phantom_path);
    if (!is) throw ulm::IoError("cannot open phantom: " + a.phantom_path);
    json pj;
    try {
      pj = json::parse(is);
    } catch (const json::exception& e) {
      throw ulm::InvalidParameter("phantom parse error: " + std::string(e.what()));
    }
    ph = phantom_from_json(pj, cfg.grid, tissue_rng);
  } else {
    ph = two_vessel_preset(cfg.grid, a.separation_um, a.bubble_rate);
  }

  ulm::Rng rng = seeds.stream(9001);
  ulm::PhantomResult res = ulm::gen_phantom_sequence(ph, cfg.grid, a.n_frames, cfg.psf, rng);
  res.ceus.frame_rate_hz = res.bmode.frame_rate_hz = cfg.sim_frame_rate_hz;

  const std::string ceus_path = a.out_prefix + "_ceus.urf1";
  const std::string bmode_path = a.out_prefix + "_bmode.urf1";
  const std::string truth_path = a.out_prefix + "_truth.csv";
  ulm::write_urf1(ceus_path, res.ceus);
  ulm::write_urf1(bmode_path, res.bmode);
  ulm::write_localizations_csv(truth_path, res.truth);
  rec.add_output(ceus_path);
  rec.add_output(bmode_path);
  rec.add_output(truth_path);
  rec.write(ceus_path);
  std::cout << "simulate: " << a.n_frames << " frames, " << res.truth.size()
            << " truth localizations -> " << ceus_path << "\n";
  return kExitOk;
}

struct PreprocessArgs {
  std::string config_path, in_path, bmode_path, out_path = "filtered.urf1", report_path;
  std::vector<int> roi;
  double corr_threshold = -1;
  int min_len = -1, svd_low = -1, svd_high = -1;
  bool no_washout = false, anchored = false;
};

int cmd_preprocess(const PreprocessArgs& a) {
  ulm::PipelineConfig cfg = load_config(a.config_path);
  if (!a.roi.empty()) {
    if (a.roi.size() != 4) throw ulm::InvalidParameter("--roi needs x0,y0,w,h");
    cfg.preprocess.roi = {a.roi[0], a.roi[1], a.roi[2], a.roi[3]};
  }
  if (a.corr_threshold >= 0) cfg.preprocess.corr_threshold = a.corr_threshold;
  if (a.min_len >= 0) cfg.preprocess.min_len = a.min_len;
  if (a.svd_low >= 0) cfg.preprocess.svd_low = a.svd_low;
  if (a.svd_high >= 0) cfg.preprocess.svd_high = a.svd_high;
  if (a.no_washout) cfg.preprocess.washout_trim = false;
  if (a.anchored) cfg.preprocess.anchored_subsequences = true;
  cfg.validate();
  RunRecord rec("preprocess", cfg);

  const ulm::FrameSequence ceus = ulm::read_urf1(a.in_path);
  const ulm::FrameSequence bmode = ulm::read_urf1(a.bmode_path);
  ulm::PreprocessResult res = ulm::preprocess_run(ceus, bmode, cfg.preprocess);

  ulm::write_urf1(a.out_path, res.filtered);
  rec.add_output(a.out_path);

  json ranges = json::array();
  for (const auto& [s, e] : res.report.subsequences) ranges.push_back({s, e});
  json shifts = json::array();
  for (const auto& s : res.report.shifts) shifts.push_back({s[0], s[1]});
  json rj = {{"washout_start", res.report.washout_start},
             {"subsequences", ranges},
             {"selected", {res.report.selected.first, res.report.selected.second}},
             {"shifts", shifts},
             {"singular_values", res.report.singular_values},
             {"registration_skipped_flat", res.report.registration_skipped_flat}};
  const std::string report_path = a.report_path.empty() ? a.out_path + ".report.json" : a.report_path;
  ulm::atomic_write_text(report_path, rj.dump(2) + "\n");
  rec.add_output(report_path);
  rec.write(a.out_path);
  std::cout << "preprocess: selected frames [" << res.report.selected.first << ", "
            << res.report.selected.second << "] -> " << a.out_path << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config_path, out_path = "ckpt.json", loss_csv_path;
  bool small = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = -1, steps = -1, batch = -1;
  double lr = -1;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  ulm::PipelineConfig cfg = load_config(a.config_path);
  if (a.small) ulm::apply_small_preset(cfg);
  if (a.seed_set) cfg.train.seed = a.seed;
  if (a.epochs > 0) cfg.train.epochs = a.epochs;
  if (a.steps > 0) cfg.train.steps_per_epoch = a.steps;
  if (a.batch > 0) cfg.train.batch_size = a.batch;
  if (a.lr >= 0) cfg.train.lr = a.lr;
  cfg.validate();
  RunRecord rec("train", cfg);

  std::vector<ulm::EpochStats> curve;
  ulm::TrainResult res =
      ulm::train(cfg.simgen, cfg.grid, cfg.net, cfg.train, [&](const ulm::EpochStats& s) {
        if (!a.quiet)
          std::cout << "epoch " << s.epoch << "/" << cfg.train.epochs << " train=" << s.train_loss
                    << " val=" << s.val_loss << "\n";
      });

  const std::string blob_path =
      (std::filesystem::path(a.out_path).parent_path() /
       (std::filesystem::path(a.out_path).stem().string() + ".bin"))
          .string();
  ulm::save_checkpoint(res.ckpt, a.out_path, blob_path);
  rec.add_output(a.out_path);
  rec.add_output(blob_path);

  const std::string csv_path = a.loss_csv_path.empty() ? a.out_path + ".loss.csv" : a.loss_csv_path;
  ulm::atomic_write_file(csv_path, [&](std::ostream& os) {
    os << "epoch,train_loss,val_loss\n";
    for (const auto& s : res.curve)
      os << s.epoch << ',' << ulm::format_g17(s.train_loss) << ',' << ulm::format_g17(s.val_loss)
         << '\n';
  });
  rec.add_output(csv_path);
  rec.write(a.out_path);
  std::cout << "train: final val loss " << res.curve.back().val_loss << " -> " << a.out_path
            << "\n";
  return kExitOk;
}

struct LocalizeArgs {
  std::string config_path, method = "net", in_path, ckpt_path, out_path = "locs.csv";
  double detect_threshold = -1;
  double lambda = -1, mu = -1;
  int iters = -1;
};

int cmd_localize(const LocalizeArgs& a) {
  ulm::PipelineConfig cfg = load_config(a.config_path);
  if (a.detect_threshold >= 0) cfg.infer.detect_threshold_rel = a.detect_threshold;
  if (a.lambda >= 0) cfg.ista.lambda = a.lambda;
  if (a.mu >= 0) cfg.ista.mu = a.mu;
  if (a.iters > 0) cfg.ista.max_iters = a.iters;
  cfg.validate();
  RunRecord rec("localize", cfg);

  const ulm::FrameSequence seq = ulm::read_urf1(a.in_path);
  ulm::LocalizationSet locs;

  if (a.method == "net") {
    if (a.ckpt_path.empty()) throw ulm::InvalidParameter("localize --method net needs --ckpt");
    const ulm::Checkpoint ckpt = ulm::load_checkpoint(a.ckpt_path);
    locs = ulm::infer_sequence(seq, ckpt, cfg.infer).locs;
  } else if (a.method == "classic") {
    ulm::GridSpec grid = cfg.grid;
    grid.lr_width = seq.width();
    grid.lr_height = seq.height();
    grid.lr_pixel_um = seq.pixel_um;
    const int n = seq.n_frames();
    std::vector<ulm::LocalizationSet> per(n);
    ulm::parallel_for(n, [&](int t) {
      per[t] = ulm::classic_localize_frame(seq.frames[t], t, cfg.classic, grid);
    });
    for (const auto& p : per) locs.insert(locs.end(), p.begin(), p.end());
  } else if (a.method == "ista") {
    ulm::GridSpec grid = cfg.grid;
    grid.lr_width = seq.width();
    grid.lr_height = seq.height();
    grid.lr_pixel_um = seq.pixel_um;
    const ulm::ForwardOp op(grid, cfg.psf);
    ulm::IstaConfig icfg = cfg.ista;
    if (icfg.mu <= 0) icfg.mu = 0.9 / ulm::power_iteration_L(op, icfg.power_iters);
    const double scale = ulm::sequence_percentile(seq, cfg.infer.norm_percentile);
    const int n = seq.n_frames();
    std::vector<ulm::LocalizationSet> per(n);
    ulm::parallel_for(n, [&](int t) {
      ulm::Frame x = seq.frames[t];
      if (scale > 0)
        for (double& v : x.data) v = std::clamp(v / scale, 0.0, 1.0);
      const ulm::IstaResult r = ulm::ista_solve(x, op, icfg);
      ulm::extract_net_localizations(r.x.cast<float>(), t, grid, cfg.infer.detect_threshold_rel,
                                     per[t], cfg.infer.smooth_sigma_px);
    });
    for (const auto& p : per) locs.insert(locs.end(), p.begin(), p.end());
  } else {
    throw ulm::InvalidParameter("localize: method must be net|classic|ista");
  }

  ulm::write_localizations_csv(a.out_path, locs);
  rec.add_output(a.out_path);
  rec.write(a.out_path);
  std::cout << "localize (" << a.method << "): " << locs.size() << " localizations -> "
            << a.out_path << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string config_path, pred_path, truth_path, out_path = "report.json";
  double tolerance_um = -1;
};

int cmd_evaluate(const EvaluateArgs& a) {
  ulm::PipelineConfig cfg = load_config(a.config_path);
  if (a.tolerance_um >= 0) cfg.eval_tolerance_um = a.tolerance_um;
  cfg.validate();
  RunRecord rec("evaluate", cfg);

  const ulm::LocalizationSet pred = ulm::read_localizations_csv(a.pred_path);
  const ulm::LocalizationSet truth = ulm::read_localizations_csv(a.truth_path);
  const ulm::MatchReport rep = ulm::match_localizations(pred, truth, cfg.eval_tolerance_um);
  write_report_json(a.out_path, rep);
  rec.add_output(a.out_path);
  rec.write(a.out_path);
  std::cout << "evaluate: precision=" << rep.precision << " recall=" << rep.recall
            << " rmse_um=" << rep.rmse_um << " -> " << a.out_path << "\n";
  return kExitOk;
}

struct RenderArgs {
  std::string config_path, locs_path, mean_of_path, out_path = "map.pgm", probe_out;
  double gamma = -1, blur = -1;
  std::string mode;
  std::vector<double> probe;
  double probe_band_um = 0;
};

int cmd_render(const RenderArgs& a) {
  ulm::PipelineConfig cfg = load_config(a.config_path);
  if (a.gamma > 0) cfg.render_gamma = a.gamma;
  if (a.blur >= 0) cfg.render_blur_sigma_px = a.blur;
  if (!a.mode.empty()) cfg.accumulate_mode = a.mode;
  cfg.validate();
  RunRecord rec("render", cfg);

  ulm::Frame map;
  double pixel_um = 0;
  if (!a.locs_path.empty()) {
    const ulm::LocalizationSet locs = ulm::read_localizations_csv(a.locs_path);
    const ulm::AccumulateResult acc = ulm::accumulate(locs, cfg.grid, cfg.accumulate());
    map = acc.image;
    pixel_um = cfg.grid.hr_pixel_um();
    if (acc.dropped_oob > 0)
      std::cerr << "render: dropped " << acc.dropped_oob << " out-of-bounds localizations\n";
  } else if (!a.mean_of_path.empty()) {
    const ulm::FrameSequence seq = ulm::read_urf1(a.mean_of_path);
    if (seq.frames.empty()) throw ulm::DegenerateInput("render: empty sequence");
    map = ulm::Frame(seq.width(), seq.height());
    for (const ulm::Frame& f : seq.frames)
      for (std::size_t i = 0; i < map.data.size(); ++i) map.data[i] += f.data[i];
    for (double& v : map.data) v = std::max(0.0, v / seq.n_frames());
    pixel_um = seq.pixel_um;
  } else {
    throw ulm::InvalidParameter("render: need --locs or --mean-of");
  }

  const ulm::Image<std::uint16_t> img =
      ulm::render_map(map, cfg.render_gamma, cfg.render_blur_sigma_px);
  ulm::write_pgm16(a.out_path, img);
  rec.add_output(a.out_path);

  if (!a.probe.empty()) {
    if (a.probe.size() != 4) throw ulm::InvalidParameter("--probe needs x0,y0,x1,y1 (um)");
    const ulm::ProbeSegment seg{a.probe[0], a.probe[1], a.probe[2], a.probe[3]};
    const ulm::ProbeResult pr = ulm::resolution_probe(map, pixel_um, seg, 0, a.probe_band_um);
    const std::string ppath = a.probe_out.empty() ? a.out_path + ".profile.csv" : a.probe_out;
    ulm::atomic_write_file(ppath, [&](std::ostream& os) {
      os << "t_um,value\n";
      for (std::size_t i = 0; i < pr.t_um.size(); ++i)
        os << ulm::format_g17(pr.t_um[i]) << ',' << ulm::format_g17(pr.value[i]) << '\n';
    });
    rec.add_output(ppath);
    json peaks = json::array();
    for (const auto& p : pr.peaks) peaks.push_back({{"t_um", p.t_um}, {"value", p.value}});
    json stats = {{"peaks", peaks}, {"dip_value", pr.dip_value}, {"dip_ratio", pr.dip_ratio}};
    ulm::atomic_write_text(ppath + ".stats.json", stats.dump(2) + "\n");
    rec.add_output(ppath + ".stats.json");
    std::cout << "render: probe peaks=" << pr.peaks.size() << " dip_ratio=" << pr.dip_ratio << "\n";
  }
  rec.write(a.out_path);
  std::cout << "render: -> " << a.out_path << "\n";
  return kExitOk;
}

struct SpectrumArgs {
  std::string config_path, in_path, out_path = "spectrum.csv";
};

int cmd_spectrum(const SpectrumArgs& a) {
  ulm::PipelineConfig cfg = load_config(a.config_path);
  cfg.validate();
  RunRecord rec("svd-spectrum", cfg);
  const ulm::FrameSequence seq = ulm::read_urf1(a.in_path);
  const std::vector<double> sv = ulm::svd_spectrum(seq);
  ulm::atomic_write_file(a.out_path, [&](std::ostream& os) {
    os << "index,singular_value\n";
    for (std::size_t i = 0; i < sv.size(); ++i)
      os << i << ',' << ulm::format_g17(sv[i]) << '\n';
  });
  rec.add_output(a.out_path);
  rec.write(a.out_path);
  std::cout << "svd-spectrum: " << sv.size() << " values -> " << a.out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned super-resolution ultrasound localization microscopy"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic CEUS/B-mode phantom stack");
  sim_cmd->add_option("--config", sim.config_path, "pipeline config JSON");
  sim_cmd->add_option("--phantom", sim.phantom_path, "phantom description JSON");
  sim_cmd->add_option("--frames", sim.n_frames, "number of frames")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim.seed, "master seed")->each([&](const std::string&) {
    sim.seed_set = true;
  });
  sim_cmd->add_option("--vessel-sep-um", sim.separation_um, "preset vessel separation");
  sim_cmd->add_option("--bubble-rate", sim.bubble_rate, "preset bubbles per vessel per frame");
  sim_cmd->add_option("--out", sim.out_prefix, "output prefix");

  PreprocessArgs pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Wash-out trim, subsequence split, registration, SVD filter");
  pre_cmd->add_option("--config", pre.config_path, "pipeline config JSON");
  pre_cmd->add_option("--in", pre.in_path, "CEUS URF1 stack")->required();
  pre_cmd->add_option("--bmode", pre.bmode_path, "B-mode URF1 stack")->required();
  pre_cmd->add_option("--roi", pre.roi, "x0,y0,w,h")->delimiter(',')->expected(4);
  pre_cmd->add_option("--corr-threshold", pre.corr_threshold, "subsequence NCC gate");
  pre_cmd->add_option("--min-len", pre.min_len, "minimum subsequence length");
  pre_cmd->add_option("--svd-low", pre.svd_low, "clutter singular values to remove");
  pre_cmd->add_option("--svd-high", pre.svd_high, "noise singular values to remove");
  pre_cmd->add_flag("--no-washout", pre.no_washout, "skip TIC wash-out trimming");
  pre_cmd->add_flag("--anchored", pre.anchored, "anchor correlation to the subsequence's first frame");
  pre_cmd->add_option("--out", pre.out_path, "filtered URF1 output");
  pre_cmd->add_option("--report", pre.report_path, "JSON report path");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Train the unrolled localization network");
  tr_cmd->add_option("--config", tr.config_path, "pipeline config JSON");
  tr_cmd->add_flag("--small", tr.small, "desk-scale preset (32x32 LR, r=4, K=9, batch 16)");
  tr_cmd->add_option("--seed", tr.seed, "master seed")->each([&](const std::string&) {
    tr.seed_set = true;
  });
  tr_cmd->add_option("--epochs", tr.epochs, "override epochs");
  tr_cmd->add_option("--steps", tr.steps, "override steps per epoch");
  tr_cmd->add_option("--batch", tr.batch, "override batch size");
  tr_cmd->add_option("--lr", tr.lr, "override learning rate");
  tr_cmd->add_flag("--quiet", tr.quiet, "suppress per-epoch output");
  tr_cmd->add_option("--out", tr.out_path, "checkpoint manifest path (blob next to it)");
  tr_cmd->add_option("--loss-csv", tr.loss_csv_path, "loss curve CSV path");

  LocalizeArgs loc;
  auto* loc_cmd = app.add_subcommand("localize", "Recover localizations from a (filtered) stack");
  loc_cmd->add_option("--config", loc.config_path, "pipeline config JSON");
  loc_cmd->add_option("--method", loc.method, "net|classic|ista");
  loc_cmd->add_option("--in", loc.in_path, "input URF1 stack")->required();
  loc_cmd->add_option("--ckpt", loc.ckpt_path, "checkpoint manifest (net method)");
  loc_cmd->add_option("--detect-threshold", loc.detect_threshold, "relative detection threshold");
  loc_cmd->add_option("--lambda", loc.lambda, "ista l1 weight");
  loc_cmd->add_option("--mu", loc.mu, "ista step size (0 = auto)");
  loc_cmd->add_option("--iters", loc.iters, "ista max iterations");
  loc_cmd->add_option("--out", loc.out_path, "localization CSV output");

  EvaluateArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Compare predicted vs truth localizations");
  ev_cmd->add_option("--config", ev.config_path, "pipeline config JSON");
  ev_cmd->add_option("--pred", ev.pred_path, "predicted CSV")->required();
  ev_cmd->add_option("--truth", ev.truth_path, "truth CSV")->required();
  ev_cmd->add_option("--tolerance-um", ev.tolerance_um, "matching tolerance");
  ev_cmd->add_option("--out", ev.out_path, "report JSON output");

  RenderArgs rd;
  auto* rd_cmd = app.add_subcommand("render", "Accumulate and render a super-resolved map");
  rd_cmd->add_option("--config", rd.config_path, "pipeline config JSON");
  rd_cmd->add_option("--locs", rd.locs_path, "localization CSV to accumulate");
  rd_cmd->add_option("--mean-of", rd.mean_of_path, "render the temporal mean of a URF1 stack instead");
  rd_cmd->add_option("--gamma", rd.gamma, "display gamma");
  rd_cmd->add_option("--blur", rd.blur, "display blur sigma (px)");
  rd_cmd->add_option("--mode", rd.mode, "count|intensity");
  rd_cmd->add_option("--probe", rd.probe, "x0,y0,x1,y1 (um) intensity profile")
      ->delimiter(',')
      ->expected(4);
  rd_cmd->add_option("--probe-band-um", rd.probe_band_um, "average over a perpendicular band");
  rd_cmd->add_option("--probe-out", rd.probe_out, "profile CSV path");
  rd_cmd->add_option("--out", rd.out_path, "16-bit PGM output");

  SpectrumArgs sp;
  auto* sp_cmd = app.add_subcommand("svd-spectrum", "Singular values of the Casorati matrix");
  sp_cmd->add_option("--config", sp.config_path, "pipeline config JSON");
  sp_cmd->add_option("--in", sp.in_path, "URF1 stack")->required();
  sp_cmd->add_option("--out", sp.out_path, "CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (sim_cmd->parsed()) return cmd_simulate(sim);
    if (pre_cmd->parsed()) return cmd_preprocess(pre);
    if (tr_cmd->parsed()) return cmd_train(tr);
    if (loc_cmd->parsed()) return cmd_localize(loc);
    if (ev_cmd->parsed()) return cmd_evaluate(ev);
    if (rd_cmd->parsed()) return cmd_render(rd);
    if (sp_cmd->parsed()) return cmd_spectrum(sp);
  } catch (const ulm::InvalidParameter& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ulm::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ulm::NumericDivergence& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
