#pragma once

// End-to-end streaming run: initial fit, then per frame: update the field,
// render the map, write it with its world file, log one metrics record.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orthosplat/online_trainer.hpp"
#include "orthosplat/scene_stream.hpp"
#include "orthosplat/tdom.hpp"

namespace orthosplat {

struct RunConfig {
  std::filesystem::path scene_dir;
  std::filesystem::path images_dir;
  std::optional<std::filesystem::path> order_file;
  std::filesystem::path out_dir = "out";
  TrainConfig train;
  std::optional<double> gsd;  // nullopt: AUTO
  UpAxis up;
  double box_margin = 0.02;
};

struct RunSummary {
  std::vector<UpdateReport> reports;
  std::vector<std::filesystem::path> tdom_stems;
  std::filesystem::path checkpoint;
  OrthoViewBox final_box;
};

inline std::string tdom_stem_name(int frame) {
  std::ostringstream name;
  name << "tdom_" << std::setw(4) << std::setfill('0') << frame;
  return name.str();
}

inline RunSummary run(const RunConfig& cfg, std::ostream* log = nullptr,
                      const std::function<void(const UpdateReport&, const TdomRaster&)>& on_frame = {}) {
  using Clock = std::chrono::steady_clock;
  std::filesystem::create_directories(cfg.out_dir);
  SparseScene scene = load_scene(cfg.scene_dir);
  std::vector<std::string> order;
  if (cfg.order_file) order = read_order_manifest(*cfg.order_file);
  SceneStream stream(std::move(scene), cfg.images_dir, order);

  OnlineTrainer trainer(cfg.train);
  std::vector<FrameEvent> initial;
  while (static_cast<int>(initial.size()) < cfg.train.init_frames) {
    auto ev = stream.replay_next();
    if (!ev) break;
    initial.push_back(std::move(*ev));
  }
  if (initial.empty()) throw StreamError(cfg.scene_dir.string(), "scene has no images");
  trainer.initialize(initial);
  if (log) *log << "initial field: " << trainer.field().size() << " gaussians from " << initial.size() << " frames\n";

  RasterConfig raster;
  raster.threads = cfg.train.threads;
  OrthoViewBox box = derive_view_box(initial.back().cloud_snapshot, cfg.box_margin, cfg.up);

  RunSummary summary;
  const auto metrics_path = cfg.out_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError(metrics_path.string(), "cannot open for writing");

  while (auto ev = stream.replay_next()) {
    UpdateReport report = trainer.per_frame_update(*ev);
    const auto t0 = Clock::now();
    box = expand_view_box(box, derive_view_box(ev->cloud_snapshot, cfg.box_margin, cfg.up));
    const double gsd = cfg.gsd ? *cfg.gsd : auto_gsd(box);
    const TdomRaster tdom = render_tdom(trainer.field(), cover_field_heights(box, trainer.field()), gsd, raster);
    const auto stem = cfg.out_dir / tdom_stem_name(ev->frame_index);
    write_geo_outputs(tdom, stem);
    report.adopt_seconds += std::chrono::duration<double>(Clock::now() - t0).count();

    metrics << report.to_json().dump() << "\n" << std::flush;
    if (log) {
      *log << "frame " << report.frame << ": +" << report.seeds_added << " seeds, " << report.field_size
           << " gaussians, psnr " << std::fixed << std::setprecision(2) << report.psnr_before << " -> "
           << report.psnr_new_view << " dB, " << std::setprecision(3) << report.adopt_seconds << " s\n"
           << std::defaultfloat;
    }
    if (on_frame) on_frame(report, tdom);
    summary.reports.push_back(report);
    summary.tdom_stems.push_back(stem);
  }

  summary.checkpoint = cfg.out_dir / "final.ply";
  save_checkpoint(trainer.field(), summary.checkpoint);
  summary.final_box = box;
  return summary;
}

struct MetricsSummary {
  int frames = 0;
  double total_adopt_seconds = 0.0;
  double mean_adopt_seconds = 0.0;
  double fps = 0.0;
  std::vector<std::size_t> field_sizes;
  std::vector<double> psnr;
};

inline MetricsSummary summarize_metrics(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw IoError(jsonl.string(), "cannot open");
  MetricsSummary s;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    ++s.frames;
    s.total_adopt_seconds += rec.at("adopt_seconds").get<double>();
    s.field_sizes.push_back(rec.at("field_size").get<std::size_t>());
    const auto& p = rec.at("psnr_new_view");
    s.psnr.push_back(p.is_null() ? std::numeric_limits<double>::quiet_NaN() : p.get<double>());
  }
  if (s.frames > 0) {
    s.mean_adopt_seconds = s.total_adopt_seconds / s.frames;
    s.fps = s.total_adopt_seconds > 0 ? s.frames / s.total_adopt_seconds : 0.0;
  }
  return s;
}

}  // namespace orthosplat
