// orthosplat command line: streaming run, standalone map render, metrics table.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "orthosplat/pipeline.hpp"

namespace {

using namespace orthosplat;

UpAxis parse_up_axis(const std::string& text) {
  std::string s = text;
  int sign = 1;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    sign = s[0] == '-' ? -1 : 1;
    s.erase(0, 1);
  }
  if (s == "x" || s == "X") return {0, sign};
  if (s == "y" || s == "Y") return {1, sign};
  if (s == "z" || s == "Z") return {2, sign};
  throw CLI::ValidationError("--up-axis", "expected x, y or z with an optional sign, got '" + text + "'");
}

std::optional<double> parse_gsd(const std::string& text) {
  if (text == "AUTO" || text == "auto") return std::nullopt;
  double v = 0.0;
  std::size_t used = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(v > 0.0)) throw CLI::ValidationError("--gsd", "expected AUTO or a positive number");
  return v;
}

OrthoViewBox parse_box(const std::string& text, UpAxis up) {
  std::vector<double> v;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--box", "non-numeric entry '" + item + "'");
    }
  }
  if (v.size() != 6) throw CLI::ValidationError("--box", "expected l,r,b,t,zn,zf");
  OrthoViewBox box{v[0], v[1], v[2], v[3], v[4], v[5], up};
  if (!box.valid()) throw CLI::ValidationError("--box", "need r > l, t > b, zf > zn");
  return box;
}

int cmd_metrics(const std::filesystem::path& out_dir) {
  const auto s = summarize_metrics(out_dir / "metrics.jsonl");
  std::cout << std::left << std::setw(8) << "frame" << std::setw(14) << "field_size" << std::setw(12) << "psnr_dB"
            << "\n";
  for (int i = 0; i < s.frames; ++i) {
    std::cout << std::setw(8) << i << std::setw(14) << s.field_sizes[i] << std::fixed << std::setprecision(2)
              << std::setw(12) << s.psnr[i] << std::defaultfloat << "\n";
  }
  std::cout << "\nframes        " << s.frames << "\n"
            << "mean Ad-opt s " << std::fixed << std::setprecision(3) << s.mean_adopt_seconds << "\n"
            << "FPS           " << std::setprecision(3) << s.fps << "\n";
  return EXIT_SUCCESS;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental true orthophoto generation from a streamed sparse reconstruction"};
  app.require_subcommand(1);

  RunConfig run_cfg;
  std::string order_file, gsd_text = "AUTO", up_text = "z", prune = "on";
  int threads = 0;
  auto* run_cmd = app.add_subcommand("run", "Stream a scene and write one orthophoto per frame");
  run_cmd->add_option("--scene", run_cfg.scene_dir, "Directory with cameras.txt, images.txt, points3D.txt")->required();
  run_cmd->add_option("--images", run_cfg.images_dir, "Image directory")->required();
  run_cmd->add_option("--order", order_file, "Replay manifest, one image name per line");
  run_cmd->add_option("--init-frames", run_cfg.train.init_frames, "Frames used for the initial fit")->capture_default_str();
  run_cmd->add_option("--init-iters", run_cfg.train.init_iters, "Initial-fit iterations")->capture_default_str();
  run_cmd->add_option("--per-frame-iters", run_cfg.train.per_frame_iters, "Iterations per streamed frame")
      ->capture_default_str();
  run_cmd->add_option("--gm", run_cfg.train.g_m, "LoG discrepancy threshold")->capture_default_str();
  run_cmd->add_option("--ht", run_cfg.train.h_t, "Samples per triangle")->capture_default_str();
  run_cmd->add_option("--gsd", gsd_text, "Ground sample distance or AUTO")->capture_default_str();
  run_cmd->add_option("--up-axis", up_text, "World up axis: x, y, z, optionally signed")->capture_default_str();
  run_cmd->add_option("--seed", run_cfg.train.seed, "Sampling seed")->capture_default_str();
  run_cmd->add_option("--threads", threads, "Worker threads (default: ORTHOSPLAT_THREADS or all cores)");
  run_cmd->add_option("--out", run_cfg.out_dir, "Output directory")->capture_default_str();
  run_cmd->add_option("--prune", prune, "Periodic low-opacity prune")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  run_cmd->add_option("--seed-cap", run_cfg.train.seed_cap, "Max seeds integrated per frame")->capture_default_str();

  std::filesystem::path checkpoint, tdom_out;
  std::string render_gsd = "AUTO", box_text, render_up = "z";
  auto* render_cmd = app.add_subcommand("render-tdom", "Render an orthophoto from a checkpoint");
  render_cmd->add_option("--checkpoint", checkpoint, "Checkpoint PLY")->required();
  render_cmd->add_option("--gsd", render_gsd, "Ground sample distance or AUTO")->capture_default_str();
  render_cmd->add_option("--box", box_text, "View box l,r,b,t,zn,zf (default: Gaussian means + 2%)");
  render_cmd->add_option("--up-axis", render_up, "World up axis")->capture_default_str();
  render_cmd->add_option("--threads", threads, "Worker threads");
  render_cmd->add_option("--out", tdom_out, "Output PNG; a .pgw world file is written next to it")->required();

  std::filesystem::path metrics_dir = "out";
  auto* metrics_cmd = app.add_subcommand("metrics", "Summarize metrics.jsonl of a run");
  metrics_cmd->add_option("--out", metrics_dir, "Run output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version come through here with code 0.
    return app.exit(e) == 0 ? EXIT_SUCCESS : 2;
  }

  try {
    if (*run_cmd) {
      if (!order_file.empty()) run_cfg.order_file = order_file;
      run_cfg.gsd = parse_gsd(gsd_text);
      run_cfg.up = parse_up_axis(up_text);
      run_cfg.train.prune = prune == "on";
      run_cfg.train.threads = resolve_threads(threads);
      run_cfg.train.validate();
      run(run_cfg, &std::cout);
      return EXIT_SUCCESS;
    }
    if (*render_cmd) {
      const UpAxis up = parse_up_axis(render_up);
      const auto field = load_checkpoint(checkpoint);
      OrthoViewBox box;
      if (!box_text.empty()) {
        box = parse_box(box_text, up);
      } else {
        if (field.empty()) throw std::invalid_argument("empty checkpoint: pass --box");
        std::vector<Eigen::Vector3d> means;
        for (const auto& g : field.gaussians) means.push_back(g.mean);
        box = derive_view_box(means, 0.02, up);
      }
      const auto gsd = parse_gsd(render_gsd);
      RasterConfig raster;
      raster.threads = resolve_threads(threads);
      const auto tdom = render_tdom(field, box, gsd ? *gsd : auto_gsd(box), raster);
      auto stem = tdom_out;
      stem.replace_extension();
      write_geo_outputs(tdom, stem);
      std::cout << "wrote " << stem.string() << ".png (" << tdom.pixels.width() << "x" << tdom.pixels.height()
                << ")\n";
      return EXIT_SUCCESS;
    }
    if (*metrics_cmd) return cmd_metrics(metrics_dir);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    // Option values the training or rendering setup rejects.
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return EXIT_FAILURE;
}
