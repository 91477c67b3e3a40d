#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "orthosplat/discrepancy.hpp"
#include "orthosplat/gaussian_field.hpp"
#include "orthosplat/key_region.hpp"
#include "orthosplat/loss.hpp"
#include "orthosplat/parallel.hpp"
#include "orthosplat/rng.hpp"
#include "orthosplat/scene_stream.hpp"
#include "orthosplat/splat_render.hpp"

namespace orthosplat {

struct TrainConfig {
  int init_frames = 3;
  int init_iters = 2000;
  int per_frame_iters = 200;
  double g_m = 0.1;
  int h_t = 16;

  // Base learning rates; the mean rate is multiplied by the scene extent.
  double lr_mean = 1.6e-4;
  double lr_log_scale = 5e-3;
  double lr_rotation = 1e-3;
  double lr_opacity = 5e-2;
  double lr_color = 2.5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-15;

  double ssim_weight = 0.2;
  int lr_decay_halflife = 8;
  double lr_floor = 0.05;
  int local_window = 5;
  std::uint64_t seed = 0;

  std::size_t seed_cap = 50000;
  double max_edge_fraction = 0.25;
  bool prune = true;
  int prune_every = 10;
  double prune_min_opacity = 0.005;

  // Background for training renders. With random_background every step
  // draws a fresh solid color instead, so transparency cannot be hidden
  // behind a fixed background.
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  bool random_background = true;
  int threads = 1;

  void validate() const {
    if (init_frames < 1 || init_iters < 0 || per_frame_iters < 0 || h_t < 1 || local_window < 1 ||
        lr_decay_halflife < 1 || prune_every < 1) {
      throw std::invalid_argument("TrainConfig: counts out of range");
    }
    if (!(ssim_weight >= 0.0 && ssim_weight <= 1.0)) throw std::invalid_argument("TrainConfig: ssim_weight not in [0,1]");
    if (!(g_m > 0.0)) throw std::invalid_argument("TrainConfig: G_m must be positive");
  }
};

// Per-Gaussian learning-rate multiplier: halves every `halflife` frames of
// age, never below the floor.
inline double lr_scale(const Gaussian& g, int current_frame, const TrainConfig& cfg) {
  const double age = std::max(0, current_frame - g.created_at);
  return std::max(cfg.lr_floor, std::exp2(-age / cfg.lr_decay_halflife));
}

// Views trained after a new frame arrives. Every batch holds the newest
// frame, the next member of the recent window (round-robin), and one
// uniformly drawn earlier frame.
struct LocalViewPlan {
  std::vector<int> window;
  std::vector<std::vector<int>> batches;

  std::vector<int> selected() const {
    std::vector<int> all = window;
    for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return all;
  }
};

// Views are positions 0..num_views-1 in arrival order; the newest is last.
inline LocalViewPlan select_local_views(int num_views, int iterations, const TrainConfig& cfg, SeqRng& rng) {
  if (num_views < 1) throw std::invalid_argument("select_local_views: no registered views");
  LocalViewPlan plan;
  const int newest = num_views - 1;
  for (int v = std::max(0, num_views - cfg.local_window); v < num_views; ++v) plan.window.push_back(v);
  std::vector<int> recent(plan.window.begin(), plan.window.end() - 1);
  plan.batches.reserve(iterations);
  for (int it = 0; it < iterations; ++it) {
    std::vector<int> batch{newest};
    if (!recent.empty()) batch.push_back(recent[it % recent.size()]);
    if (newest > 0) {
      const int earlier = static_cast<int>(rng.below(static_cast<std::uint64_t>(newest)));
      if (std::find(batch.begin(), batch.end(), earlier) == batch.end()) batch.push_back(earlier);
    }
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

struct TrainingView {
  int frame_index = 0;
  FramePose pose;
  CameraIntrinsics intrinsics;
  std::shared_ptr<const RgbImage> image;
  KeyRegionMask mask;
  // Scene units per pixel at the median depth of the key-region vertices;
  // 0 when the view has no mesh.
  double sample_spacing = 0.0;
};

struct UpdateReport {
  int frame = 0;
  std::size_t seeds_added = 0;
  std::size_t field_size = 0;
  int iters = 0;
  double adopt_seconds = 0.0;
  double psnr_new_view = 0.0;
  double psnr_before = 0.0;
  std::size_t pruned = 0;

  nlohmann::json to_json() const {
    auto finite = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"frame", frame},
            {"seeds_added", seeds_added},
            {"field_size", field_size},
            {"iters", iters},
            {"adopt_seconds", adopt_seconds},
            {"psnr_new_view", finite(psnr_new_view)},
            {"psnr_before", finite(psnr_before)}};
  }
};

class OnlineTrainer {
 public:
  explicit OnlineTrainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    raster_.threads = cfg_.threads;
  }

  const TrainConfig& config() const { return cfg_; }
  const GaussianField& field() const { return field_; }
  GaussianField& field() { return field_; }
  const std::vector<TrainingView>& views() const { return views_; }
  // Mean masked loss of each initial-fit step.
  const std::vector<double>& initial_loss_history() const { return init_losses_; }

  TrainingView make_view(const FrameEvent& ev, TriangleMesh2D* mesh_out = nullptr) const {
    TrainingView v;
    v.frame_index = ev.frame_index;
    v.pose = ev.pose;
    v.intrinsics = ev.intrinsics;
    v.image = ev.image;
    KeyRegionConfig kcfg;
    kcfg.max_edge_fraction = cfg_.max_edge_fraction;
    auto mesh = build_key_region_mesh(ev, kcfg);
    v.mask = rasterize_mask(mesh, ev.intrinsics.width, ev.intrinsics.height);
    if (!mesh.vertices.empty()) {
      std::vector<double> depths;
      depths.reserve(mesh.vertices.size());
      for (const auto& mv : mesh.vertices) depths.push_back(mv.depth);
      const auto mid = depths.begin() + static_cast<std::ptrdiff_t>(depths.size() / 2);
      std::nth_element(depths.begin(), mid, depths.end());
      v.sample_spacing = *mid / mesh.focal_px;
    }
    if (mesh_out) *mesh_out = std::move(mesh);
    return v;
  }

  // Builds the initial field from the latest snapshot and fits it to the
  // first frames.
  void initialize(const std::vector<FrameEvent>& initial) {
    if (initial.empty()) throw std::invalid_argument("initialize: no initial frames");
    field_ = init_from_cloud(initial.back().cloud_snapshot);
    scene_extent_ = 0.5 * field_.scene_diameter;
    views_.clear();
    for (const auto& ev : initial) add_view(make_view(ev));
    initial_fit();
  }

  // Uses an externally built field (e.g. a checkpoint).
  void set_field(GaussianField field) {
    field_ = std::move(field);
    scene_extent_ = 0.5 * field_.scene_diameter;
  }

  void add_view(TrainingView view) {
    if (view.sample_spacing > 0.0 &&
        (field_.sample_spacing == 0.0 || view.sample_spacing < field_.sample_spacing)) {
      field_.sample_spacing = view.sample_spacing;
    }
    views_.push_back(std::move(view));
  }

  void initial_fit() {
    std::vector<int> trainable;
    for (int i = 0; i < static_cast<int>(views_.size()); ++i)
      if (!views_[i].mask.empty()) trainable.push_back(i);
    init_losses_.clear();
    if (trainable.empty()) return;
    for (int it = 0; it < cfg_.init_iters; ++it) {
      const int v = trainable[it % trainable.size()];
      init_losses_.push_back(optimization_step({v}, std::nullopt));
    }
  }

  UpdateReport per_frame_update(const FrameEvent& ev) {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    UpdateReport report;
    report.frame = ev.frame_index;

    TriangleMesh2D mesh;
    TrainingView view = make_view(ev, &mesh);
    const auto before = render_perspective(field_, view.pose, view.intrinsics, cfg_.background, raster_);
    report.psnr_before = masked_psnr(before.color, *view.image, view.mask.bits);

    if (!view.mask.empty()) {
      const auto disc = discrepancy_map(before.color, *view.image, view.mask, cfg_.g_m, {}, cfg_.threads);
      SeedSamplingConfig scfg;
      scfg.samples_per_triangle = cfg_.h_t;
      scfg.seed = cfg_.seed;
      scfg.frame = static_cast<std::uint64_t>(ev.frame_index);
      scfg.cap = cfg_.seed_cap;
      const auto seeds = seeds_in_region(mesh, disc, scfg);
      report.seeds_added = integrate_seeds(field_, seeds, ev.frame_index);
    }
    add_view(view);

    SeqRng rng(cfg_.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(ev.frame_index));
    const auto plan = select_local_views(static_cast<int>(views_.size()), cfg_.per_frame_iters, cfg_, rng);
    for (const auto& batch : plan.batches) {
      std::vector<int> usable;
      for (int v : batch)
        if (!views_[v].mask.empty()) usable.push_back(v);
      if (usable.empty()) continue;
      optimization_step(usable, ev.frame_index);
      ++report.iters;
    }
    ++frames_processed_;
    if (cfg_.prune && frames_processed_ % cfg_.prune_every == 0) {
      report.pruned = field_.prune(cfg_.prune_min_opacity);
    }
    report.field_size = field_.size();
    report.adopt_seconds = std::chrono::duration<double>(Clock::now() - t0).count();

    const auto after = render_perspective(field_, view.pose, view.intrinsics, cfg_.background, raster_);
    report.psnr_new_view = masked_psnr(after.color, *view.image, view.mask.bits);
    return report;
  }

  // Gradient of the mean masked loss over a batch of views. Returns the loss
  // (NaN if every view was skipped).
  double batch_gradient(const std::vector<int>& batch, std::vector<ParamVector>& grads) const {
    return batch_gradient(batch, grads, cfg_.background);
  }

  double batch_gradient(const std::vector<int>& batch, std::vector<ParamVector>& grads,
                        const Eigen::Vector3d& background) const {
    grads.assign(field_.size(), ParamVector::Zero());
    double total = 0.0;
    int used = 0;
    for (int v : batch) {
      const TrainingView& view = views_[v];
      std::vector<Splat2D> splats;
      RenderContext ctx;
      const auto out = render_perspective(field_, view.pose, view.intrinsics, background, raster_, &splats, &ctx);
      const auto loss = masked_loss(out.color, *view.image, view.mask, cfg_.ssim_weight);
      if (!loss) continue;
      const auto splat_grads = composite_backward(splats, ctx, loss->grad, raster_);
      const auto g = perspective_backward(field_, view.pose, view.intrinsics, splats, splat_grads);
      for (std::size_t i = 0; i < g.size(); ++i) grads[i] += g[i];
      total += loss->loss;
      ++used;
    }
    if (used == 0) return std::numeric_limits<double>::quiet_NaN();
    const double inv = 1.0 / used;
    for (auto& g : grads) g *= inv;
    return total * inv;
  }

  // One optimizer step. With `current_frame`, each Gaussian's rates are
  // scaled by its age.
  double optimization_step(const std::vector<int>& batch, std::optional<int> current_frame) {
    Eigen::Vector3d background = cfg_.background;
    if (cfg_.random_background) {
      const CounterRng rng(cfg_.seed, kBackgroundStream, steps_);
      background = {rng.uniform(0), rng.uniform(1), rng.uniform(2)};
    }
    ++steps_;
    std::vector<ParamVector> grads;
    const double loss = batch_gradient(batch, grads, background);
    if (std::isnan(loss)) return loss;
    ParamVector base;
    base.segment<3>(param::kMean).setConstant(cfg_.lr_mean * scene_extent_);
    base.segment<3>(param::kLogScale).setConstant(cfg_.lr_log_scale);
    base.segment<4>(param::kRotation).setConstant(cfg_.lr_rotation);
    base[param::kOpacity] = cfg_.lr_opacity;
    base.segment<3>(param::kColor).setConstant(cfg_.lr_color);
    for (std::size_t i = 0; i < field_.size(); ++i) {
      AdamSlot& slot = field_.optimizer_state[i];
      const ParamVector& g = grads[i];
      ++slot.step;
      slot.m = cfg_.beta1 * slot.m + (1.0 - cfg_.beta1) * g;
      slot.v = cfg_.beta2 * slot.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, slot.step);
      const double bc2 = 1.0 - std::pow(cfg_.beta2, slot.step);
      const double scale = current_frame ? lr_scale(field_.gaussians[i], *current_frame, cfg_) : 1.0;
      const ParamVector m_hat = slot.m / bc1;
      const ParamVector v_hat = slot.v / bc2;
      const ParamVector step =
          (scale * base).cwiseProduct(m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + cfg_.adam_eps).matrix()));
      ParamVector p = pack(field_.gaussians[i]);
      p -= step;
      unpack(p, field_.gaussians[i]);
      field_.sanitize(i);
      Gaussian& gs = field_.gaussians[i];
      gs.color = gs.color.cwiseMax(0.0).cwiseMin(1.0);
    }
    return loss;
  }

  RenderOutput render_view(int v) const {
    const auto& view = views_.at(v);
    return render_perspective(field_, view.pose, view.intrinsics, cfg_.background, raster_);
  }

 private:
  TrainConfig cfg_;
  RasterConfig raster_;
  GaussianField field_;
  std::vector<TrainingView> views_;
  std::vector<double> init_losses_;
  double scene_extent_ = 1.0;
  int frames_processed_ = 0;
  std::uint64_t steps_ = 0;

  static constexpr std::uint64_t kBackgroundStream = 0xb6c0b6c0ULL;
};

}  // namespace orthosplat
