#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "defdiff/nn/optimizer.h"
#include "defdiff/nn/unet.h"
#include "defdiff/rasterizer.h"
#include "defdiff/schedule.h"
#include "defdiff/surface_features.h"

namespace defdiff {

enum class Split { kTrain, kHoldoutView, kHoldoutExp };

std::string splitName(Split s);
Split splitFromName(const std::string& name);

// One synthesized observation: ground truth shaded from the detail mesh,
// geometry buffers rasterized from the smooth proxy at the same codes and
// camera, so the control signal never sees the fine structure it must learn.
struct FrameRecord {
  int frame = 0;     // global timestep on the corpus timeline
  int camera = 0;
  int sequence = 0;
  Camera cam;
  Tensor gt;         // (H, W, 3) in [-1, 1]
  GBuffer gbuffer;
  std::vector<double> z_exp;
  Split split = Split::kTrain;
};

struct SceneConfig {
  int cameras = 8;
  int sequences = 2;
  int timesteps = 25;  // total frames on the timeline, cut into one contiguous
                       // block per sequence
  int image_size = 64;
  int proxy_resolution = 8;
  int detail_resolution = 10;
  std::vector<double> z_id{0.3, -0.2, 0.6, 0.4};
  double ring_radius = 2.6;
  double ring_height = 0.35;
  double fov_deg = 32.0;
  int holdout_camera = 0;
  int holdout_sequence = -1;  // -1 selects the last sequence
  uint64_t seed = 1234;

  void validate() const;
  int resolvedHoldoutSequence() const;
};

struct Corpus {
  SceneConfig scene;
  AppearanceConfig appearance;  // carries the tracked markers
  std::vector<FrameRecord> frames;

  std::vector<int> indicesOf(Split s) const;
  int height() const { return scene.image_size; }
  int width() const { return scene.image_size; }
};

// Expression code at timeline position t of `sequence`. Sequence 0 carries a
// monotone yaw ramp (a head turn the temporal-consistency checks track);
// the other dims and sequences follow smooth seeded sinusoids.
std::vector<double> expressionAt(const SceneConfig& scene, int sequence, double t01);

Corpus synthesizeDataset(const SceneConfig& scene);
uint64_t corpusHash(const Corpus& c);

// Disk layout: <dir>/corpus.txt plus frames/frame_000000/... with meta.txt,
// gt.png, channel previews, and a tensor container for GT and GBuffer arrays.
void saveCorpus(const Corpus& c, const std::string& dir);
Corpus loadCorpus(const std::string& dir);

// Square crop window, resized back to full size with nearest-neighbor
// sampling so masks stay binary and canonical values are never blended.
struct CropBox {
  int r0 = 0, c0 = 0, side = 0;
};

CropBox sampleCrop(int h, int w, double scale_min, double scale_max, Rng& rng);
// Source pixel (row, col) that output pixel (i, j) reads from.
std::pair<int, int> cropSource(const CropBox& box, int i, int j, int out_h, int out_w);
Tensor cropResizeNearest(const Tensor& img, const CropBox& box, int out_h, int out_w);
GBuffer cropResizeGBuffer(const GBuffer& g, const CropBox& box, int out_h, int out_w);

struct TrainConfig {
  int batch = 8;
  int steps = 20000;
  double lr_net = 1e-4;
  double lr_atlas = 1e-2;
  double crop_min = 0.7;
  double crop_max = 1.0;
  uint64_t seed = 7;
  nn::CondMode mode = nn::CondMode::kPrior;
  // Ablation switches.
  bool no_exp_cond = false;
  bool no_features = false;    // geometry-only control signal
  bool spherical_uv = false;   // single longitude/latitude map
  bool flame_like_proxy = false;  // rasterize control from a coarser proxy
  // Model size.
  int base = 32;
  std::vector<int> mults{1, 2, 4};
  std::vector<int> attn_levels{1, 2};
  int token_dim = 64;
  int num_tokens = 4;
  int groups = 8;
  // Feature atlas.
  int atlas_grid = 24;
  int atlas_ambient_grid = 12;
  int atlas_features = 16;
  double atlas_init_std = 0.01;
  // Noise schedule.
  int sched_steps = 50;
  double beta_start = 1e-3;
  double beta_end = 0.25;
  bool zero_snr = true;

  void validate() const;
};

// Everything training mutates. The atlas tensors live in atlas_params for the
// optimizer; `atlas` is re-synced from them after each step.
struct TrainState {
  TrainConfig cfg;
  nn::RendererConfig model_cfg;
  std::unique_ptr<nn::RendererModel> model;
  FeatureAtlas atlas;
  std::vector<nn::Param> atlas_params;
  NoiseSchedule schedule;
  nn::Adam opt;
  int64_t step = 0;
  std::vector<double> z_id;
  std::vector<GBuffer> proxy_override;  // coarse re-rasterization, flame ablation

  void syncAtlasFromParams();
  const GBuffer& gbufferFor(const Corpus& corpus, int frame_index) const;
};

nn::RendererConfig rendererConfigFor(const TrainConfig& cfg);
TrainState makeTrainState(const Corpus& corpus, const TrainConfig& cfg);

// Control tensor (C, H, W) for a geometry buffer under the state's atlas.
Tensor buildControl(const FeatureAtlas& atlas, const GBuffer& g);

// (H, W, 3) <-> (C=3, H, W).
Tensor imageToChw(const Tensor& hwc);
Tensor chwToImage(const Tensor& chw);

// One optimizer step over a sampled batch; returns the batch-mean v-MSE.
// Aborts with a diagnostic when the loss is not finite.
double trainStep(TrainState& st, const Corpus& corpus, Rng& rng);

struct TrainTrace {
  std::vector<double> losses;  // one entry per step
};

using TrainLogger = std::function<void(int64_t step, double loss)>;
TrainTrace train(TrainState& st, const Corpus& corpus, int steps,
                 const TrainLogger& log = nullptr);

// Unconditional v-prediction training of the bare U-Net on GT images. Used to
// build the frozen prior that control attaches to.
TrainTrace pretrainBase(TrainState& st, const Corpus& corpus, int steps,
                        const TrainLogger& log = nullptr);

// Full ancestral sampling loop of the unconditional base.
Tensor sampleUnconditional(nn::RendererModel& model, const NoiseSchedule& sched, int h, int w,
                           Rng& rng);

uint64_t paramsHash(const std::vector<nn::Param*>& params);

// Single-file checkpoint: magic, version, plain-text architecture header,
// tensor payload, trailing CRC32. Round trips bit-exactly.
void saveCheckpoint(const TrainState& st, const std::string& path);
TrainState loadCheckpoint(const std::string& path);

// Non-empty description of the first difference in architecture-determining
// fields, or empty when checkpoints of `a` load into models of `b`.
std::string architectureMismatch(const TrainConfig& a, const TrainConfig& b);

}  // namespace defdiff
