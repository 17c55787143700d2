#pragma once

#include <string>
#include <vector>

#include "defdiff/pipeline.h"

namespace defdiff {

bool scheduleHasZeroTerminalSnr(const NoiseSchedule& s);

// Full ancestral sampling loop from pure noise, conditioned on the frame's
// geometry buffers and expression code. Returns (H, W, 3) in [-1, 1]. Warns on
// stderr when the schedule keeps signal at the terminal step (the loop then
// starts from a distribution the model never saw).
Tensor renderFrame(TrainState& st, const GBuffer& g, const std::vector<double>& z_exp,
                   const NoiseSchedule& sched, Rng& rng);

// Convenience wrapper: proxy mesh from the avatar identity and z_exp,
// rasterized with `cam`, then rendered.
Tensor renderFromCodes(TrainState& st, const std::vector<double>& z_exp, const Camera& cam,
                       int proxy_resolution, const NoiseSchedule& sched, Rng& rng);

// [-1,1] image to [0,1].
Tensor toUnit(const Tensor& img);

// Peak signal-to-noise ratio in dB over [0,1] images, capped at 99 dB.
double psnr(const Tensor& a, const Tensor& b);

Tensor meanImage(const std::vector<Tensor>& imgs);

struct MarkerResult {
  double mean_distance = 0.0;  // pixels; image diagonal when nothing was found
  int found = 0;
  int excluded = 0;  // invisible markers and correlation misses
};

// Locates each canonical marker in GT and rendered frames by normalized
// cross-correlation of a small GT texture patch and reports the mean 2-D
// distance between the two peak positions. `rendered[i]` pairs with
// corpus.frames[frame_indices[i]].
MarkerResult markerDistance(const std::vector<Tensor>& rendered, const Corpus& corpus,
                            const std::vector<int>& frame_indices,
                            const std::vector<Marker>& markers, double ncc_threshold = 0.6);

// Continuous pixel position of a marker under (z_exp, cam): (col, row).
// Returns false when the marker is outside the image or occluded per the
// geometry buffer.
bool projectMarker(const Marker& marker, const std::vector<double>& z_exp, const Camera& cam,
                   const GBuffer& g, Eigen::Vector2d& out);

// Vertical strip [row_lo, row_hi) at `column` from every frame, concatenated
// left to right: (row_hi - row_lo, frame_count, 3).
Tensor temporalSlice(const std::vector<Tensor>& frames, int column, int row_lo, int row_hi);

struct MetricReport {
  bool has_psnr = false;
  std::vector<double> per_frame_psnr;
  double mean_psnr = 0.0;
  double marker_mean_distance = 0.0;
  int marker_found = 0;
  int marker_excluded = 0;
  int frames = 0;
  std::string config_echo;

  std::string toText() const;     // human-readable
  std::string toMachine() const;  // stable key-value serialization
  static MetricReport fromMachine(const std::string& text);
};

// Frames the self-reenactment protocol scores: holdout-view frames first,
// then holdout-expression frames.
std::vector<int> selfProtocolIndices(const Corpus& corpus);

// PSNR and marker metrics of rendered frames against corpus GT at `indices`.
// Works on any frame source (sampled live or loaded back from disk).
MetricReport scoreFrames(const Corpus& corpus, const std::vector<int>& indices,
                         const std::vector<Tensor>& rendered);

enum class ReenactMode { kSelf, kCross };

struct ReenactmentJob {
  ReenactMode mode = ReenactMode::kSelf;
  int sampler_steps = 0;  // 0 keeps the full training schedule
  uint64_t seed = 1;
  // Cross mode driving source; cams of size 1 broadcast over the sequence.
  std::vector<std::vector<double>> driving_z_exp;
  std::vector<Camera> driving_cams;

  void validate() const;
};

struct ProtocolResult {
  std::vector<int> indices;    // corpus indices scored (self mode)
  std::vector<Tensor> frames;  // rendered images, (H, W, 3) in [-1, 1]
  MetricReport report;
};

// Self mode renders every holdout frame and scores it against GT; cross mode
// renders the driving sequence on the avatar identity and reports no PSNR.
// When out_dir is non-empty, writes numbered frame PNGs, a temporal slice, and
// both report serializations there. Per-frame noise is seeded from
// (job.seed, frame position).
ProtocolResult runProtocol(TrainState& st, const Corpus& corpus, const ReenactmentJob& job,
                           const std::string& out_dir);

}  // namespace defdiff
