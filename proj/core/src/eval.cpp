#include "defdiff/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "defdiff/check.h"
#include "defdiff/image_io.h"

namespace defdiff {

namespace fs = std::filesystem;

bool scheduleHasZeroTerminalSnr(const NoiseSchedule& s) {
  return s.alpha_bars.back() == 0.0;
}

Tensor renderFrame(TrainState& st, const GBuffer& g, const std::vector<double>& z_exp,
                   const NoiseSchedule& sched, Rng& rng) {
  if (!scheduleHasZeroTerminalSnr(sched))
    std::cerr << "warning: schedule keeps signal at the terminal step (alpha_bar_N = "
              << sched.alpha_bars.back() << "); sampling starts from pure noise anyway\n";
  const Tensor control = buildControl(st.atlas, g);
  Tensor x = Tensor::randn({3, g.height(), g.width()}, rng);
  for (int tau = sched.numSteps(); tau >= 1; --tau) {
    const int orig_step = sched.orig_steps[static_cast<size_t>(tau - 1)];
    const Tensor v_pred = st.model->denoise(x, orig_step, control, z_exp);
    x = ddpmStep(x, v_pred, tau, sched, rng);
  }
  return chwToImage(x);
}

Tensor renderFromCodes(TrainState& st, const std::vector<double>& z_exp, const Camera& cam,
                       int proxy_resolution, const NoiseSchedule& sched, Rng& rng) {
  const ProxyMesh mesh = buildMesh(st.z_id, z_exp, proxy_resolution);
  const GBuffer g = rasterize(mesh, cam);
  return renderFrame(st, g, z_exp, sched, rng);
}

Tensor toUnit(const Tensor& img) {
  Tensor out = img;
  for (double& v : out.data) v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
  return out;
}

double psnr(const Tensor& a, const Tensor& b) {
  DD_CHECK_ARG(a.sameShape(b), "psnr shape mismatch: " << a.shapeStr() << " vs " << b.shapeStr());
  DD_CHECK_ARG(a.numel() > 0, "empty image");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

Tensor meanImage(const std::vector<Tensor>& imgs) {
  DD_CHECK_ARG(!imgs.empty(), "no images to average");
  Tensor mean = Tensor::zeros(imgs[0].shape);
  for (const Tensor& img : imgs) {
    DD_CHECK_ARG(img.sameShape(mean), "image shape mismatch in meanImage");
    for (size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += img.data[i];
  }
  for (double& v : mean.data) v /= static_cast<double>(imgs.size());
  return mean;
}

bool projectMarker(const Marker& marker, const std::vector<double>& z_exp, const Camera& cam,
                   const GBuffer& g, Eigen::Vector2d& out) {
  const Eigen::Vector3d posed = deformExpression(marker.pos, z_exp);
  const Eigen::Vector3d xc = cam.worldToCam(posed);
  if (xc.z() <= 1e-6) return false;
  const Eigen::Vector2d px = cam.projectCam(xc);
  const int col = static_cast<int>(std::lround(px.x() - 0.5));
  const int row = static_cast<int>(std::lround(px.y() - 0.5));
  if (row < 0 || row >= g.height() || col < 0 || col >= g.width()) return false;
  if (g.mask.at(row, col) == 0.0) return false;
  // Occlusion: the surface the rasterizer saw must be the marker's depth.
  const double depth = g.depth.at(row, col);
  if (std::abs(depth - xc.z()) > 0.05 * xc.z() + 0.02) return false;
  out = px;
  return true;
}

namespace {

constexpr int kPatchRadius = 3;

// Mean-subtracted patch as a flat vector over (2R+1)^2 * 3 values.
bool extractPatch(const Tensor& img, int r, int c, std::vector<double>& out) {
  const int H = img.dim(0), W = img.dim(1);
  if (r - kPatchRadius < 0 || r + kPatchRadius >= H || c - kPatchRadius < 0 ||
      c + kPatchRadius >= W)
    return false;
  out.clear();
  for (int i = -kPatchRadius; i <= kPatchRadius; ++i)
    for (int j = -kPatchRadius; j <= kPatchRadius; ++j)
      for (int k = 0; k < 3; ++k) out.push_back(img.at(r + i, c + j, k));
  double mean = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  for (double& v : out) v -= mean;
  return true;
}

// Peak of normalized cross-correlation of `patch` over the whole image.
// Returns false when the best score stays below the threshold.
bool nccPeak(const Tensor& img, const std::vector<double>& patch, double threshold, int& best_r,
             int& best_c) {
  const int H = img.dim(0), W = img.dim(1);
  double patch_norm = 0.0;
  for (double v : patch) patch_norm += v * v;
  patch_norm = std::sqrt(patch_norm);
  if (patch_norm < 1e-12) return false;  // textureless template

  double best = -2.0;
  best_r = best_c = -1;
  std::vector<double> window;
  for (int r = kPatchRadius; r < H - kPatchRadius; ++r)
    for (int c = kPatchRadius; c < W - kPatchRadius; ++c) {
      if (!extractPatch(img, r, c, window)) continue;
      double dotp = 0.0, norm = 0.0;
      for (size_t i = 0; i < window.size(); ++i) {
        dotp += window[i] * patch[i];
        norm += window[i] * window[i];
      }
      norm = std::sqrt(norm);
      if (norm < 1e-12) continue;
      const double score = dotp / (norm * patch_norm);
      if (score > best) {
        best = score;
        best_r = r;
        best_c = c;
      }
    }
  return best >= threshold;
}

}  // namespace

MarkerResult markerDistance(const std::vector<Tensor>& rendered, const Corpus& corpus,
                            const std::vector<int>& frame_indices,
                            const std::vector<Marker>& markers, double ncc_threshold) {
  DD_CHECK_ARG(rendered.size() == frame_indices.size(),
               "rendered frame count does not match index list");
  MarkerResult res;
  double dist_sum = 0.0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    const FrameRecord& f = corpus.frames[static_cast<size_t>(frame_indices[i])];
    DD_CHECK_ARG(rendered[i].sameShape(f.gt), "rendered frame shape mismatch");
    for (const Marker& m : markers) {
      Eigen::Vector2d px;
      if (!projectMarker(m, f.z_exp, f.cam, f.gbuffer, px)) {
        ++res.excluded;
        continue;
      }
      const int row = static_cast<int>(std::lround(px.y() - 0.5));
      const int col = static_cast<int>(std::lround(px.x() - 0.5));
      std::vector<double> patch;
      if (!extractPatch(f.gt, row, col, patch)) {
        ++res.excluded;
        continue;
      }
      int gr, gc, rr, rc;
      if (!nccPeak(f.gt, patch, ncc_threshold, gr, gc) ||
          !nccPeak(rendered[i], patch, ncc_threshold, rr, rc)) {
        ++res.excluded;
        continue;
      }
      dist_sum += std::hypot(static_cast<double>(rr - gr), static_cast<double>(rc - gc));
      ++res.found;
    }
  }
  if (res.found == 0) {
    // Nothing locatable in the rendered output: report the image diagonal so
    // a model that erases the markers scores strictly worse than any hit.
    const Tensor& ref = corpus.frames[static_cast<size_t>(frame_indices.empty()
                                                              ? 0
                                                              : frame_indices[0])]
                            .gt;
    res.mean_distance = std::hypot(static_cast<double>(ref.dim(0)),
                                   static_cast<double>(ref.dim(1)));
  } else {
    res.mean_distance = dist_sum / res.found;
  }
  return res;
}

Tensor temporalSlice(const std::vector<Tensor>& frames, int column, int row_lo, int row_hi) {
  DD_CHECK_ARG(!frames.empty(), "no frames to slice");
  const int H = frames[0].dim(0), W = frames[0].dim(1);
  DD_CHECK_ARG(column >= 0 && column < W, "slice column " << column << " outside width " << W);
  DD_CHECK_ARG(0 <= row_lo && row_lo < row_hi && row_hi <= H, "bad slice row range");
  Tensor strip = Tensor::zeros({row_hi - row_lo, static_cast<int>(frames.size()), 3});
  for (size_t t = 0; t < frames.size(); ++t) {
    DD_CHECK_ARG(frames[t].dim(0) == H && frames[t].dim(1) == W, "frame size drifted");
    for (int r = row_lo; r < row_hi; ++r)
      for (int k = 0; k < 3; ++k)
        strip.at(r - row_lo, static_cast<int>(t), k) = frames[t].at(r, column, k);
  }
  return strip;
}

namespace {

std::string fmtDouble17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricReport::toText() const {
  std::ostringstream os;
  os << "frames " << frames << "\n";
  if (has_psnr) {
    os << "mean_psnr_db " << fmtDouble17(mean_psnr) << "\n";
    for (size_t i = 0; i < per_frame_psnr.size(); ++i)
      os << "psnr_db[" << i << "] " << fmtDouble17(per_frame_psnr[i]) << "\n";
    os << "marker_mean_distance_px " << fmtDouble17(marker_mean_distance) << "\n";
    os << "marker_found " << marker_found << "\n";
    os << "marker_excluded " << marker_excluded << "\n";
  } else {
    os << "psnr none (no ground truth for this protocol)\n";
  }
  if (!config_echo.empty()) {
    std::istringstream iss(config_echo);
    std::string line;
    while (std::getline(iss, line)) os << "config." << line << "\n";
  }
  return os.str();
}

std::string MetricReport::toMachine() const {
  std::ostringstream os;
  os << "report_version 1\n";
  os << "has_psnr " << (has_psnr ? 1 : 0) << "\n";
  os << "frames " << frames << "\n";
  os << "mean_psnr " << fmtDouble17(mean_psnr) << "\n";
  os << "marker_mean_distance " << fmtDouble17(marker_mean_distance) << "\n";
  os << "marker_found " << marker_found << "\n";
  os << "marker_excluded " << marker_excluded << "\n";
  std::string psnrs;
  for (size_t i = 0; i < per_frame_psnr.size(); ++i) {
    if (i) psnrs += " ";
    psnrs += fmtDouble17(per_frame_psnr[i]);
  }
  os << "per_frame_psnr " << psnrs << "\n";
  // Config lines are prefixed so embedded spaces survive the key-value split.
  std::istringstream iss(config_echo);
  std::string line;
  while (std::getline(iss, line)) os << "config " << line << "\n";
  return os.str();
}

MetricReport MetricReport::fromMachine(const std::string& text) {
  MetricReport r;
  std::istringstream iss(text);
  std::string line;
  bool seen_version = false;
  while (std::getline(iss, line)) {
    if (line.empty()) continue;
    const size_t sp = line.find(' ');
    const std::string key = line.substr(0, sp == std::string::npos ? line.size() : sp);
    const std::string val = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "report_version") {
      DD_CHECK_ARG(val == "1", "unsupported report version " << val);
      seen_version = true;
    } else if (key == "has_psnr") {
      r.has_psnr = val == "1";
    } else if (key == "frames") {
      r.frames = std::stoi(val);
    } else if (key == "mean_psnr") {
      r.mean_psnr = std::stod(val);
    } else if (key == "marker_mean_distance") {
      r.marker_mean_distance = std::stod(val);
    } else if (key == "marker_found") {
      r.marker_found = std::stoi(val);
    } else if (key == "marker_excluded") {
      r.marker_excluded = std::stoi(val);
    } else if (key == "per_frame_psnr") {
      std::istringstream vs(val);
      double v;
      while (vs >> v) r.per_frame_psnr.push_back(v);
    } else if (key == "config") {
      if (!r.config_echo.empty()) r.config_echo += "\n";
      r.config_echo += val;
    }
  }
  DD_CHECK_ARG(seen_version, "not a metric report");
  if (!r.config_echo.empty()) r.config_echo += "\n";
  return r;
}

void ReenactmentJob::validate() const {
  DD_CHECK_ARG(sampler_steps >= 0, "negative sampler steps");
  if (mode == ReenactMode::kCross) {
    DD_CHECK_ARG(!driving_z_exp.empty(), "cross mode needs a driving sequence");
    DD_CHECK_ARG(driving_cams.size() == 1 || driving_cams.size() == driving_z_exp.size(),
                 "driving camera list must broadcast or match the sequence");
  }
}

std::vector<int> selfProtocolIndices(const Corpus& corpus) {
  std::vector<int> indices = corpus.indicesOf(Split::kHoldoutView);
  const std::vector<int> he = corpus.indicesOf(Split::kHoldoutExp);
  indices.insert(indices.end(), he.begin(), he.end());
  return indices;
}

MetricReport scoreFrames(const Corpus& corpus, const std::vector<int>& indices,
                         const std::vector<Tensor>& rendered) {
  DD_CHECK_ARG(indices.size() == rendered.size(), "index/frame count mismatch");
  DD_CHECK_ARG(!indices.empty(), "nothing to score");
  MetricReport report;
  report.has_psnr = true;
  report.frames = static_cast<int>(rendered.size());
  double sum = 0.0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    const FrameRecord& f = corpus.frames[static_cast<size_t>(indices[i])];
    const double p = psnr(toUnit(rendered[i]), toUnit(f.gt));
    report.per_frame_psnr.push_back(p);
    sum += p;
  }
  report.mean_psnr = sum / static_cast<double>(rendered.size());
  const MarkerResult mr = markerDistance(rendered, corpus, indices, corpus.appearance.markers);
  report.marker_mean_distance = mr.mean_distance;
  report.marker_found = mr.found;
  report.marker_excluded = mr.excluded;
  return report;
}

ProtocolResult runProtocol(TrainState& st, const Corpus& corpus, const ReenactmentJob& job,
                           const std::string& out_dir) {
  job.validate();
  NoiseSchedule sched = st.schedule;
  if (job.sampler_steps > 0 && job.sampler_steps < sched.numSteps())
    sched = subsampleSchedule(sched, job.sampler_steps);

  ProtocolResult res;
  if (job.mode == ReenactMode::kSelf) {
    res.indices = selfProtocolIndices(corpus);
    DD_CHECK_ARG(!res.indices.empty(), "corpus has no holdout frames to reenact");

    for (size_t i = 0; i < res.indices.size(); ++i) {
      const FrameRecord& f = corpus.frames[static_cast<size_t>(res.indices[i])];
      Rng rng(Rng::deriveSeed(job.seed, static_cast<uint64_t>(i)));
      const GBuffer& g = st.gbufferFor(corpus, res.indices[i]);
      res.frames.push_back(renderFrame(st, g, f.z_exp, sched, rng));
    }
    res.report = scoreFrames(corpus, res.indices, res.frames);
  } else {
    for (size_t i = 0; i < job.driving_z_exp.size(); ++i) {
      const Camera& cam =
          job.driving_cams.size() == 1 ? job.driving_cams[0] : job.driving_cams[i];
      Rng rng(Rng::deriveSeed(job.seed, static_cast<uint64_t>(i)));
      res.frames.push_back(renderFromCodes(st, job.driving_z_exp[i], cam,
                                           corpus.scene.proxy_resolution, sched, rng));
    }
    res.report.has_psnr = false;
    res.report.frames = static_cast<int>(res.frames.size());
  }

  std::ostringstream echo;
  echo << "mode " << (job.mode == ReenactMode::kSelf ? "self" : "cross") << "\n";
  echo << "sampler_steps " << sched.numSteps() << "\n";
  echo << "seed " << job.seed << "\n";
  res.report.config_echo = echo.str();

  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "frames");
    for (size_t i = 0; i < res.frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%06d.png", static_cast<int>(i));
      writePng((fs::path(out_dir) / "frames" / name).string(), res.frames[i], -1.0, 1.0);
    }
    const int H = res.frames[0].dim(0), W = res.frames[0].dim(1);
    const Tensor strip = temporalSlice(res.frames, W / 2, 0, H);
    writePng((fs::path(out_dir) / "slice.png").string(), strip, -1.0, 1.0);
    writeTextFile((fs::path(out_dir) / "report.txt").string(), res.report.toText());
    writeTextFile((fs::path(out_dir) / "report_machine.txt").string(), res.report.toMachine());
  }
  return res;
}

}  // namespace defdiff
