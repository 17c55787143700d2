// Command-line front end for the deferred-diffusion avatar pipeline.
//
// Every subcommand reads an optional sectioned config file plus repeatable
// --set section.key=value overrides; flags name inputs and outputs. Exit code
// is 0 on success and 1 on any error, with the reason on stderr.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "defdiff/config.h"
#include "defdiff/eval.h"
#include "defdiff/image_io.h"
#include "defdiff/pipeline.h"

namespace fs = std::filesystem;
using namespace defdiff;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
};

void addCommon(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "sectioned key-value config file");
  sub->add_option("--set", c.sets, "override a key, section.key=value (repeatable)");
}

Config loadConfig(const Common& c) {
  Config cfg = c.config_path.empty() ? Config() : Config::fromFile(c.config_path);
  for (const std::string& s : c.sets) cfg.setOverride(s);
  return cfg;
}

// Shared config files legitimately carry sections for other subcommands, so
// only keys in sections this command consumed (or in sections nothing ever
// consumes, the typo case) are worth flagging.
void warnUnused(const Config& cfg, const std::vector<std::string>& owned) {
  static const std::vector<std::string> known = {"scene", "train", "sample", "fit"};
  for (const std::string& k : cfg.unusedKeys()) {
    const size_t dot = k.rfind('.');
    const std::string section = dot == std::string::npos ? "" : k.substr(0, dot);
    const bool owned_here = std::find(owned.begin(), owned.end(), section) != owned.end();
    const bool recognized = std::find(known.begin(), known.end(), section) != known.end();
    if (owned_here || !recognized)
      std::cerr << "warning: config key '" << k << "' was never used\n";
  }
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string frameName(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.png", i);
  return buf;
}

void writeLossTrace(const std::string& path, const TrainTrace& trace) {
  std::ostringstream os;
  for (double l : trace.losses) os << fmt17(l) << "\n";
  writeTextFile(path, os.str());
}

// The architecture summary lists every parameter; per-tensor rows (marked by
// their shape parenthesis) stay out of the CLI chatter.
std::string summaryHead(const std::string& summary) {
  std::istringstream in(summary);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line))
    if (line.find(" (") == std::string::npos) out << line << "\n";
  return out.str();
}

TrainLogger stdoutLogger(int every) {
  return [every](int64_t step, double loss) {
    if (every > 0 && (step % every == 0 || step == 1))
      std::cout << "step " << step << " loss " << loss << "\n" << std::flush;
  };
}

std::vector<Eigen::Vector3d> readObjVertices(const std::string& path) {
  std::istringstream in(readTextFile(path));
  std::vector<Eigen::Vector3d> cloud;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("v ", 0) != 0) continue;
    std::istringstream ls(line.substr(2));
    double x, y, z;
    if (ls >> x >> y >> z) cloud.emplace_back(x, y, z);
  }
  DD_CHECK_ARG(!cloud.empty(), "no vertices found in " << path);
  return cloud;
}

// Frames named frame_000000.png ... in ascending index order.
std::vector<Tensor> readFrameDir(const std::string& dir) {
  std::vector<fs::path> files;
  DD_CHECK_ARG(fs::is_directory(dir), "not a directory: " << dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".png") files.push_back(e.path());
  }
  DD_CHECK_ARG(!files.empty(), "no frame_*.png files in " << dir);
  std::sort(files.begin(), files.end());
  std::vector<Tensor> frames;
  for (const fs::path& p : files) frames.push_back(readPng(p.string(), -1.0, 1.0));
  return frames;
}

NoiseSchedule samplerSchedule(const TrainState& st, int steps) {
  if (steps > 0 && steps < st.schedule.numSteps()) return subsampleSchedule(st.schedule, steps);
  return st.schedule;
}

int cmdSynthData(const Common& common, const std::string& out_dir, const std::string& mesh_obj) {
  const Config cfg = loadConfig(common);
  const SceneConfig sc = sceneFromConfig(cfg);
  warnUnused(cfg, {"scene"});
  const Corpus corpus = synthesizeDataset(sc);
  saveCorpus(corpus, out_dir);
  std::cout << "wrote " << corpus.frames.size() << " frames to " << out_dir << "\n";
  for (Split s : {Split::kTrain, Split::kHoldoutView, Split::kHoldoutExp})
    std::cout << "  " << splitName(s) << " " << corpus.indicesOf(s).size() << "\n";
  std::cout << "corpus_hash " << corpusHash(corpus) << "\n";

  if (!mesh_obj.empty()) {
    const ProxyMesh mesh =
        buildMesh(sc.z_id, std::vector<double>(kExpDims, 0.0), sc.proxy_resolution);
    writeTextFile(mesh_obj, exportObj(mesh));
    writeTextFile(mesh_obj + ".canonical.txt", canonicalSidecar(mesh));
    std::cout << "wrote neutral proxy mesh to " << mesh_obj << " (+ canonical sidecar)\n";
  }
  return 0;
}

int cmdFit(const Common& common, const std::string& cloud_path, const std::string& out_path) {
  const Config cfg = loadConfig(common);
  const FitConfig fc = fitFromConfig(cfg);
  const std::vector<double> init_id =
      cfg.getDoubleList("fit.init_id", std::vector<double>(kIdDims, 0.0));
  const std::vector<double> init_exp =
      cfg.getDoubleList("fit.init_exp", std::vector<double>(kExpDims, 0.0));

  std::vector<Eigen::Vector3d> cloud;
  if (!cloud_path.empty()) {
    cloud = readObjVertices(cloud_path);
    std::cout << "loaded " << cloud.size() << " points from " << cloud_path << "\n";
  } else {
    // No scan given: build a planted problem so the command demonstrates
    // recovery out of the box.
    const std::vector<double> plant_id =
        cfg.getDoubleList("fit.plant_id", {0.25, -0.15, 0.35, 0.2});
    const std::vector<double> plant_exp =
        cfg.getDoubleList("fit.plant_exp", {0.4, 0.0, 0.0, 0.3, 0.0, 0.0, 0.1, -0.2});
    const int points = cfg.getInt("fit.points", 400);
    const double noise = cfg.getDouble("fit.noise", 0.0);
    Rng rng(static_cast<uint64_t>(cfg.getInt64("fit.seed", 42)));
    const ProxyMesh mesh = buildMesh(plant_id, plant_exp, fc.resolution);
    cloud = samplePointcloud(mesh, points, rng, noise);
    std::cout << "planted problem: " << points << " surface points, noise " << noise << "\n";
  }
  warnUnused(cfg, {"fit"});

  const FitResult res = fitCodes(cloud, init_id, init_exp, fc);

  std::ostringstream os;
  os << "z_id";
  for (double v : res.z_id) os << " " << fmt17(v);
  os << "\nz_exp";
  for (double v : res.z_exp) os << " " << fmt17(v);
  os << "\nresidual " << fmt17(res.residual) << "\nconverged " << (res.converged ? 1 : 0)
     << "\niters " << res.iters << "\n";
  writeTextFile(out_path, os.str());
  std::cout << os.str();
  std::cout << "wrote codes to " << out_path << "\n";
  return 0;
}

int cmdPretrain(const Common& common, const std::string& corpus_dir, const std::string& out_ckpt,
                const std::string& log_path) {
  const Config cfg = loadConfig(common);
  const TrainConfig tc = trainFromConfig(cfg);
  const int steps = cfg.getInt("train.pretrain_steps", 1000);
  const int every = cfg.getInt("train.log_every", 100);
  warnUnused(cfg, {"train"});

  const Corpus corpus = loadCorpus(corpus_dir);
  TrainState st = makeTrainState(corpus, tc);
  std::cout << summaryHead(st.model->architectureSummary());
  const TrainTrace trace = pretrainBase(st, corpus, steps, stdoutLogger(every));
  if (!log_path.empty()) writeLossTrace(log_path, trace);
  saveCheckpoint(st, out_ckpt);
  std::cout << "pretrained base for " << steps << " steps, final loss "
            << (trace.losses.empty() ? 0.0 : trace.losses.back()) << "\n";
  std::cout << "wrote checkpoint to " << out_ckpt << "\n";
  return 0;
}

int cmdTrain(const Common& common, const std::string& corpus_dir, const std::string& out_ckpt,
             const std::string& resume_ckpt, const std::string& log_path,
             const std::string& sched_dump) {
  const Config cfg = loadConfig(common);
  const Corpus corpus = loadCorpus(corpus_dir);

  TrainState st;
  if (!resume_ckpt.empty()) {
    st = loadCheckpoint(resume_ckpt);
    std::cout << "resumed from " << resume_ckpt << " at step " << st.step << "\n";
  } else {
    st = makeTrainState(corpus, trainFromConfig(cfg));
  }
  const int steps = cfg.getInt("train.steps", st.cfg.steps);
  const int every = cfg.getInt("train.log_every", 100);
  // Resume keeps the checkpoint's architecture; leftover [train] keys are
  // expected then, not typos.
  warnUnused(cfg, resume_ckpt.empty() ? std::vector<std::string>{"train"}
                                      : std::vector<std::string>{});

  std::cout << summaryHead(st.model->architectureSummary());
  if (!sched_dump.empty()) writeTextFile(sched_dump, scheduleToText(st.schedule));

  const TrainTrace trace = train(st, corpus, steps, stdoutLogger(every));
  if (!log_path.empty()) writeLossTrace(log_path, trace);
  saveCheckpoint(st, out_ckpt);
  std::cout << "trained " << steps << " steps (total " << st.step << "), final loss "
            << (trace.losses.empty() ? 0.0 : trace.losses.back()) << "\n";
  std::cout << "wrote checkpoint to " << out_ckpt << "\n";
  return 0;
}

void dumpGBuffer(const GBuffer& g, const std::string& prefix) {
  writePng(prefix + "_normals.png", g.normals, -1.0, 1.0);
  double lo = 0.0, hi = 1.0;
  bool any = false;
  for (int i = 0; i < g.height(); ++i)
    for (int j = 0; j < g.width(); ++j)
      if (g.mask.at(i, j) != 0.0) {
        const double d = g.depth.at(i, j);
        lo = any ? std::min(lo, d) : d;
        hi = any ? std::max(hi, d) : d;
        any = true;
      }
  if (!any || hi <= lo) hi = lo + 1.0;
  writePng(prefix + "_depth.png", g.depth, lo, hi);
  Tensor spatial = Tensor::zeros({g.height(), g.width(), 3});
  for (int i = 0; i < g.height(); ++i)
    for (int j = 0; j < g.width(); ++j)
      for (int k = 0; k < 3; ++k) spatial.at(i, j, k) = g.canonical.at(i, j, k);
  writePng(prefix + "_canonical.png", spatial, -1.5, 1.5);
  writePng(prefix + "_mask.png", g.mask, 0.0, 1.0);
}

int cmdRender(const Common& common, const std::string& ckpt, const std::string& corpus_dir,
              int frame, const std::string& out_png, const std::string& gbuffer_prefix) {
  const Config cfg = loadConfig(common);
  const SampleOptions so = sampleFromConfig(cfg);
  warnUnused(cfg, {"sample"});

  const Corpus corpus = loadCorpus(corpus_dir);
  DD_CHECK_ARG(frame >= 0 && frame < static_cast<int>(corpus.frames.size()),
               "frame " << frame << " outside corpus of " << corpus.frames.size());
  TrainState st = loadCheckpoint(ckpt);
  const NoiseSchedule sched = samplerSchedule(st, so.steps);
  const FrameRecord& f = corpus.frames[static_cast<size_t>(frame)];

  Rng rng(so.seed);
  const Tensor img = renderFrame(st, st.gbufferFor(corpus, frame), f.z_exp, sched, rng);
  writePng(out_png, img, -1.0, 1.0);
  std::cout << "rendered corpus frame " << frame << " (camera " << f.camera << ", t " << f.frame
            << ", " << sched.numSteps() << " sampler steps) to " << out_png << "\n";
  if (!gbuffer_prefix.empty()) {
    dumpGBuffer(f.gbuffer, gbuffer_prefix);
    std::cout << "wrote geometry buffers to " << gbuffer_prefix << "_*.png\n";
  }
  return 0;
}

int cmdReenact(const Common& common, const std::string& ckpt, const std::string& corpus_dir,
               const std::string& out_dir, const std::string& mode_name,
               const std::string& driving_dir, int driving_camera) {
  const Config cfg = loadConfig(common);
  const SampleOptions so = sampleFromConfig(cfg);
  warnUnused(cfg, {"sample"});

  const Corpus corpus = loadCorpus(corpus_dir);
  TrainState st = loadCheckpoint(ckpt);

  ReenactmentJob job;
  job.sampler_steps = so.steps;
  job.seed = so.seed;
  if (mode_name == "self") {
    job.mode = ReenactMode::kSelf;
  } else if (mode_name == "cross") {
    job.mode = ReenactMode::kCross;
    DD_CHECK_ARG(!driving_dir.empty(), "cross mode needs --driving <corpus dir>");
    const Corpus driving = loadCorpus(driving_dir);
    for (const FrameRecord& f : driving.frames) {
      if (f.camera != driving_camera) continue;
      job.driving_z_exp.push_back(f.z_exp);
      job.driving_cams.push_back(f.cam);
    }
    DD_CHECK_ARG(!job.driving_z_exp.empty(),
                 "driving corpus has no frames for camera " << driving_camera);
    std::cout << "driving with " << job.driving_z_exp.size() << " frames from " << driving_dir
              << " camera " << driving_camera << "\n";
  } else {
    DD_CHECK_ARG(false, "--mode must be self or cross, got '" << mode_name << "'");
  }

  const ProtocolResult res = runProtocol(st, corpus, job, out_dir);
  std::cout << res.report.toText();
  std::cout << "wrote " << res.frames.size() << " frames to " << out_dir << "/frames\n";
  return 0;
}

int cmdAnimate(const Common& common, const std::string& ckpt, const std::string& out_dir,
               int frames, int camera, int sequence) {
  const Config cfg = loadConfig(common);
  const SceneConfig sc = sceneFromConfig(cfg);
  const SampleOptions so = sampleFromConfig(cfg);
  warnUnused(cfg, {"scene", "sample"});
  DD_CHECK_ARG(frames >= 2, "need at least 2 frames");
  DD_CHECK_ARG(camera >= 0 && camera < sc.cameras, "camera outside the ring");
  DD_CHECK_ARG(sequence >= 0 && sequence < sc.sequences, "sequence outside the scene");

  TrainState st = loadCheckpoint(ckpt);
  const NoiseSchedule sched = samplerSchedule(st, so.steps);
  const Camera cam = ringCamera(camera, sc.cameras, sc.ring_radius, sc.ring_height,
                                Eigen::Vector3d::Zero(), sc.fov_deg, sc.image_size, sc.image_size);

  fs::create_directories(fs::path(out_dir) / "frames");
  std::vector<Tensor> rendered;
  for (int i = 0; i < frames; ++i) {
    const double t01 = static_cast<double>(i) / (frames - 1);
    const std::vector<double> z_exp = expressionAt(sc, sequence, t01);
    Rng rng(Rng::deriveSeed(so.seed, static_cast<uint64_t>(i)));
    rendered.push_back(renderFromCodes(st, z_exp, cam, sc.proxy_resolution, sched, rng));
    writePng((fs::path(out_dir) / "frames" / frameName(i)).string(), rendered.back(), -1.0, 1.0);
    std::cout << "frame " << i + 1 << "/" << frames << "\n" << std::flush;
  }
  const int H = rendered[0].dim(0), W = rendered[0].dim(1);
  writePng((fs::path(out_dir) / "slice.png").string(), temporalSlice(rendered, W / 2, 0, H), -1.0,
           1.0);
  std::cout << "wrote " << frames << " frames and slice.png to " << out_dir << "\n";
  return 0;
}

int cmdEval(const Common& common, const std::string& ckpt, const std::string& corpus_dir,
            const std::string& frames_dir, const std::string& out_dir,
            const std::string& report_path) {
  const Config cfg = loadConfig(common);
  const SampleOptions so = sampleFromConfig(cfg);
  warnUnused(cfg, {"sample"});
  const Corpus corpus = loadCorpus(corpus_dir);

  MetricReport report;
  if (!frames_dir.empty()) {
    // Score frames someone already rendered (reenact/animate output layout).
    const std::vector<int> indices = selfProtocolIndices(corpus);
    DD_CHECK_ARG(!indices.empty(), "corpus has no holdout frames to score");
    const std::vector<Tensor> rendered = readFrameDir(frames_dir);
    DD_CHECK_ARG(rendered.size() == indices.size(),
                 "frame directory holds " << rendered.size() << " frames but the protocol scores "
                                          << indices.size());
    report = scoreFrames(corpus, indices, rendered);
    report.config_echo = "frames_dir " + frames_dir + "\n";
  } else {
    DD_CHECK_ARG(!ckpt.empty(), "need --ckpt (or --frames to score existing renders)");
    TrainState st = loadCheckpoint(ckpt);
    ReenactmentJob job;
    job.mode = ReenactMode::kSelf;
    job.sampler_steps = so.steps;
    job.seed = so.seed;
    report = runProtocol(st, corpus, job, out_dir).report;
  }
  std::cout << report.toText();
  if (!report_path.empty()) {
    writeTextFile(report_path, report.toMachine());
    std::cout << "wrote machine report to " << report_path << "\n";
  }
  return 0;
}

int cmdSlice(const Common& common, const std::string& frames_dir, const std::string& corpus_dir,
             int camera, const std::string& out_png, int column, int row_lo, int row_hi) {
  const Config cfg = loadConfig(common);
  warnUnused(cfg, {});
  std::vector<Tensor> frames;
  if (!frames_dir.empty()) {
    frames = readFrameDir(frames_dir);
  } else {
    DD_CHECK_ARG(!corpus_dir.empty(), "need --frames or --corpus");
    const Corpus corpus = loadCorpus(corpus_dir);
    for (const FrameRecord& f : corpus.frames)
      if (f.camera == camera) frames.push_back(f.gt);
    DD_CHECK_ARG(!frames.empty(), "corpus has no frames for camera " << camera);
  }
  const int H = frames[0].dim(0), W = frames[0].dim(1);
  if (column < 0) column = W / 2;
  if (row_hi < 0) row_hi = H;
  const Tensor strip = temporalSlice(frames, column, row_lo, row_hi);
  writePng(out_png, strip, -1.0, 1.0);
  std::cout << "wrote " << strip.dim(0) << "x" << strip.dim(1) << " slice (column " << column
            << ", " << frames.size() << " frames) to " << out_png << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deferred-diffusion avatar pipeline"};
  app.require_subcommand(1);

  Common common;

  auto* synth = app.add_subcommand("synth-data", "synthesize a multi-view corpus to disk");
  addCommon(synth, common);
  std::string synth_out, synth_mesh;
  synth->add_option("--out", synth_out, "corpus output directory")->required();
  synth->add_option("--mesh-obj", synth_mesh, "also export the neutral proxy mesh as OBJ");

  auto* fit = app.add_subcommand("fit", "fit identity/expression codes to a point cloud");
  addCommon(fit, common);
  std::string fit_cloud, fit_out;
  fit->add_option("--cloud", fit_cloud, "OBJ point cloud (default: planted problem)");
  fit->add_option("--out", fit_out, "output codes file")->required();

  auto* pre = app.add_subcommand("pretrain", "pretrain the unconditional base model");
  addCommon(pre, common);
  std::string pre_corpus, pre_out, pre_log;
  pre->add_option("--corpus", pre_corpus, "corpus directory")->required();
  pre->add_option("--out", pre_out, "checkpoint output path")->required();
  pre->add_option("--log", pre_log, "loss trace output, one loss per line");

  auto* train_cmd = app.add_subcommand("train", "train the controlled renderer");
  addCommon(train_cmd, common);
  std::string tr_corpus, tr_out, tr_resume, tr_log, tr_sched;
  train_cmd->add_option("--corpus", tr_corpus, "corpus directory")->required();
  train_cmd->add_option("--out", tr_out, "checkpoint output path")->required();
  train_cmd->add_option("--resume", tr_resume, "checkpoint to continue from");
  train_cmd->add_option("--log", tr_log, "loss trace output, one loss per line");
  train_cmd->add_option("--dump-schedule", tr_sched, "write the noise schedule table");

  auto* render = app.add_subcommand("render", "render one corpus frame from a checkpoint");
  addCommon(render, common);
  std::string rd_ckpt, rd_corpus, rd_out, rd_gbuf;
  int rd_frame = 0;
  render->add_option("--ckpt", rd_ckpt, "checkpoint path")->required();
  render->add_option("--corpus", rd_corpus, "corpus directory")->required();
  render->add_option("--frame", rd_frame, "corpus frame index")->required();
  render->add_option("--out", rd_out, "output PNG")->required();
  render->add_option("--gbuffer-prefix", rd_gbuf, "also dump geometry buffer PNGs");

  auto* reen = app.add_subcommand("reenact", "run the reenactment protocol, writing frames");
  addCommon(reen, common);
  std::string re_ckpt, re_corpus, re_out, re_mode = "self", re_driving;
  int re_driving_cam = 0;
  reen->add_option("--ckpt", re_ckpt, "checkpoint path")->required();
  reen->add_option("--corpus", re_corpus, "corpus directory")->required();
  reen->add_option("--out", re_out, "output directory")->required();
  reen->add_option("--mode", re_mode, "self or cross");
  reen->add_option("--driving", re_driving, "driving corpus directory (cross mode)");
  reen->add_option("--driving-camera", re_driving_cam, "camera whose track drives (cross mode)");

  auto* anim = app.add_subcommand("animate", "render an expression sweep from ring cameras");
  addCommon(anim, common);
  std::string an_ckpt, an_out;
  int an_frames = 24, an_camera = 1, an_sequence = 0;
  anim->add_option("--ckpt", an_ckpt, "checkpoint path")->required();
  anim->add_option("--out", an_out, "output directory")->required();
  anim->add_option("--frames", an_frames, "frame count (default 24)");
  anim->add_option("--camera", an_camera, "ring camera index (default 1)");
  anim->add_option("--sequence", an_sequence, "expression sequence to sweep (default 0)");

  auto* eval_cmd = app.add_subcommand("eval", "score holdout frames and print the metric report");
  addCommon(eval_cmd, common);
  std::string ev_ckpt, ev_corpus, ev_frames, ev_out, ev_report;
  eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint path");
  eval_cmd->add_option("--corpus", ev_corpus, "corpus directory")->required();
  eval_cmd->add_option("--frames", ev_frames, "score this frame directory instead of rendering");
  eval_cmd->add_option("--out", ev_out, "also write frames and reports here");
  eval_cmd->add_option("--report", ev_report, "write the machine-readable report here");

  auto* slice = app.add_subcommand("slice", "cut a temporal slice strip from frames");
  addCommon(slice, common);
  std::string sl_frames, sl_corpus, sl_out;
  int sl_camera = 0, sl_column = -1, sl_row_lo = 0, sl_row_hi = -1;
  slice->add_option("--frames", sl_frames, "frame directory");
  slice->add_option("--corpus", sl_corpus, "slice corpus GT instead of a frame directory");
  slice->add_option("--camera", sl_camera, "corpus camera (with --corpus)");
  slice->add_option("--out", sl_out, "output PNG")->required();
  slice->add_option("--column", sl_column, "pixel column (default: center)");
  slice->add_option("--row-lo", sl_row_lo, "first row (default 0)");
  slice->add_option("--row-hi", sl_row_hi, "one past last row (default: height)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmdSynthData(common, synth_out, synth_mesh);
    if (fit->parsed()) return cmdFit(common, fit_cloud, fit_out);
    if (pre->parsed()) return cmdPretrain(common, pre_corpus, pre_out, pre_log);
    if (train_cmd->parsed())
      return cmdTrain(common, tr_corpus, tr_out, tr_resume, tr_log, tr_sched);
    if (render->parsed())
      return cmdRender(common, rd_ckpt, rd_corpus, rd_frame, rd_out, rd_gbuf);
    if (reen->parsed())
      return cmdReenact(common, re_ckpt, re_corpus, re_out, re_mode, re_driving, re_driving_cam);
    if (anim->parsed()) return cmdAnimate(common, an_ckpt, an_out, an_frames, an_camera, an_sequence);
    if (eval_cmd->parsed()) return cmdEval(common, ev_ckpt, ev_corpus, ev_frames, ev_out, ev_report);
    if (slice->parsed())
      return cmdSlice(common, sl_frames, sl_corpus, sl_camera, sl_out, sl_column, sl_row_lo,
                      sl_row_hi);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
