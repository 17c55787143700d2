#include "defdiff/pipeline.h"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "defdiff/check.h"
#include "defdiff/image_io.h"

namespace defdiff {

namespace fs = std::filesystem;

std::string splitName(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kHoldoutView: return "holdout-view";
    case Split::kHoldoutExp: return "holdout-expression";
  }
  DD_CHECK(false, "bad split");
  return {};
}

Split splitFromName(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "holdout-view") return Split::kHoldoutView;
  if (name == "holdout-expression") return Split::kHoldoutExp;
  DD_CHECK_ARG(false, "unknown split tag: " << name);
  return Split::kTrain;
}

void SceneConfig::validate() const {
  DD_CHECK_ARG(cameras >= 2, "need at least 2 cameras");
  DD_CHECK_ARG(sequences >= 2, "need at least 2 expression sequences");
  DD_CHECK_ARG(timesteps >= sequences, "fewer timesteps than sequences");
  DD_CHECK_ARG(image_size >= 8, "image size too small");
  DD_CHECK_ARG(proxy_resolution >= 4 && detail_resolution >= 4, "mesh resolution too small");
  DD_CHECK_ARG(holdout_camera >= 0 && holdout_camera < cameras, "holdout camera out of range");
  DD_CHECK_ARG(holdout_sequence >= -1 && holdout_sequence < sequences,
               "holdout sequence out of range");
  DD_CHECK_ARG(static_cast<int>(z_id.size()) <= kIdDims, "identity code too long");
}

int SceneConfig::resolvedHoldoutSequence() const {
  return holdout_sequence < 0 ? sequences - 1 : holdout_sequence;
}

std::vector<int> Corpus::indicesOf(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(frames.size()); ++i)
    if (frames[static_cast<size_t>(i)].split == s) out.push_back(i);
  return out;
}

namespace {

// Contiguous block of timeline steps belonging to `sequence`; blocks differ in
// length by at most one.
std::pair<int, int> sequenceBlock(const SceneConfig& scene, int sequence) {
  const int T = scene.timesteps, S = scene.sequences;
  const int base = T / S, extra = T % S;
  const int len = base + (sequence < extra ? 1 : 0);
  const int start = sequence * base + std::min(sequence, extra);
  return {start, start + len};
}

int sequenceOfTimestep(const SceneConfig& scene, int t) {
  for (int s = 0; s < scene.sequences; ++s) {
    auto [lo, hi] = sequenceBlock(scene, s);
    if (t >= lo && t < hi) return s;
  }
  DD_CHECK(false, "timestep outside timeline");
  return -1;
}

}  // namespace

std::vector<double> expressionAt(const SceneConfig& scene, int sequence, double t01) {
  DD_CHECK_ARG(sequence >= 0 && sequence < scene.sequences, "sequence out of range");
  // Per-sequence seeded sinusoid parameters, drawn fresh per call so the
  // function stays stateless and frame-parallel.
  std::vector<double> z(kExpDims, 0.0);
  Rng prng(Rng::deriveSeed(scene.seed, 1000 + static_cast<uint64_t>(sequence)));
  for (int d = 0; d < kExpDims; ++d) {
    const double amp = prng.uniform(0.35, 0.85);
    const double freq = prng.uniform(0.6, 1.6);
    const double phase = prng.uniform(0.0, 2.0 * M_PI);
    z[static_cast<size_t>(d)] = amp * std::sin(2.0 * M_PI * freq * t01 + phase);
  }
  if (sequence == 0) z[7] = -0.5 + 1.0 * t01;  // head turn, monotone yaw
  return z;
}

Corpus synthesizeDataset(const SceneConfig& scene) {
  scene.validate();
  Corpus corpus;
  corpus.scene = scene;
  corpus.appearance = defaultAppearance(scene.z_id);
  const int H = scene.image_size, W = scene.image_size;
  const int holdout_seq = scene.resolvedHoldoutSequence();

  std::vector<Camera> cams;
  for (int c = 0; c < scene.cameras; ++c)
    cams.push_back(ringCamera(c, scene.cameras, scene.ring_radius, scene.ring_height,
                              Eigen::Vector3d::Zero(), scene.fov_deg, H, W));

  corpus.frames.reserve(static_cast<size_t>(scene.timesteps) * scene.cameras);
  for (int t = 0; t < scene.timesteps; ++t) {
    const int seq = sequenceOfTimestep(scene, t);
    auto [lo, hi] = sequenceBlock(scene, seq);
    const double t01 = hi - lo > 1 ? static_cast<double>(t - lo) / (hi - lo - 1) : 0.0;
    const std::vector<double> z_exp = expressionAt(scene, seq, t01);

    const ProxyMesh proxy = buildMesh(scene.z_id, z_exp, scene.proxy_resolution);
    const ProxyMesh detail = buildDetailMesh(scene.z_id, z_exp, scene.detail_resolution);

    for (int c = 0; c < scene.cameras; ++c) {
      FrameRecord rec;
      rec.frame = t;
      rec.camera = c;
      rec.sequence = seq;
      rec.cam = cams[static_cast<size_t>(c)];
      rec.gt = shadeGroundtruth(detail, rec.cam, corpus.appearance);
      rec.gbuffer = rasterize(proxy, rec.cam);
      rec.z_exp = z_exp;
      if (seq == holdout_seq)
        rec.split = Split::kHoldoutExp;
      else if (c == scene.holdout_camera)
        rec.split = Split::kHoldoutView;
      else
        rec.split = Split::kTrain;
      corpus.frames.push_back(std::move(rec));
    }
  }
  return corpus;
}

uint64_t corpusHash(const Corpus& c) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  mix(static_cast<uint64_t>(c.frames.size()));
  for (const FrameRecord& f : c.frames) {
    mix(static_cast<uint64_t>(f.frame));
    mix(static_cast<uint64_t>(f.camera));
    mix(static_cast<uint64_t>(f.split == Split::kTrain      ? 0
                              : f.split == Split::kHoldoutView ? 1
                                                               : 2));
    mix(tensorHash(f.gt));
    mix(tensorHash(f.gbuffer.normals));
    mix(tensorHash(f.gbuffer.depth));
    mix(tensorHash(f.gbuffer.canonical));
    mix(tensorHash(f.gbuffer.mask));
    for (double z : f.z_exp) {
      uint64_t bits;
      std::memcpy(&bits, &z, 8);
      mix(bits);
    }
  }
  return h;
}

namespace {

std::string fmtDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmtVector(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += " ";
    s += fmtDouble(v[i]);
  }
  return s;
}

std::vector<double> parseVector(const std::string& s) {
  std::istringstream iss(s);
  std::vector<double> out;
  double v;
  while (iss >> v) out.push_back(v);
  return out;
}

// "key value" lines -> map; values keep internal spaces.
std::map<std::string, std::string> parseKvText(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream iss(text);
  std::string line;
  while (std::getline(iss, line)) {
    if (line.empty() || line[0] == '#') continue;
    const size_t sp = line.find(' ');
    if (sp == std::string::npos) continue;
    out[line.substr(0, sp)] = line.substr(sp + 1);
  }
  return out;
}

const std::string& kvGet(const std::map<std::string, std::string>& kv, const std::string& key,
                         const std::string& context) {
  auto it = kv.find(key);
  DD_CHECK(it != kv.end(), "missing key '" << key << "' in " << context);
  return it->second;
}

std::string cameraToText(const Camera& cam) {
  std::ostringstream os;
  os << "focal " << fmtDouble(cam.focal) << "\n";
  os << "cx " << fmtDouble(cam.cx) << "\n";
  os << "cy " << fmtDouble(cam.cy) << "\n";
  std::string r = "R";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r += " " + fmtDouble(cam.R(i, j));
  os << r << "\n";
  os << "t " << fmtDouble(cam.t.x()) << " " << fmtDouble(cam.t.y()) << " "
     << fmtDouble(cam.t.z()) << "\n";
  os << "height " << cam.height << "\nwidth " << cam.width << "\n";
  return os.str();
}

Camera cameraFromKv(const std::map<std::string, std::string>& kv, const std::string& ctx) {
  Camera cam;
  cam.focal = std::stod(kvGet(kv, "focal", ctx));
  cam.cx = std::stod(kvGet(kv, "cx", ctx));
  cam.cy = std::stod(kvGet(kv, "cy", ctx));
  const std::vector<double> r = parseVector(kvGet(kv, "R", ctx));
  DD_CHECK(r.size() == 9, "bad camera rotation in " << ctx);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) cam.R(i, j) = r[static_cast<size_t>(3 * i + j)];
  const std::vector<double> t = parseVector(kvGet(kv, "t", ctx));
  DD_CHECK(t.size() == 3, "bad camera translation in " << ctx);
  cam.t = {t[0], t[1], t[2]};
  cam.height = std::stoi(kvGet(kv, "height", ctx));
  cam.width = std::stoi(kvGet(kv, "width", ctx));
  return cam;
}

std::string frameDirName(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d", index);
  return buf;
}

}  // namespace

void saveCorpus(const Corpus& c, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "frames");

  std::ostringstream root;
  root << "format corpus-v1\n";
  root << "cameras " << c.scene.cameras << "\n";
  root << "sequences " << c.scene.sequences << "\n";
  root << "timesteps " << c.scene.timesteps << "\n";
  root << "image_size " << c.scene.image_size << "\n";
  root << "proxy_resolution " << c.scene.proxy_resolution << "\n";
  root << "detail_resolution " << c.scene.detail_resolution << "\n";
  root << "z_id " << fmtVector(c.scene.z_id) << "\n";
  root << "ring_radius " << fmtDouble(c.scene.ring_radius) << "\n";
  root << "ring_height " << fmtDouble(c.scene.ring_height) << "\n";
  root << "fov_deg " << fmtDouble(c.scene.fov_deg) << "\n";
  root << "holdout_camera " << c.scene.holdout_camera << "\n";
  root << "holdout_sequence " << c.scene.holdout_sequence << "\n";
  root << "seed " << c.scene.seed << "\n";
  root << "frames " << c.frames.size() << "\n";
  root << "corpus_hash " << corpusHash(c) << "\n";
  writeTextFile((fs::path(dir) / "corpus.txt").string(), root.str());

  for (size_t i = 0; i < c.frames.size(); ++i) {
    const FrameRecord& f = c.frames[i];
    const fs::path fdir = fs::path(dir) / "frames" / frameDirName(static_cast<int>(i));
    fs::create_directories(fdir);

    std::ostringstream meta;
    meta << "frame " << f.frame << "\n";
    meta << "camera " << f.camera << "\n";
    meta << "sequence " << f.sequence << "\n";
    meta << "split " << splitName(f.split) << "\n";
    meta << "z_exp " << fmtVector(f.z_exp) << "\n";
    meta << cameraToText(f.cam);
    writeTextFile((fdir / "meta.txt").string(), meta.str());

    writePng((fdir / "gt.png").string(), f.gt, -1.0, 1.0);
    // Previews only; the exact arrays live in the tensor container.
    Tensor canon3 = Tensor::zeros({f.gbuffer.height(), f.gbuffer.width(), 3});
    for (int r = 0; r < f.gbuffer.height(); ++r)
      for (int cc = 0; cc < f.gbuffer.width(); ++cc)
        for (int k = 0; k < 3; ++k) canon3.at(r, cc, k) = f.gbuffer.canonical.at(r, cc, k);
    writePng((fdir / "normals.png").string(), f.gbuffer.normals, -1.0, 1.0);
    writePng((fdir / "canonical.png").string(), canon3, -1.5, 1.5);

    std::map<std::string, Tensor> tensors;
    tensors["gt"] = f.gt;
    tensors["normals"] = f.gbuffer.normals;
    tensors["depth"] = f.gbuffer.depth;
    tensors["canonical"] = f.gbuffer.canonical;
    tensors["mask"] = f.gbuffer.mask;
    writeTensorFile((fdir / "tensors.bin").string(), tensors);
  }
}

Corpus loadCorpus(const std::string& dir) {
  const std::string root_text = readTextFile((fs::path(dir) / "corpus.txt").string());
  const auto kv = parseKvText(root_text);
  DD_CHECK(kvGet(kv, "format", dir) == "corpus-v1", "unsupported corpus format in " << dir);

  Corpus c;
  c.scene.cameras = std::stoi(kvGet(kv, "cameras", dir));
  c.scene.sequences = std::stoi(kvGet(kv, "sequences", dir));
  c.scene.timesteps = std::stoi(kvGet(kv, "timesteps", dir));
  c.scene.image_size = std::stoi(kvGet(kv, "image_size", dir));
  c.scene.proxy_resolution = std::stoi(kvGet(kv, "proxy_resolution", dir));
  c.scene.detail_resolution = std::stoi(kvGet(kv, "detail_resolution", dir));
  c.scene.z_id = parseVector(kvGet(kv, "z_id", dir));
  c.scene.ring_radius = std::stod(kvGet(kv, "ring_radius", dir));
  c.scene.ring_height = std::stod(kvGet(kv, "ring_height", dir));
  c.scene.fov_deg = std::stod(kvGet(kv, "fov_deg", dir));
  c.scene.holdout_camera = std::stoi(kvGet(kv, "holdout_camera", dir));
  c.scene.holdout_sequence = std::stoi(kvGet(kv, "holdout_sequence", dir));
  c.scene.seed = std::stoull(kvGet(kv, "seed", dir));
  c.appearance = defaultAppearance(c.scene.z_id);

  const size_t count = std::stoull(kvGet(kv, "frames", dir));
  c.frames.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    const fs::path fdir = fs::path(dir) / "frames" / frameDirName(static_cast<int>(i));
    const auto meta = parseKvText(readTextFile((fdir / "meta.txt").string()));
    FrameRecord f;
    const std::string ctx = fdir.string();
    f.frame = std::stoi(kvGet(meta, "frame", ctx));
    f.camera = std::stoi(kvGet(meta, "camera", ctx));
    f.sequence = std::stoi(kvGet(meta, "sequence", ctx));
    f.split = splitFromName(kvGet(meta, "split", ctx));
    f.z_exp = parseVector(kvGet(meta, "z_exp", ctx));
    f.cam = cameraFromKv(meta, ctx);

    auto tensors = readTensorFile((fdir / "tensors.bin").string());
    auto take = [&tensors, &ctx](const std::string& name) {
      auto it = tensors.find(name);
      DD_CHECK(it != tensors.end(), "missing tensor '" << name << "' in " << ctx);
      return std::move(it->second);
    };
    f.gt = take("gt");
    f.gbuffer.normals = take("normals");
    f.gbuffer.depth = take("depth");
    f.gbuffer.canonical = take("canonical");
    f.gbuffer.mask = take("mask");
    c.frames.push_back(std::move(f));
  }

  const uint64_t stored = std::stoull(kvGet(kv, "corpus_hash", dir));
  DD_CHECK(stored == corpusHash(c), "corpus hash mismatch in " << dir);
  return c;
}

CropBox sampleCrop(int h, int w, double scale_min, double scale_max, Rng& rng) {
  DD_CHECK_ARG(0.0 < scale_min && scale_min <= scale_max && scale_max <= 1.0,
               "bad crop scale range");
  const int limit = std::min(h, w);
  const double s = rng.uniform(scale_min, scale_max);
  CropBox box;
  box.side = std::max(4, static_cast<int>(std::lround(s * limit)));
  box.side = std::min(box.side, limit);
  box.r0 = rng.uniformInt(0, h - box.side);
  box.c0 = rng.uniformInt(0, w - box.side);
  return box;
}

std::pair<int, int> cropSource(const CropBox& box, int i, int j, int out_h, int out_w) {
  const int si = box.r0 + static_cast<int>((i + 0.5) * box.side / out_h);
  const int sj = box.c0 + static_cast<int>((j + 0.5) * box.side / out_w);
  return {si, sj};
}

Tensor cropResizeNearest(const Tensor& img, const CropBox& box, int out_h, int out_w) {
  DD_CHECK_ARG(img.rank() == 2 || img.rank() == 3, "expected (H,W) or (H,W,C)");
  const int C = img.rank() == 3 ? img.dim(2) : 1;
  std::vector<int> shape = img.rank() == 3 ? std::vector<int>{out_h, out_w, C}
                                           : std::vector<int>{out_h, out_w};
  Tensor out(shape);
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) {
      auto [si, sj] = cropSource(box, i, j, out_h, out_w);
      if (img.rank() == 2) {
        out.at(i, j) = img.at(si, sj);
      } else {
        for (int c = 0; c < C; ++c) out.at(i, j, c) = img.at(si, sj, c);
      }
    }
  return out;
}

GBuffer cropResizeGBuffer(const GBuffer& g, const CropBox& box, int out_h, int out_w) {
  GBuffer out;
  out.normals = cropResizeNearest(g.normals, box, out_h, out_w);
  out.depth = cropResizeNearest(g.depth, box, out_h, out_w);
  out.canonical = cropResizeNearest(g.canonical, box, out_h, out_w);
  out.mask = cropResizeNearest(g.mask, box, out_h, out_w);
  return out;
}

void TrainConfig::validate() const {
  DD_CHECK_ARG(batch >= 1 && steps >= 0, "bad batch/steps");
  DD_CHECK_ARG(lr_net > 0 && lr_atlas > 0, "learning rates must be positive");
  DD_CHECK_ARG(0 < crop_min && crop_min <= crop_max && crop_max <= 1.0, "bad crop range");
  DD_CHECK_ARG(!(no_features && spherical_uv),
               "no_features and spherical_uv are mutually exclusive");
  DD_CHECK_ARG(base >= 8 && base % groups == 0, "base channels must be a multiple of groups");
  DD_CHECK_ARG(!mults.empty(), "empty channel multipliers");
  DD_CHECK_ARG(atlas_grid >= 2 && atlas_ambient_grid >= 2 && atlas_features >= 1,
               "bad atlas size");
  DD_CHECK_ARG(sched_steps >= 2, "schedule too short");
  DD_CHECK_ARG(beta_start >= 0 && beta_end > beta_start && beta_end < 1, "bad beta range");
}

nn::RendererConfig rendererConfigFor(const TrainConfig& cfg) {
  nn::RendererConfig rc;
  rc.img_ch = 3;
  rc.base = cfg.base;
  rc.mults = cfg.mults;
  rc.attn_levels = cfg.attn_levels;
  rc.token_dim = cfg.token_dim;
  rc.num_tokens = cfg.num_tokens;
  rc.exp_dim = kExpDims;
  rc.groups = cfg.groups;
  rc.mode = cfg.mode;
  rc.use_exp = !cfg.no_exp_cond;
  AtlasKind kind = cfg.no_features ? AtlasKind::kNone
                   : cfg.spherical_uv ? AtlasKind::kSphericalUv
                                      : AtlasKind::kTriPlane;
  FeatureAtlas probe;
  probe.kind = kind;
  probe.features = cfg.atlas_features;
  rc.control_ch = controlChannels(probe);
  return rc;
}

void TrainState::syncAtlasFromParams() {
  std::vector<Tensor*> targets = atlas.parameterTensors();
  DD_CHECK(targets.size() == atlas_params.size(), "atlas parameter count drifted");
  for (size_t i = 0; i < targets.size(); ++i) *targets[i] = atlas_params[i].value;
}

const GBuffer& TrainState::gbufferFor(const Corpus& corpus, int frame_index) const {
  if (!proxy_override.empty())
    return proxy_override[static_cast<size_t>(frame_index)];
  return corpus.frames[static_cast<size_t>(frame_index)].gbuffer;
}

TrainState makeTrainState(const Corpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  DD_CHECK_ARG(!corpus.frames.empty(), "empty corpus");

  TrainState st;
  st.cfg = cfg;
  st.model_cfg = rendererConfigFor(cfg);
  st.z_id = corpus.scene.z_id;

  Rng mrng(Rng::deriveSeed(cfg.seed, 1));
  st.model = std::make_unique<nn::RendererModel>(st.model_cfg, mrng);

  const AtlasKind kind = cfg.no_features  ? AtlasKind::kNone
                         : cfg.spherical_uv ? AtlasKind::kSphericalUv
                                            : AtlasKind::kTriPlane;
  const ProxyMesh neutral =
      buildMesh(corpus.scene.z_id, std::vector<double>(kExpDims, 0.0),
                corpus.scene.proxy_resolution);
  const auto bounds = canonicalBounds(neutral);
  Rng arng(Rng::deriveSeed(cfg.seed, 2));
  st.atlas = makeAtlas(kind, cfg.atlas_grid, cfg.atlas_ambient_grid, cfg.atlas_features,
                       bounds[0], bounds[1], arng, cfg.atlas_init_std);

  const char* plane_names[] = {"atlas.plane0", "atlas.plane1", "atlas.plane2"};
  std::vector<Tensor*> atlas_tensors = st.atlas.parameterTensors();
  for (size_t i = 0; i < atlas_tensors.size(); ++i) {
    const bool is_ambient = i + 1 == atlas_tensors.size();
    const std::string name = is_ambient ? "atlas.ambient" : plane_names[i];
    st.atlas_params.emplace_back(name, *atlas_tensors[i]);
  }

  st.schedule = makeSchedule(cfg.sched_steps, cfg.beta_start, cfg.beta_end);
  if (cfg.zero_snr) st.schedule = rescaleZeroSnr(st.schedule);

  std::vector<nn::Param*> net_group = cfg.mode == nn::CondMode::kPrior
                                          ? st.model->attachParams()
                                          : st.model->allParams();
  st.opt.addGroup(net_group, cfg.lr_net);
  if (!st.atlas_params.empty()) {
    std::vector<nn::Param*> atlas_group;
    for (nn::Param& p : st.atlas_params) atlas_group.push_back(&p);
    st.opt.addGroup(atlas_group, cfg.lr_atlas);
  }

  if (cfg.flame_like_proxy) {
    // Coarser stand-in proxy: half the resolution, same codes and cameras.
    const int coarse = std::max(4, corpus.scene.proxy_resolution / 2);
    st.proxy_override.reserve(corpus.frames.size());
    for (const FrameRecord& f : corpus.frames) {
      const ProxyMesh m = buildMesh(corpus.scene.z_id, f.z_exp, coarse);
      st.proxy_override.push_back(rasterize(m, f.cam));
    }
  }
  return st;
}

Tensor buildControl(const FeatureAtlas& atlas, const GBuffer& g) {
  const LookupResult lu = lookupFeatures(atlas, g);
  const Tensor hwc = assembleControl(g, lu, atlas);
  const int H = hwc.dim(0), W = hwc.dim(1), C = hwc.dim(2);
  Tensor chw = Tensor::zeros({C, H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < C; ++c)
        chw.data[static_cast<size_t>((c * H + i) * W + j)] = hwc.at(i, j, c);
  return chw;
}

Tensor imageToChw(const Tensor& hwc) {
  DD_CHECK_ARG(hwc.rank() == 3 && hwc.dim(2) == 3, "expected (H,W,3)");
  const int H = hwc.dim(0), W = hwc.dim(1);
  Tensor chw = Tensor::zeros({3, H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c)
        chw.data[static_cast<size_t>((c * H + i) * W + j)] = hwc.at(i, j, c);
  return chw;
}

Tensor chwToImage(const Tensor& chw) {
  DD_CHECK_ARG(chw.rank() == 3 && chw.dim(0) == 3, "expected (3,H,W)");
  const int H = chw.dim(1), W = chw.dim(2);
  Tensor hwc = Tensor::zeros({H, W, 3});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c)
        hwc.at(i, j, c) = chw.data[static_cast<size_t>((c * H + i) * W + j)];
  return hwc;
}

namespace {

// Gradient of the assembled control signal w.r.t. the atlas features is the
// leading featureChannels() slice; the geometry channels are constants.
void accumulateAtlasGrads(TrainState& st, const GBuffer& g, const Tensor& gcontrol_chw) {
  const int F = st.atlas.featureChannels();
  if (F == 0) return;
  const int H = gcontrol_chw.dim(1), W = gcontrol_chw.dim(2);
  Tensor upstream = Tensor::zeros({H, W, F});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < F; ++c)
        upstream.at(i, j, c) = gcontrol_chw.data[static_cast<size_t>((c * H + i) * W + j)];
  FeatureAtlas grads = atlasGradients(st.atlas, g, upstream);
  std::vector<Tensor*> gts = grads.parameterTensors();
  DD_CHECK(gts.size() == st.atlas_params.size(), "atlas gradient count mismatch");
  for (size_t i = 0; i < gts.size(); ++i) {
    Tensor& dst = st.atlas_params[i].grad;
    const Tensor& src = *gts[i];
    for (size_t k = 0; k < dst.data.size(); ++k) dst.data[k] += src.data[k];
  }
}

}  // namespace

double trainStep(TrainState& st, const Corpus& corpus, Rng& rng) {
  const std::vector<int> train_idx = corpus.indicesOf(Split::kTrain);
  DD_CHECK_ARG(!train_idx.empty(), "corpus has no training frames");
  const int H = corpus.height(), W = corpus.width();
  const int N = st.schedule.numSteps();

  st.model->zeroGrads();
  for (nn::Param& p : st.atlas_params) p.grad.setZero();

  double loss_sum = 0.0;
  const int B = st.cfg.batch;
  for (int b = 0; b < B; ++b) {
    const int idx = train_idx[static_cast<size_t>(
        rng.uniformInt(0, static_cast<int>(train_idx.size()) - 1))];
    const FrameRecord& f = corpus.frames[static_cast<size_t>(idx)];
    const GBuffer& gb = st.gbufferFor(corpus, idx);

    const CropBox box = sampleCrop(H, W, st.cfg.crop_min, st.cfg.crop_max, rng);
    const Tensor gt = cropResizeNearest(f.gt, box, H, W);
    const GBuffer gbc = cropResizeGBuffer(gb, box, H, W);

    const Tensor x0 = imageToChw(gt);
    const Tensor control = buildControl(st.atlas, gbc);

    const int tau = rng.uniformInt(1, N);
    Tensor eps = Tensor::randn(x0.shape, rng);
    const Tensor x_tau = addNoise(x0, eps, tau, st.schedule);
    const Tensor v = computeV(x0, eps, tau, st.schedule);

    const int orig_step = st.schedule.orig_steps[static_cast<size_t>(tau - 1)];
    const Tensor v_pred = st.model->denoise(x_tau, orig_step, control, f.z_exp);

    double item_loss = 0.0;
    Tensor gv = Tensor::zeros(v.shape);
    const double inv = 1.0 / static_cast<double>(v.numel());
    for (size_t k = 0; k < v.data.size(); ++k) {
      const double d = v_pred.data[k] - v.data[k];
      item_loss += d * d * inv;
      gv.data[k] = 2.0 * d * inv / B;
    }
    loss_sum += item_loss;

    const Tensor gcontrol = st.model->backward(gv);
    accumulateAtlasGrads(st, gbc, gcontrol);
  }

  const double loss = loss_sum / B;
  DD_CHECK(std::isfinite(loss), "training loss diverged (step " << st.step << ", loss " << loss
                                                                << "); aborting");
  st.opt.step();
  st.syncAtlasFromParams();
  ++st.step;
  return loss;
}

TrainTrace train(TrainState& st, const Corpus& corpus, int steps, const TrainLogger& log) {
  Rng rng(Rng::deriveSeed(st.cfg.seed, 3));
  TrainTrace trace;
  trace.losses.reserve(static_cast<size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    const double loss = trainStep(st, corpus, rng);
    trace.losses.push_back(loss);
    if (log) log(st.step, loss);
  }
  return trace;
}

TrainTrace pretrainBase(TrainState& st, const Corpus& corpus, int steps, const TrainLogger& log) {
  DD_CHECK_ARG(!corpus.frames.empty(), "empty corpus");
  const std::vector<int> train_idx = corpus.indicesOf(Split::kTrain);
  DD_CHECK_ARG(!train_idx.empty(), "corpus has no training frames");
  const int H = corpus.height(), W = corpus.width();
  const int N = st.schedule.numSteps();

  nn::Adam opt;
  opt.addGroup(st.model->baseParams(), st.cfg.lr_net);

  Rng rng(Rng::deriveSeed(st.cfg.seed, 4));
  TrainTrace trace;
  trace.losses.reserve(static_cast<size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    st.model->zeroGrads();
    double loss_sum = 0.0;
    const int B = st.cfg.batch;
    for (int b = 0; b < B; ++b) {
      const int idx = train_idx[static_cast<size_t>(
          rng.uniformInt(0, static_cast<int>(train_idx.size()) - 1))];
      const FrameRecord& f = corpus.frames[static_cast<size_t>(idx)];
      const CropBox box = sampleCrop(H, W, st.cfg.crop_min, st.cfg.crop_max, rng);
      const Tensor x0 = imageToChw(cropResizeNearest(f.gt, box, H, W));

      const int tau = rng.uniformInt(1, N);
      Tensor eps = Tensor::randn(x0.shape, rng);
      const Tensor x_tau = addNoise(x0, eps, tau, st.schedule);
      const Tensor v = computeV(x0, eps, tau, st.schedule);
      const int orig_step = st.schedule.orig_steps[static_cast<size_t>(tau - 1)];
      const Tensor v_pred = st.model->denoiseBase(x_tau, orig_step);

      double item_loss = 0.0;
      Tensor gv = Tensor::zeros(v.shape);
      const double inv = 1.0 / static_cast<double>(v.numel());
      for (size_t k = 0; k < v.data.size(); ++k) {
        const double d = v_pred.data[k] - v.data[k];
        item_loss += d * d * inv;
        gv.data[k] = 2.0 * d * inv / B;
      }
      loss_sum += item_loss;
      st.model->backwardBase(gv);
    }
    const double loss = loss_sum / B;
    DD_CHECK(std::isfinite(loss), "pretraining loss diverged at step " << s << "; aborting");
    opt.step();
    trace.losses.push_back(loss);
    if (log) log(s + 1, loss);
  }
  return trace;
}

Tensor sampleUnconditional(nn::RendererModel& model, const NoiseSchedule& sched, int h, int w,
                           Rng& rng) {
  Tensor x = Tensor::randn({model.cfg.img_ch, h, w}, rng);
  for (int tau = sched.numSteps(); tau >= 1; --tau) {
    const int orig_step = sched.orig_steps[static_cast<size_t>(tau - 1)];
    const Tensor v_pred = model.denoiseBase(x, orig_step);
    x = ddpmStep(x, v_pred, tau, sched, rng);
  }
  return x;
}

uint64_t paramsHash(const std::vector<nn::Param*>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const nn::Param* p : params) h = tensorHash(p->value, h);
  return h;
}

namespace {

std::string condModeName(nn::CondMode m) {
  return m == nn::CondMode::kPrior ? "prior" : "scratch";
}

nn::CondMode condModeFromName(const std::string& s) {
  if (s == "prior") return nn::CondMode::kPrior;
  if (s == "scratch") return nn::CondMode::kScratch;
  DD_CHECK_ARG(false, "unknown conditioning mode: " << s);
  return nn::CondMode::kPrior;
}

std::string fmtIntVector(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += " ";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parseIntVector(const std::string& s) {
  std::istringstream iss(s);
  std::vector<int> out;
  int v;
  while (iss >> v) out.push_back(v);
  return out;
}

std::string trainConfigToText(const TrainConfig& c) {
  std::ostringstream os;
  os << "version 1\n";
  os << "batch " << c.batch << "\n";
  os << "steps " << c.steps << "\n";
  os << "lr_net " << fmtDouble(c.lr_net) << "\n";
  os << "lr_atlas " << fmtDouble(c.lr_atlas) << "\n";
  os << "crop_min " << fmtDouble(c.crop_min) << "\n";
  os << "crop_max " << fmtDouble(c.crop_max) << "\n";
  os << "seed " << c.seed << "\n";
  os << "mode " << condModeName(c.mode) << "\n";
  os << "no_exp_cond " << (c.no_exp_cond ? 1 : 0) << "\n";
  os << "no_features " << (c.no_features ? 1 : 0) << "\n";
  os << "spherical_uv " << (c.spherical_uv ? 1 : 0) << "\n";
  os << "flame_like_proxy " << (c.flame_like_proxy ? 1 : 0) << "\n";
  os << "base " << c.base << "\n";
  os << "mults " << fmtIntVector(c.mults) << "\n";
  os << "attn_levels " << fmtIntVector(c.attn_levels) << "\n";
  os << "token_dim " << c.token_dim << "\n";
  os << "num_tokens " << c.num_tokens << "\n";
  os << "groups " << c.groups << "\n";
  os << "atlas_grid " << c.atlas_grid << "\n";
  os << "atlas_ambient_grid " << c.atlas_ambient_grid << "\n";
  os << "atlas_features " << c.atlas_features << "\n";
  os << "atlas_init_std " << fmtDouble(c.atlas_init_std) << "\n";
  os << "sched_steps " << c.sched_steps << "\n";
  os << "beta_start " << fmtDouble(c.beta_start) << "\n";
  os << "beta_end " << fmtDouble(c.beta_end) << "\n";
  os << "zero_snr " << (c.zero_snr ? 1 : 0) << "\n";
  return os.str();
}

TrainConfig trainConfigFromKv(const std::map<std::string, std::string>& kv,
                              const std::string& ctx) {
  TrainConfig c;
  c.batch = std::stoi(kvGet(kv, "batch", ctx));
  c.steps = std::stoi(kvGet(kv, "steps", ctx));
  c.lr_net = std::stod(kvGet(kv, "lr_net", ctx));
  c.lr_atlas = std::stod(kvGet(kv, "lr_atlas", ctx));
  c.crop_min = std::stod(kvGet(kv, "crop_min", ctx));
  c.crop_max = std::stod(kvGet(kv, "crop_max", ctx));
  c.seed = std::stoull(kvGet(kv, "seed", ctx));
  c.mode = condModeFromName(kvGet(kv, "mode", ctx));
  c.no_exp_cond = kvGet(kv, "no_exp_cond", ctx) == "1";
  c.no_features = kvGet(kv, "no_features", ctx) == "1";
  c.spherical_uv = kvGet(kv, "spherical_uv", ctx) == "1";
  c.flame_like_proxy = kvGet(kv, "flame_like_proxy", ctx) == "1";
  c.base = std::stoi(kvGet(kv, "base", ctx));
  c.mults = parseIntVector(kvGet(kv, "mults", ctx));
  c.attn_levels = parseIntVector(kvGet(kv, "attn_levels", ctx));
  c.token_dim = std::stoi(kvGet(kv, "token_dim", ctx));
  c.num_tokens = std::stoi(kvGet(kv, "num_tokens", ctx));
  c.groups = std::stoi(kvGet(kv, "groups", ctx));
  c.atlas_grid = std::stoi(kvGet(kv, "atlas_grid", ctx));
  c.atlas_ambient_grid = std::stoi(kvGet(kv, "atlas_ambient_grid", ctx));
  c.atlas_features = std::stoi(kvGet(kv, "atlas_features", ctx));
  c.atlas_init_std = std::stod(kvGet(kv, "atlas_init_std", ctx));
  c.sched_steps = std::stoi(kvGet(kv, "sched_steps", ctx));
  c.beta_start = std::stod(kvGet(kv, "beta_start", ctx));
  c.beta_end = std::stod(kvGet(kv, "beta_end", ctx));
  c.zero_snr = kvGet(kv, "zero_snr", ctx) == "1";
  return c;
}

Tensor doublesToTensor(const std::vector<double>& v) {
  Tensor t = Tensor::zeros({static_cast<int>(v.size())});
  t.data = v;
  return t;
}

Tensor intsToTensor(const std::vector<int>& v) {
  Tensor t = Tensor::zeros({static_cast<int>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t.data[i] = v[i];
  return t;
}

constexpr char kCheckpointMagic[] = "DFAVCKP1";

}  // namespace

std::string architectureMismatch(const TrainConfig& a, const TrainConfig& b) {
  auto diff = [](const std::string& field, auto va, auto vb) {
    std::ostringstream os;
    os << field << ": " << va << " vs " << vb;
    return os.str();
  };
  if (a.mode != b.mode) return diff("mode", condModeName(a.mode), condModeName(b.mode));
  if (a.no_exp_cond != b.no_exp_cond) return diff("no_exp_cond", a.no_exp_cond, b.no_exp_cond);
  if (a.no_features != b.no_features) return diff("no_features", a.no_features, b.no_features);
  if (a.spherical_uv != b.spherical_uv)
    return diff("spherical_uv", a.spherical_uv, b.spherical_uv);
  if (a.base != b.base) return diff("base", a.base, b.base);
  if (a.mults != b.mults) return diff("mults", fmtIntVector(a.mults), fmtIntVector(b.mults));
  if (a.attn_levels != b.attn_levels)
    return diff("attn_levels", fmtIntVector(a.attn_levels), fmtIntVector(b.attn_levels));
  if (a.token_dim != b.token_dim) return diff("token_dim", a.token_dim, b.token_dim);
  if (a.num_tokens != b.num_tokens) return diff("num_tokens", a.num_tokens, b.num_tokens);
  if (a.groups != b.groups) return diff("groups", a.groups, b.groups);
  if (a.atlas_grid != b.atlas_grid) return diff("atlas_grid", a.atlas_grid, b.atlas_grid);
  if (a.atlas_ambient_grid != b.atlas_ambient_grid)
    return diff("atlas_ambient_grid", a.atlas_ambient_grid, b.atlas_ambient_grid);
  if (a.atlas_features != b.atlas_features)
    return diff("atlas_features", a.atlas_features, b.atlas_features);
  return {};
}

void saveCheckpoint(const TrainState& st, const std::string& path) {
  std::map<std::string, Tensor> tensors;
  for (const nn::Param* p : st.model->allParams()) tensors["param." + p->name] = p->value;
  for (const nn::Param& p : st.atlas_params) tensors["state." + p.name] = p.value;

  tensors["sched.alphas"] = doublesToTensor(st.schedule.alphas);
  tensors["sched.alpha_bars"] = doublesToTensor(st.schedule.alpha_bars);
  tensors["sched.sqrt_alpha_bars"] = doublesToTensor(st.schedule.sqrt_alpha_bars);
  tensors["sched.sqrt_one_minus"] = doublesToTensor(st.schedule.sqrt_one_minus_alpha_bars);
  tensors["sched.orig_steps"] = intsToTensor(st.schedule.orig_steps);

  tensors["meta.z_id"] = doublesToTensor(st.z_id);
  tensors["meta.step"] = Tensor::full({1}, static_cast<double>(st.step));
  Tensor bounds = Tensor::zeros({2, 5});
  for (int d = 0; d < 5; ++d) {
    bounds.at(0, d) = st.atlas.lo[static_cast<size_t>(d)];
    bounds.at(1, d) = st.atlas.hi[static_cast<size_t>(d)];
  }
  tensors["meta.atlas_bounds"] = bounds;

  const std::string header = trainConfigToText(st.cfg);
  std::string body;
  const uint32_t hlen = static_cast<uint32_t>(header.size());
  body.append(reinterpret_cast<const char*>(&hlen), 4);
  body += header;
  body += serializeTensors(tensors);
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));

  std::ofstream out(path, std::ios::binary);
  DD_CHECK(out.good(), "cannot open " << path << " for writing");
  out.write(kCheckpointMagic, 8);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  DD_CHECK(out.good(), "write failed for " << path);
}

TrainState loadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  DD_CHECK(in.good(), "cannot open checkpoint " << path);
  char magic[8];
  in.read(magic, 8);
  DD_CHECK(in.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
           "not a checkpoint file: " << path);

  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  DD_CHECK(body.size() > 8, "truncated checkpoint: " << path);
  uint32_t stored_crc;
  std::memcpy(&stored_crc, body.data() + body.size() - 4, 4);
  body.resize(body.size() - 4);
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  DD_CHECK(crc == stored_crc, "checksum mismatch in checkpoint " << path);

  uint32_t hlen;
  DD_CHECK(body.size() >= 4, "truncated checkpoint header: " << path);
  std::memcpy(&hlen, body.data(), 4);
  DD_CHECK(body.size() >= 4 + hlen, "truncated checkpoint header: " << path);
  const std::string header = body.substr(4, hlen);
  const auto kv = parseKvText(header);
  DD_CHECK(kvGet(kv, "version", path) == "1",
           "unsupported checkpoint version " << kvGet(kv, "version", path) << " in " << path);
  const TrainConfig cfg = trainConfigFromKv(kv, path);

  auto tensors = deserializeTensors(body.substr(4 + hlen), path);
  auto take = [&tensors, &path](const std::string& name) {
    auto it = tensors.find(name);
    DD_CHECK(it != tensors.end(), "checkpoint " << path << " lacks tensor '" << name << "'");
    return std::move(it->second);
  };

  TrainState st;
  st.cfg = cfg;
  st.model_cfg = rendererConfigFor(cfg);
  Rng mrng(1);  // layout only; every parameter is overwritten below
  st.model = std::make_unique<nn::RendererModel>(st.model_cfg, mrng);
  for (nn::Param* p : st.model->allParams()) {
    Tensor t = take("param." + p->name);
    DD_CHECK(t.shape == p->value.shape, "checkpoint "
                                            << path << " has shape " << t.shapeStr() << " for "
                                            << p->name << ", expected " << p->value.shapeStr());
    p->value = std::move(t);
  }

  const Tensor bounds = take("meta.atlas_bounds");
  std::array<double, 5> lo{}, hi{};
  for (int d = 0; d < 5; ++d) {
    lo[static_cast<size_t>(d)] = bounds.at(0, d);
    hi[static_cast<size_t>(d)] = bounds.at(1, d);
  }
  const AtlasKind kind = cfg.no_features  ? AtlasKind::kNone
                         : cfg.spherical_uv ? AtlasKind::kSphericalUv
                                            : AtlasKind::kTriPlane;
  Rng arng(1);
  st.atlas = makeAtlas(kind, cfg.atlas_grid, cfg.atlas_ambient_grid, cfg.atlas_features, lo, hi,
                       arng, 0.0);
  const char* plane_names[] = {"atlas.plane0", "atlas.plane1", "atlas.plane2"};
  std::vector<Tensor*> atlas_tensors = st.atlas.parameterTensors();
  for (size_t i = 0; i < atlas_tensors.size(); ++i) {
    const bool is_ambient = i + 1 == atlas_tensors.size();
    const std::string name = is_ambient ? "atlas.ambient" : plane_names[i];
    Tensor t = take("state." + name);
    DD_CHECK(t.shape == atlas_tensors[i]->shape,
             "checkpoint " << path << " atlas tensor shape mismatch for " << name);
    st.atlas_params.emplace_back(name, t);
    *atlas_tensors[i] = std::move(t);
  }

  st.schedule.alphas = take("sched.alphas").data;
  st.schedule.alpha_bars = take("sched.alpha_bars").data;
  st.schedule.sqrt_alpha_bars = take("sched.sqrt_alpha_bars").data;
  st.schedule.sqrt_one_minus_alpha_bars = take("sched.sqrt_one_minus").data;
  const Tensor osteps = take("sched.orig_steps");
  st.schedule.orig_steps.clear();
  for (double v : osteps.data) st.schedule.orig_steps.push_back(static_cast<int>(v));

  st.z_id = take("meta.z_id").data;
  st.step = static_cast<int64_t>(take("meta.step").data[0]);

  std::vector<nn::Param*> net_group = cfg.mode == nn::CondMode::kPrior
                                          ? st.model->attachParams()
                                          : st.model->allParams();
  st.opt.addGroup(net_group, cfg.lr_net);
  if (!st.atlas_params.empty()) {
    std::vector<nn::Param*> atlas_group;
    for (nn::Param& p : st.atlas_params) atlas_group.push_back(&p);
    st.opt.addGroup(atlas_group, cfg.lr_atlas);
  }
  return st;
}

}  // namespace defdiff
