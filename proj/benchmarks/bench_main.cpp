// Microbenchmarks for the pipeline hot paths. Workload sizes mirror the
// acceptance runs (resolution 8 proxy, 64 px images, the small trainer model)
// so the numbers predict real step times.

#include <benchmark/benchmark.h>

#include "defdiff/eval.h"
#include "defdiff/pipeline.h"
#include "defdiff/proxy_head.h"
#include "defdiff/rasterizer.h"
#include "defdiff/schedule.h"

using namespace defdiff;

namespace {

const std::vector<double> kZid{0.3, -0.2, 0.6, 0.4};
const std::vector<double> kZexp{0.4, 0.1, -0.1, 0.2, 0.0, 0.1, 0.05, -0.1};

Camera benchCamera(int size) {
  return ringCamera(1, 8, 2.6, 0.35, Eigen::Vector3d::Zero(), 32.0, size, size);
}

TrainConfig benchTrainConfig() {
  TrainConfig tc;
  tc.batch = 2;
  tc.mode = nn::CondMode::kScratch;
  tc.base = 16;
  tc.mults = {1, 2};
  tc.attn_levels = {1};
  tc.token_dim = 16;
  tc.num_tokens = 4;
  tc.atlas_grid = 12;
  tc.atlas_ambient_grid = 6;
  tc.atlas_features = 8;
  tc.sched_steps = 20;
  tc.seed = 5;
  return tc;
}

SceneConfig benchScene() {
  SceneConfig sc;
  sc.cameras = 2;
  sc.sequences = 2;
  sc.timesteps = 4;
  sc.image_size = 32;
  sc.proxy_resolution = 6;
  sc.detail_resolution = 6;
  sc.seed = 7;
  return sc;
}

void BM_BuildMesh(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  for (auto _ : state) {
    const ProxyMesh mesh = buildMesh(kZid, kZexp, res);
    benchmark::DoNotOptimize(mesh.vertices.data());
  }
}
BENCHMARK(BM_BuildMesh)->Arg(8)->Arg(16);

void BM_Rasterize(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const ProxyMesh mesh = buildMesh(kZid, kZexp, 8);
  const Camera cam = benchCamera(size);
  for (auto _ : state) {
    const GBuffer g = rasterize(mesh, cam);
    benchmark::DoNotOptimize(g.depth.data.data());
  }
}
BENCHMARK(BM_Rasterize)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_SignedDistance(benchmark::State& state) {
  const ProxyMesh mesh = buildMesh(kZid, kZexp, 8);
  Rng rng(3);
  std::vector<Eigen::Vector3d> queries;
  for (int i = 0; i < 64; ++i)
    queries.emplace_back(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
  size_t k = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(signedDistance(mesh, queries[k % queries.size()]));
    ++k;
  }
}
BENCHMARK(BM_SignedDistance);

void BM_BuildControl(benchmark::State& state) {
  const ProxyMesh mesh = buildMesh(kZid, kZexp, 8);
  const Camera cam = benchCamera(64);
  const GBuffer g = rasterize(mesh, cam);
  Rng rng(11);
  const auto bounds = canonicalBounds(buildMesh(kZid, std::vector<double>(kExpDims, 0.0), 8));
  const FeatureAtlas atlas =
      makeAtlas(AtlasKind::kTriPlane, 24, 12, 16, bounds[0], bounds[1], rng, 0.01);
  for (auto _ : state) {
    const Tensor control = buildControl(atlas, g);
    benchmark::DoNotOptimize(control.data.data());
  }
}
BENCHMARK(BM_BuildControl)->Unit(benchmark::kMillisecond);

void BM_DdpmStep(benchmark::State& state) {
  const NoiseSchedule sched = rescaleZeroSnr(makeSchedule(50, 1e-3, 0.25));
  Rng rng(17);
  const Tensor x = Tensor::randn({3, 64, 64}, rng);
  const Tensor v = Tensor::randn({3, 64, 64}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ddpmStep(x, v, 25, sched, rng).data.data());
  }
}
BENCHMARK(BM_DdpmStep);

void BM_UNetDenoise(benchmark::State& state) {
  const TrainConfig tc = benchTrainConfig();
  Rng rng(23);
  nn::RendererModel model(rendererConfigFor(tc), rng);
  const int size = static_cast<int>(state.range(0));
  const Tensor x = Tensor::randn({3, size, size}, rng);
  const Tensor control = Tensor::randn({model.cfg.control_ch, size, size}, rng, 0.1);
  for (auto _ : state) {
    const Tensor v = model.denoise(x, 10, control, kZexp);
    benchmark::DoNotOptimize(v.data.data());
  }
}
BENCHMARK(BM_UNetDenoise)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_UNetBackward(benchmark::State& state) {
  const TrainConfig tc = benchTrainConfig();
  Rng rng(29);
  nn::RendererModel model(rendererConfigFor(tc), rng);
  const int size = 32;
  const Tensor x = Tensor::randn({3, size, size}, rng);
  const Tensor control = Tensor::randn({model.cfg.control_ch, size, size}, rng, 0.1);
  const Tensor gout = Tensor::randn({3, size, size}, rng);
  for (auto _ : state) {
    model.zeroGrads();
    const Tensor v = model.denoise(x, 10, control, kZexp);
    benchmark::DoNotOptimize(v.data.data());
    const Tensor gcontrol = model.backward(gout);
    benchmark::DoNotOptimize(gcontrol.data.data());
  }
}
BENCHMARK(BM_UNetBackward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const Corpus corpus = synthesizeDataset(benchScene());
  TrainState st = makeTrainState(corpus, benchTrainConfig());
  Rng rng(31);
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainStep(st, corpus, rng));
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
