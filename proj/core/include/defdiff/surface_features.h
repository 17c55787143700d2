#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "defdiff/rasterizer.h"
#include "defdiff/tensor.h"

namespace defdiff {

enum class AtlasKind { kTriPlane, kSphericalUv, kNone };

// Learnable surface features. TriPlane mode holds three G x G x F planes
// (XY, XZ, YZ projections of the spatial canonical coordinate) plus a
// Ga x Ga x F ambient map queried by the two ambient coordinates. The
// spherical ablation replaces the three planes with a single longitude /
// latitude map; kNone carries no features at all (geometry-only control).
struct FeatureAtlas {
  AtlasKind kind = AtlasKind::kTriPlane;
  int grid = 0;          // G
  int ambient_grid = 0;  // Ga
  int features = 0;      // F
  std::vector<Tensor> planes;  // 3 for triplane, 1 for spherical, 0 for none
  Tensor ambient;              // (Ga, Ga, F), absent for kNone
  // Per-dimension bounds normalizing canonical coords to [0,1]; dims 0..2
  // spatial, 3..4 ambient. Queries outside are clamped and counted.
  std::array<double, 5> lo{};
  std::array<double, 5> hi{};

  // Feature channels this atlas contributes to the control signal.
  int featureChannels() const;
  std::vector<Tensor*> parameterTensors();
  std::vector<const Tensor*> parameterTensors() const;
};

// Bounds covering the canonical-space AABB of the neutral mesh for the
// spatial dims (dilated 10%) and a fixed generous range for the ambient dims.
std::array<std::array<double, 5>, 2> canonicalBounds(const ProxyMesh& neutral_mesh);

FeatureAtlas makeAtlas(AtlasKind kind, int grid, int ambient_grid, int features,
                       const std::array<double, 5>& lo, const std::array<double, 5>& hi,
                       Rng& rng, double init_std = 0.01);

struct LookupResult {
  Tensor feat;      // (H, W, planes*F): per-plane features, channel-concatenated
  Tensor feat_amb;  // (H, W, F)
  int64_t oob_count = 0;  // clamped queries
};

// Bilinear, corner-aligned lookup of every masked pixel's canonical
// coordinate. Plane results are channel-concatenated, never summed. Masked
// (background) pixels yield zeros.
LookupResult lookupFeatures(const FeatureAtlas& atlas, const GBuffer& g);

// Channel layout of the control signal:
//   [plane features | ambient F | canonical 5 | depth 1 | normals 3]
// With triplane F=16 that is 16*(3+1) + 5 + 1 + 3 = 73 channels.
int controlChannels(const FeatureAtlas& atlas);
Tensor assembleControl(const GBuffer& g, const LookupResult& lu, const FeatureAtlas& atlas);

// Scatter-adds bilinear weights times the upstream gradient into atlas-shaped
// gradient tensors. `upstream` is shaped like the concatenation of
// lookup().feat and lookup().feat_amb, (H, W, featureChannels()).
FeatureAtlas atlasGradients(const FeatureAtlas& atlas, const GBuffer& g, const Tensor& upstream);

}  // namespace defdiff
