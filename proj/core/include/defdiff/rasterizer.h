#pragma once

#include <optional>
#include <vector>

#include "defdiff/camera.h"
#include "defdiff/proxy_head.h"
#include "defdiff/tensor.h"

namespace defdiff {

// Per-pixel geometry buffers. Normals are camera-space and unit length where
// mask = 1; depth is positive camera-space z; everything is zero at
// background pixels.
struct GBuffer {
  Tensor normals;    // (H, W, 3)
  Tensor depth;      // (H, W)
  Tensor canonical;  // (H, W, 5)
  Tensor mask;       // (H, W)

  int height() const { return mask.dim(0); }
  int width() const { return mask.dim(1); }
};

GBuffer makeEmptyGBuffer(int height, int width);

// Z-buffered rasterization with perspective-correct interpolation of vertex
// normals and canonical coordinates. No backface culling; triangles with a
// vertex closer than the near plane are skipped whole.
GBuffer rasterize(const ProxyMesh& mesh, const Camera& cam);

struct RayHit {
  double depth = 0.0;             // camera-space z
  Eigen::Vector3d normal_cam;     // unit
  Vec5 canonical;
  int face = -1;
  Eigen::Vector3d barycentric;    // weights of the face's three vertices
};

// Exhaustive ray-triangle intersection through the pixel center; the nearest
// hit carries the same interpolated attributes rasterize produces.
std::optional<RayHit> raycastOracle(const ProxyMesh& mesh, const Camera& cam, int row, int col);

struct Marker {
  Eigen::Vector3d pos;      // canonical spatial coordinates, on the surface
  Eigen::Vector3d color;    // albedo in [0,1]
  double sigma = 0.06;
};

struct AppearanceConfig {
  Eigen::Vector3d base_tone{0.82, 0.62, 0.52};
  double stripe_amp = 0.18;
  Eigen::Vector3d stripe_freq{9.0, 11.0, 7.0};
  double seed = 0.0;  // phase seed, fed from the identity's texture component
  std::vector<Marker> markers;
  Eigen::Vector3d light_dir{0.4, 0.5, 0.75};  // world space, toward the light
  double ambient = 0.25;
  double background = -0.85;  // constant background in [-1,1] output space
};

// Standard appearance for an identity: tone/phase seeded by the identity's
// texture component, five colored marker dots pinned to canonical surface
// points (the keypoints the evaluation tracks).
AppearanceConfig defaultAppearance(const std::vector<double>& z_id);

// Procedural albedo at a canonical surface point, in [0,1].
Eigen::Vector3d albedoAt(const Eigen::Vector3d& p_canonical, const AppearanceConfig& app);

// Lambertian-shaded RGB image in [-1,1], (H, W, 3). The texture is sampled in
// canonical space so it sticks to the surface across expressions.
Tensor shadeGroundtruth(const ProxyMesh& mesh, const Camera& cam, const AppearanceConfig& app);

}  // namespace defdiff
