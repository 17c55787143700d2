#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "defdiff/rasterizer.h"

using namespace defdiff;

namespace {

std::vector<double> zeros(int n) { return std::vector<double>(static_cast<size_t>(n), 0.0); }

Camera frontCamera(int res = 64) {
  return lookAtCamera({0.0, 0.0, 3.2}, {0.0, 0.0, 0.0}, 45.0, res, res);
}

// Minimal hand-built mesh: one or two triangles with constant attributes.
ProxyMesh triMesh(const std::vector<Eigen::Vector3d>& verts,
                  const std::vector<std::array<int, 3>>& faces) {
  ProxyMesh m;
  m.vertices = verts;
  m.faces = faces;
  m.canonical.resize(verts.size());
  m.normals.resize(verts.size());
  for (size_t i = 0; i < verts.size(); ++i) {
    m.canonical[i] << verts[i].x(), verts[i].y(), verts[i].z(), 0.0, 0.0;
    m.normals[i] = Eigen::Vector3d(0.0, 0.0, 1.0);
  }
  return m;
}

}  // namespace

TEST_CASE("camera basis is orthonormal with det +1 and projects the target to center") {
  Camera cam = frontCamera();
  cam.validate();
  const Eigen::Vector3d tc = cam.worldToCam({0, 0, 0});
  CHECK(tc.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(tc.y() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(tc.z() == doctest::Approx(3.2).epsilon(1e-12));
  const Eigen::Vector2d px = cam.projectCam(tc);
  CHECK(px.x() == doctest::Approx(32.0));
  CHECK(px.y() == doctest::Approx(32.0));
  // World up projects upward on screen (smaller row).
  const Eigen::Vector2d up_px = cam.projectCam(cam.worldToCam({0.0, 0.5, 0.0}));
  CHECK(up_px.y() < 32.0);
}

TEST_CASE("ring cameras all look at the target") {
  for (int k = 0; k < 8; ++k) {
    Camera cam = ringCamera(k, 8, 3.0, 0.4, {0, 0.1, 0}, 40.0, 64, 64);
    cam.validate();
    const Eigen::Vector3d tc = cam.worldToCam({0, 0.1, 0});
    CHECK(std::abs(tc.x()) < 1e-9);
    CHECK(std::abs(tc.y()) < 1e-9);
    CHECK(tc.z() > 2.9);
  }
}

TEST_CASE("empty mesh rasterizes to an all-zero gbuffer") {
  ProxyMesh empty;
  GBuffer g = rasterize(empty, frontCamera(16));
  for (double v : g.mask.data) CHECK(v == 0.0);
  for (double v : g.depth.data) CHECK(v == 0.0);
}

TEST_CASE("z-buffer keeps the nearer of two overlapping triangles") {
  // Two large triangles facing the camera, one at z=0 and one at z=1
  // (farther from the camera at z=3.2 is z=0 plane? camera looks along -z
  // from +z, so world z=1 is nearer to the camera).
  auto mk_tri = [](double z, double canon_tag) {
    std::vector<Eigen::Vector3d> v = {{-1.5, -1.5, z}, {1.5, -1.5, z}, {0.0, 1.5, z}};
    ProxyMesh m = triMesh(v, {{0, 1, 2}});
    for (auto& c : m.canonical) c[3] = canon_tag;
    return m;
  };
  ProxyMesh near_tri = mk_tri(1.0, 7.0);
  ProxyMesh far_tri = mk_tri(0.0, 3.0);
  ProxyMesh both = near_tri;
  const int base = near_tri.vertexCount();
  for (const auto& v : far_tri.vertices) both.vertices.push_back(v);
  for (const auto& c : far_tri.canonical) both.canonical.push_back(c);
  for (const auto& n : far_tri.normals) both.normals.push_back(n);
  both.faces.push_back({base + 0, base + 1, base + 2});

  Camera cam = frontCamera();
  GBuffer g = rasterize(both, cam);
  const int i = 32, j = 32;
  REQUIRE(g.mask.at(i, j) == 1.0);
  CHECK(g.canonical.at(i, j, 3) == 7.0);
  CHECK(g.depth.at(i, j) == doctest::Approx(2.2).epsilon(1e-9));
  // Swapping face order must not change the winner.
  std::swap(both.faces[0], both.faces[1]);
  GBuffer g2 = rasterize(both, cam);
  CHECK(g2.canonical.at(i, j, 3) == 7.0);
}

TEST_CASE("gbuffer invariants hold on a real head") {
  ProxyMesh m = buildMesh(zeros(kIdDims), zeros(kExpDims), 8);
  Camera cam = frontCamera();
  GBuffer g = rasterize(m, cam);
  int covered = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      if (g.mask.at(i, j) == 0.0) {
        CHECK(g.depth.at(i, j) == 0.0);
        for (int k = 0; k < 3; ++k) CHECK(g.normals.at(i, j, k) == 0.0);
        for (int k = 0; k < 5; ++k) CHECK(g.canonical.at(i, j, k) == 0.0);
      } else {
        covered++;
        CHECK(g.depth.at(i, j) > 0.0);
        const double nn = std::sqrt(g.normals.at(i, j, 0) * g.normals.at(i, j, 0) +
                                    g.normals.at(i, j, 1) * g.normals.at(i, j, 1) +
                                    g.normals.at(i, j, 2) * g.normals.at(i, j, 2));
        CHECK(std::abs(nn - 1.0) < 1e-9);
      }
    }
  // The head should cover a sizable part of the frame.
  CHECK(covered > 600);
}

TEST_CASE("rasterizer agrees with the ray-casting oracle on interior pixels") {
  Rng rng(201);
  std::vector<double> z_id(kIdDims), z_exp(kExpDims);
  for (double& v : z_id) v = rng.uniform(-0.8, 0.8);
  for (double& v : z_exp) v = rng.uniform(-0.8, 0.8);
  ProxyMesh m = buildMesh(z_id, z_exp, 8);
  Camera cam = ringCamera(1, 3, 3.0, 0.3, {0, 0, 0}, 45.0, 64, 64);
  GBuffer g = rasterize(m, cam);

  int compared = 0, agree = 0;
  for (int i = 1; i < 63; ++i)
    for (int j = 1; j < 63; ++j) {
      // Interior test: full 3x3 neighborhood covered so silhouettes drop out.
      bool interior = true;
      for (int di = -1; di <= 1 && interior; ++di)
        for (int dj = -1; dj <= 1; ++dj)
          if (g.mask.at(i + di, j + dj) == 0.0) {
            interior = false;
            break;
          }
      if (!interior) continue;
      auto hit = raycastOracle(m, cam, i, j);
      REQUIRE(hit.has_value());
      compared++;
      const double depth_rel = std::abs(hit->depth - g.depth.at(i, j)) / hit->depth;
      double attr = 0.0;
      for (int k = 0; k < 5; ++k)
        attr = std::max(attr, std::abs(hit->canonical[k] - g.canonical.at(i, j, k)));
      for (int k = 0; k < 3; ++k)
        attr = std::max(attr, std::abs(hit->normal_cam[k] - g.normals.at(i, j, k)));
      if (depth_rel <= 1e-4 && attr <= 1e-4) agree++;
    }
  REQUIRE(compared > 400);
  CHECK(static_cast<double>(agree) / compared >= 0.995);
}

TEST_CASE("oracle barycentric weights sum to one and misses are reported") {
  ProxyMesh m = triMesh({{-0.5, -0.5, 0.0}, {0.5, -0.5, 0.0}, {0.0, 0.5, 0.0}}, {{0, 1, 2}});
  Camera cam = frontCamera();
  auto hit = raycastOracle(m, cam, 32, 32);
  REQUIRE(hit.has_value());
  CHECK(hit->barycentric.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(!raycastOracle(m, cam, 0, 0).has_value());
}

TEST_CASE("degenerate triangles are skipped silently") {
  ProxyMesh m = triMesh({{-0.5, -0.5, 0.0}, {0.5, 0.5, 0.0}, {0.0, 0.0, 0.0}}, {{0, 1, 2}});
  // Colinear points: zero area.
  m.vertices[2] = 0.5 * (m.vertices[0] + m.vertices[1]);
  GBuffer g = rasterize(m, frontCamera(16));
  for (double v : g.mask.data) CHECK(v == 0.0);
}

TEST_CASE("shaded image is deterministic, bounded, and brightest facing the light") {
  ProxyMesh m = buildMesh(zeros(kIdDims), zeros(kExpDims), 8);
  Camera cam = frontCamera();
  AppearanceConfig app = defaultAppearance(zeros(kIdDims));
  Tensor img1 = shadeGroundtruth(m, cam, app);
  Tensor img2 = shadeGroundtruth(m, cam, app);
  CHECK(maxAbsDiff(img1, img2) == 0.0);
  for (double v : img1.data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }

  // Full-white albedo facing the light gives the brightest possible value.
  AppearanceConfig white;
  white.base_tone = {1.0, 1.0, 1.0};
  white.stripe_amp = 0.0;
  white.markers.clear();
  ProxyMesh tri = triMesh({{-1.5, -1.5, 0.0}, {1.5, -1.5, 0.0}, {0.0, 1.5, 0.0}}, {{0, 1, 2}});
  // Light from straight ahead (+z), normals already +z.
  white.light_dir = {0.0, 0.0, 1.0};
  Tensor flat = shadeGroundtruth(tri, frontCamera(), white);
  double max_v = -2.0;
  for (double v : flat.data) max_v = std::max(max_v, v);
  CHECK(max_v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("canonical texture sticks to the surface across expressions") {
  // Track the nose-tip marker through two different expressions: the albedo
  // sampled at the pixel it rasterizes to must be the marker color both times.
  std::vector<double> z_id = zeros(kIdDims);
  AppearanceConfig app = defaultAppearance(z_id);
  const Eigen::Vector3d marker_can = app.markers[0].pos;
  Camera cam = frontCamera(128);

  for (double jaw : {0.0, 1.0}) {
    std::vector<double> z_exp = zeros(kExpDims);
    z_exp[0] = jaw;
    z_exp[7] = 0.3;  // some yaw so the pose genuinely changes
    ProxyMesh m = buildMesh(z_id, z_exp, 16);
    const Eigen::Vector3d posed = deformExpression(marker_can, z_exp);
    const Eigen::Vector2d px = cam.projectCam(cam.worldToCam(posed));
    const int i = static_cast<int>(std::lround(px.y() - 0.5));
    const int j = static_cast<int>(std::lround(px.x() - 0.5));
    GBuffer g = rasterize(m, cam);
    REQUIRE(g.mask.at(i, j) == 1.0);
    const Eigen::Vector3d can(g.canonical.at(i, j, 0), g.canonical.at(i, j, 1),
                              g.canonical.at(i, j, 2));
    // The rasterized canonical coordinate lands on the marker, so the albedo
    // there is the marker color.
    const Eigen::Vector3d alb = albedoAt(can, app);
    CHECK((alb - app.markers[0].color).norm() < 0.15);
  }
}
