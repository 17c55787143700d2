#include "defdiff/rasterizer.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace defdiff {

namespace {

constexpr double kNearPlane = 1e-3;

double edgeFn(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

}  // namespace

GBuffer makeEmptyGBuffer(int height, int width) {
  DD_CHECK_ARG(height >= 8 && width >= 8, "gbuffer size too small");
  GBuffer g;
  g.normals = Tensor::zeros({height, width, 3});
  g.depth = Tensor::zeros({height, width});
  g.canonical = Tensor::zeros({height, width, 5});
  g.mask = Tensor::zeros({height, width});
  return g;
}

GBuffer rasterize(const ProxyMesh& mesh, const Camera& cam) {
  cam.validate();
  const int H = cam.height, W = cam.width;
  GBuffer g = makeEmptyGBuffer(H, W);
  Tensor zbuf = Tensor::full({H, W}, std::numeric_limits<double>::infinity());
  if (mesh.faces.empty()) return g;
  DD_CHECK_ARG(mesh.canonical.size() == mesh.vertices.size() &&
                   mesh.normals.size() == mesh.vertices.size(),
               "mesh attributes missing");

  for (const auto& f : mesh.faces) {
    Eigen::Vector3d xc[3], nc[3];
    Vec5 can[3];
    Eigen::Vector2d px[3];
    bool clipped = false;
    for (int k = 0; k < 3; ++k) {
      const size_t vi = static_cast<size_t>(f[k]);
      xc[k] = cam.worldToCam(mesh.vertices[vi]);
      if (xc[k].z() < kNearPlane) {
        clipped = true;
        break;
      }
      nc[k] = cam.R * mesh.normals[vi];
      can[k] = mesh.canonical[vi];
      px[k] = cam.projectCam(xc[k]);
    }
    if (clipped) continue;

    const double area = edgeFn(px[0], px[1], px[2]);
    if (area == 0.0) continue;

    const double min_x = std::min({px[0].x(), px[1].x(), px[2].x()});
    const double max_x = std::max({px[0].x(), px[1].x(), px[2].x()});
    const double min_y = std::min({px[0].y(), px[1].y(), px[2].y()});
    const double max_y = std::max({px[0].y(), px[1].y(), px[2].y()});
    const int j0 = std::max(0, static_cast<int>(std::floor(min_x)));
    const int j1 = std::min(W - 1, static_cast<int>(std::ceil(max_x)));
    const int i0 = std::max(0, static_cast<int>(std::floor(min_y)));
    const int i1 = std::min(H - 1, static_cast<int>(std::ceil(max_y)));
    if (j0 > j1 || i0 > i1) continue;

    const double inv_z[3] = {1.0 / xc[0].z(), 1.0 / xc[1].z(), 1.0 / xc[2].z()};
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const Eigen::Vector2d p(j + 0.5, i + 0.5);
        const double e0 = edgeFn(px[1], px[2], p);
        const double e1 = edgeFn(px[2], px[0], p);
        const double e2 = edgeFn(px[0], px[1], p);
        const bool inside = (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) ||
                            (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0);
        if (!inside) continue;
        const double w0 = e0 / area, w1 = e1 / area, w2 = e2 / area;
        const double denom = w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2];
        if (denom <= 0.0) continue;
        const double z = 1.0 / denom;
        if (z >= zbuf.at(i, j)) continue;
        zbuf.at(i, j) = z;

        const double pw0 = w0 * inv_z[0] * z;
        const double pw1 = w1 * inv_z[1] * z;
        const double pw2 = w2 * inv_z[2] * z;
        Eigen::Vector3d n = pw0 * nc[0] + pw1 * nc[1] + pw2 * nc[2];
        const double nl = n.norm();
        n = nl > 1e-14 ? Eigen::Vector3d(n / nl) : Eigen::Vector3d(0.0, 0.0, -1.0);
        for (int k = 0; k < 3; ++k) g.normals.at(i, j, k) = n[k];
        for (int k = 0; k < 5; ++k)
          g.canonical.at(i, j, k) = pw0 * can[0][k] + pw1 * can[1][k] + pw2 * can[2][k];
        g.depth.at(i, j) = z;
        g.mask.at(i, j) = 1.0;
      }
    }
  }
  return g;
}

std::optional<RayHit> raycastOracle(const ProxyMesh& mesh, const Camera& cam, int row, int col) {
  DD_CHECK_ARG(row >= 0 && row < cam.height && col >= 0 && col < cam.width,
               "pixel out of bounds");
  const Eigen::Vector3d org = cam.camCenter();
  const Eigen::Vector3d dir = cam.pixelRayDirWorld(col + 0.5, row + 0.5);

  double best_t = std::numeric_limits<double>::infinity();
  int best_face = -1;
  double best_u = 0.0, best_v = 0.0;
  for (size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const auto& f = mesh.faces[fi];
    const Eigen::Vector3d& a = mesh.vertices[static_cast<size_t>(f[0])];
    const Eigen::Vector3d e1 = mesh.vertices[static_cast<size_t>(f[1])] - a;
    const Eigen::Vector3d e2 = mesh.vertices[static_cast<size_t>(f[2])] - a;
    const Eigen::Vector3d pv = dir.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-14) continue;
    const double inv_det = 1.0 / det;
    const Eigen::Vector3d tv = org - a;
    const double u = tv.dot(pv) * inv_det;
    if (u < 0.0 || u > 1.0) continue;
    const Eigen::Vector3d qv = tv.cross(e1);
    const double v = dir.dot(qv) * inv_det;
    if (v < 0.0 || u + v > 1.0) continue;
    const double t = e2.dot(qv) * inv_det;
    if (t > kNearPlane && t < best_t) {
      best_t = t;
      best_face = static_cast<int>(fi);
      best_u = u;
      best_v = v;
    }
  }
  if (best_face < 0) return std::nullopt;

  const auto& f = mesh.faces[static_cast<size_t>(best_face)];
  const double w0 = 1.0 - best_u - best_v, w1 = best_u, w2 = best_v;
  RayHit hit;
  hit.face = best_face;
  hit.barycentric = {w0, w1, w2};
  const Eigen::Vector3d pt = org + best_t * dir;
  hit.depth = cam.worldToCam(pt).z();
  Eigen::Vector3d n = w0 * mesh.normals[static_cast<size_t>(f[0])] +
                      w1 * mesh.normals[static_cast<size_t>(f[1])] +
                      w2 * mesh.normals[static_cast<size_t>(f[2])];
  hit.normal_cam = (cam.R * n).normalized();
  hit.canonical = w0 * mesh.canonical[static_cast<size_t>(f[0])] +
                  w1 * mesh.canonical[static_cast<size_t>(f[1])] +
                  w2 * mesh.canonical[static_cast<size_t>(f[2])];
  return hit;
}

AppearanceConfig defaultAppearance(const std::vector<double>& z_id) {
  AppearanceConfig app;
  const double tex = z_id.size() > 3 ? z_id[3] : 0.0;
  app.seed = 0.37 + 0.21 * tex;
  app.base_tone = Eigen::Vector3d(0.82 + 0.05 * tex, 0.62 - 0.04 * tex, 0.52 + 0.03 * tex);

  // Marker directions on the template sphere; pinned to the identity's
  // canonical surface so they move rigidly with the head.
  const std::array<Eigen::Vector3d, 5> dirs = {
      Eigen::Vector3d(0.0, -0.08, 1.0).normalized(),   // nose tip
      Eigen::Vector3d(0.0, -0.60, 0.80).normalized(),  // chin
      Eigen::Vector3d(-0.50, 0.02, 0.87).normalized(), // left cheek
      Eigen::Vector3d(0.50, 0.02, 0.87).normalized(),  // right cheek
      Eigen::Vector3d(0.0, 0.50, 0.87).normalized(),   // forehead
  };
  const std::array<Eigen::Vector3d, 5> colors = {
      Eigen::Vector3d(0.92, 0.05, 0.05), Eigen::Vector3d(0.05, 0.80, 0.10),
      Eigen::Vector3d(0.10, 0.20, 0.95), Eigen::Vector3d(0.95, 0.85, 0.05),
      Eigen::Vector3d(0.90, 0.10, 0.85)};
  for (size_t k = 0; k < dirs.size(); ++k)
    app.markers.push_back({shapeIdentity(dirs[k], z_id), colors[k], 0.06});
  return app;
}

Eigen::Vector3d albedoAt(const Eigen::Vector3d& p, const AppearanceConfig& app) {
  const double phase = 2.0 * M_PI * app.seed;
  const double stripes =
      1.0 +
      app.stripe_amp * std::sin(app.stripe_freq.x() * p.x() + phase) *
          std::sin(app.stripe_freq.y() * p.y() + 0.7 * phase + 0.4) +
      0.5 * app.stripe_amp * std::sin(app.stripe_freq.z() * p.z() + 1.3 * phase + 1.1);
  Eigen::Vector3d col = app.base_tone * stripes;
  for (const auto& m : app.markers) {
    const double w = std::exp(-(p - m.pos).squaredNorm() / (2.0 * m.sigma * m.sigma));
    const double blend = std::min(1.0, 1.6 * w);
    col = (1.0 - blend) * col + blend * m.color;
  }
  return col.cwiseMax(0.0).cwiseMin(1.0);
}

Tensor shadeGroundtruth(const ProxyMesh& mesh, const Camera& cam, const AppearanceConfig& app) {
  const GBuffer g = rasterize(mesh, cam);
  const int H = g.height(), W = g.width();
  Tensor img = Tensor::full({H, W, 3}, app.background);
  const Eigen::Vector3d l_cam = (cam.R * app.light_dir.normalized()).normalized();
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      if (g.mask.at(i, j) == 0.0) continue;
      const Eigen::Vector3d p(g.canonical.at(i, j, 0), g.canonical.at(i, j, 1),
                              g.canonical.at(i, j, 2));
      const Eigen::Vector3d n(g.normals.at(i, j, 0), g.normals.at(i, j, 1),
                              g.normals.at(i, j, 2));
      const Eigen::Vector3d albedo = albedoAt(p, app);
      const double shade = app.ambient + (1.0 - app.ambient) * std::max(0.0, n.dot(l_cam));
      for (int k = 0; k < 3; ++k) img.at(i, j, k) = 2.0 * albedo[k] * shade - 1.0;
    }
  }
  return img;
}

}  // namespace defdiff
