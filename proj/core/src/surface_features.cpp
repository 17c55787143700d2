#include "defdiff/surface_features.h"

#include <cmath>

namespace defdiff {

namespace {

// Plane p projects the spatial canonical coordinate onto dims (row, col).
constexpr int kPlaneDims[3][2] = {{0, 1}, {0, 2}, {1, 2}};

struct BilinearTap {
  int i0, j0, i1, j1;
  double w00, w01, w10, w11;
  bool clamped;
};

// Corner-aligned: u in [0,1] maps to grid coordinate u * (G - 1).
BilinearTap tap(double u, double v, int grid) {
  BilinearTap t;
  t.clamped = u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0;
  u = std::clamp(u, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  const double x = u * (grid - 1), y = v * (grid - 1);
  t.i0 = std::min(static_cast<int>(x), grid - 2);
  t.j0 = std::min(static_cast<int>(y), grid - 2);
  t.i1 = t.i0 + 1;
  t.j1 = t.j0 + 1;
  const double fx = x - t.i0, fy = y - t.j0;
  t.w00 = (1 - fx) * (1 - fy);
  t.w01 = (1 - fx) * fy;
  t.w10 = fx * (1 - fy);
  t.w11 = fx * fy;
  return t;
}

double normalizeCoord(double c, double lo, double hi) { return (c - lo) / (hi - lo); }

// Longitude / latitude of the spatial canonical direction for the spherical
// ablation, both in [0,1].
void sphericalUv(const Eigen::Vector3d& p, double& u, double& v) {
  const double r = p.norm();
  if (r < 1e-12) {
    u = v = 0.5;
    return;
  }
  u = (std::atan2(p.z(), p.x()) + M_PI) / (2.0 * M_PI);
  v = std::acos(std::clamp(p.y() / r, -1.0, 1.0)) / M_PI;
}

}  // namespace

int FeatureAtlas::featureChannels() const {
  switch (kind) {
    case AtlasKind::kTriPlane: return 4 * features;
    case AtlasKind::kSphericalUv: return 2 * features;
    case AtlasKind::kNone: return 0;
  }
  return 0;
}

std::vector<Tensor*> FeatureAtlas::parameterTensors() {
  std::vector<Tensor*> out;
  for (auto& p : planes) out.push_back(&p);
  if (kind != AtlasKind::kNone) out.push_back(&ambient);
  return out;
}

std::vector<const Tensor*> FeatureAtlas::parameterTensors() const {
  std::vector<const Tensor*> out;
  for (const auto& p : planes) out.push_back(&p);
  if (kind != AtlasKind::kNone) out.push_back(&ambient);
  return out;
}

std::array<std::array<double, 5>, 2> canonicalBounds(const ProxyMesh& neutral_mesh) {
  DD_CHECK_ARG(!neutral_mesh.canonical.empty(), "mesh has no canonical coordinates");
  std::array<double, 5> lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& c : neutral_mesh.canonical)
    for (int d = 0; d < 3; ++d) {
      lo[static_cast<size_t>(d)] = std::min(lo[static_cast<size_t>(d)], c[d]);
      hi[static_cast<size_t>(d)] = std::max(hi[static_cast<size_t>(d)], c[d]);
    }
  for (int d = 0; d < 3; ++d) {
    const double pad = 0.1 * (hi[static_cast<size_t>(d)] - lo[static_cast<size_t>(d)]);
    lo[static_cast<size_t>(d)] -= pad;
    hi[static_cast<size_t>(d)] += pad;
  }
  // Ambient region codes live in [0, ~1.01] and the jaw modulation shifts the
  // second one by up to +-0.5 for |z| <= 1; a fixed generous range avoids
  // clamping any reachable value.
  lo[3] = lo[4] = -0.6;
  hi[3] = hi[4] = 1.8;
  return {lo, hi};
}

FeatureAtlas makeAtlas(AtlasKind kind, int grid, int ambient_grid, int features,
                       const std::array<double, 5>& lo, const std::array<double, 5>& hi,
                       Rng& rng, double init_std) {
  FeatureAtlas a;
  a.kind = kind;
  a.lo = lo;
  a.hi = hi;
  if (kind == AtlasKind::kNone) {
    a.grid = a.ambient_grid = a.features = 0;
    return a;
  }
  DD_CHECK_ARG(grid >= 2 && ambient_grid >= 2 && features >= 1, "atlas dims too small");
  for (int d = 0; d < 5; ++d)
    DD_CHECK_ARG(hi[static_cast<size_t>(d)] > lo[static_cast<size_t>(d)],
                 "empty bounds in dim " << d);
  a.grid = grid;
  a.ambient_grid = ambient_grid;
  a.features = features;
  const int nplanes = kind == AtlasKind::kTriPlane ? 3 : 1;
  for (int p = 0; p < nplanes; ++p)
    a.planes.push_back(Tensor::randn({grid, grid, features}, rng, init_std));
  a.ambient = Tensor::randn({ambient_grid, ambient_grid, features}, rng, init_std);
  return a;
}

LookupResult lookupFeatures(const FeatureAtlas& atlas, const GBuffer& g) {
  const int H = g.height(), W = g.width();
  const int F = atlas.features;
  const int plane_ch = static_cast<int>(atlas.planes.size()) * F;
  LookupResult out;
  out.feat = Tensor::zeros({H, W, plane_ch});
  out.feat_amb = Tensor::zeros({H, W, atlas.kind == AtlasKind::kNone ? 0 : F});
  if (atlas.kind == AtlasKind::kNone) return out;

  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      if (g.mask.at(i, j) == 0.0) continue;
      const Eigen::Vector3d p(g.canonical.at(i, j, 0), g.canonical.at(i, j, 1),
                              g.canonical.at(i, j, 2));
      for (size_t pl = 0; pl < atlas.planes.size(); ++pl) {
        double u, v;
        if (atlas.kind == AtlasKind::kTriPlane) {
          const int du = kPlaneDims[pl][0], dv = kPlaneDims[pl][1];
          u = normalizeCoord(p[du], atlas.lo[static_cast<size_t>(du)],
                             atlas.hi[static_cast<size_t>(du)]);
          v = normalizeCoord(p[dv], atlas.lo[static_cast<size_t>(dv)],
                             atlas.hi[static_cast<size_t>(dv)]);
        } else {
          sphericalUv(p, u, v);
        }
        const BilinearTap t = tap(u, v, atlas.grid);
        if (t.clamped) out.oob_count++;
        const Tensor& plane = atlas.planes[pl];
        const int base = static_cast<int>(pl) * F;
        for (int f = 0; f < F; ++f)
          out.feat.at(i, j, base + f) =
              t.w00 * plane.at(t.i0, t.j0, f) + t.w01 * plane.at(t.i0, t.j1, f) +
              t.w10 * plane.at(t.i1, t.j0, f) + t.w11 * plane.at(t.i1, t.j1, f);
      }
      const double au = normalizeCoord(g.canonical.at(i, j, 3), atlas.lo[3], atlas.hi[3]);
      const double av = normalizeCoord(g.canonical.at(i, j, 4), atlas.lo[4], atlas.hi[4]);
      const BilinearTap t = tap(au, av, atlas.ambient_grid);
      if (t.clamped) out.oob_count++;
      for (int f = 0; f < F; ++f)
        out.feat_amb.at(i, j, f) =
            t.w00 * atlas.ambient.at(t.i0, t.j0, f) + t.w01 * atlas.ambient.at(t.i0, t.j1, f) +
            t.w10 * atlas.ambient.at(t.i1, t.j0, f) + t.w11 * atlas.ambient.at(t.i1, t.j1, f);
    }
  }
  return out;
}

int controlChannels(const FeatureAtlas& atlas) { return atlas.featureChannels() + 5 + 1 + 3; }

Tensor assembleControl(const GBuffer& g, const LookupResult& lu, const FeatureAtlas& atlas) {
  const int H = g.height(), W = g.width();
  const int plane_ch = lu.feat.rank() == 3 ? lu.feat.dim(2) : 0;
  const int amb_ch = lu.feat_amb.rank() == 3 ? lu.feat_amb.dim(2) : 0;
  DD_CHECK_ARG(lu.feat.dim(0) == H && lu.feat.dim(1) == W, "lookup/gbuffer size mismatch");
  DD_CHECK_ARG(plane_ch + amb_ch == atlas.featureChannels(), "lookup does not match atlas");

  const int C = controlChannels(atlas);
  Tensor out = Tensor::zeros({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      int c = 0;
      for (int f = 0; f < plane_ch; ++f) out.at(i, j, c++) = lu.feat.at(i, j, f);
      for (int f = 0; f < amb_ch; ++f) out.at(i, j, c++) = lu.feat_amb.at(i, j, f);
      for (int k = 0; k < 5; ++k) out.at(i, j, c++) = g.canonical.at(i, j, k);
      out.at(i, j, c++) = g.depth.at(i, j);
      for (int k = 0; k < 3; ++k) out.at(i, j, c++) = g.normals.at(i, j, k);
    }
  return out;
}

FeatureAtlas atlasGradients(const FeatureAtlas& atlas, const GBuffer& g, const Tensor& upstream) {
  FeatureAtlas grads = atlas;
  for (Tensor* t : grads.parameterTensors()) t->setZero();
  if (atlas.kind == AtlasKind::kNone) return grads;

  const int H = g.height(), W = g.width();
  const int F = atlas.features;
  const int plane_ch = static_cast<int>(atlas.planes.size()) * F;
  DD_CHECK_ARG(upstream.rank() == 3 && upstream.dim(0) == H && upstream.dim(1) == W &&
                   upstream.dim(2) == atlas.featureChannels(),
               "upstream gradient shape mismatch: " << upstream.shapeStr());

  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      if (g.mask.at(i, j) == 0.0) continue;
      const Eigen::Vector3d p(g.canonical.at(i, j, 0), g.canonical.at(i, j, 1),
                              g.canonical.at(i, j, 2));
      for (size_t pl = 0; pl < atlas.planes.size(); ++pl) {
        double u, v;
        if (atlas.kind == AtlasKind::kTriPlane) {
          const int du = kPlaneDims[pl][0], dv = kPlaneDims[pl][1];
          u = normalizeCoord(p[du], atlas.lo[static_cast<size_t>(du)],
                             atlas.hi[static_cast<size_t>(du)]);
          v = normalizeCoord(p[dv], atlas.lo[static_cast<size_t>(dv)],
                             atlas.hi[static_cast<size_t>(dv)]);
        } else {
          sphericalUv(p, u, v);
        }
        const BilinearTap t = tap(u, v, atlas.grid);
        Tensor& gp = grads.planes[pl];
        const int base = static_cast<int>(pl) * F;
        for (int f = 0; f < F; ++f) {
          const double up = upstream.at(i, j, base + f);
          gp.at(t.i0, t.j0, f) += t.w00 * up;
          gp.at(t.i0, t.j1, f) += t.w01 * up;
          gp.at(t.i1, t.j0, f) += t.w10 * up;
          gp.at(t.i1, t.j1, f) += t.w11 * up;
        }
      }
      const double au = normalizeCoord(g.canonical.at(i, j, 3), atlas.lo[3], atlas.hi[3]);
      const double av = normalizeCoord(g.canonical.at(i, j, 4), atlas.lo[4], atlas.hi[4]);
      const BilinearTap t = tap(au, av, atlas.ambient_grid);
      for (int f = 0; f < F; ++f) {
        const double up = upstream.at(i, j, plane_ch + f);
        grads.ambient.at(t.i0, t.j0, f) += t.w00 * up;
        grads.ambient.at(t.i0, t.j1, f) += t.w01 * up;
        grads.ambient.at(t.i1, t.j0, f) += t.w10 * up;
        grads.ambient.at(t.i1, t.j1, f) += t.w11 * up;
      }
    }
  }
  return grads;
}

}  // namespace defdiff
