#include "defdiff/proxy_head.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "defdiff/check.h"

namespace defdiff {

namespace {

double comp(const std::vector<double>& z, int i) {
  return i < static_cast<int>(z.size()) ? z[static_cast<size_t>(i)] : 0.0;
}

double gaussian(const Eigen::Vector3d& x, const Eigen::Vector3d& c, double sigma) {
  return std::exp(-(x - c).squaredNorm() / (2.0 * sigma * sigma));
}

// Expression bump table. Displacement is z_k * amp * w(x) * dir; the cheek
// bump (k = 5) pushes radially instead of along a fixed direction.
struct Bump {
  Eigen::Vector3d center;
  double sigma;
  Eigen::Vector3d dir;
  double amp;
};

const Eigen::Vector3d kMouthCenter(0.0, -0.30, 0.95);
const double kMouthSigma = 0.22;
const Eigen::Vector3d kEyeL(-0.32, 0.22, 0.92), kEyeR(0.32, 0.22, 0.92);
const double kEyeSigma = 0.15;
const Eigen::Vector3d kCheekL(-0.62, -0.18, 0.62), kCheekR(0.62, -0.18, 0.62);
const double kCheekSigma = 0.26;

const Bump kJaw{{0.0, -0.55, 0.78}, 0.38, Eigen::Vector3d(0.0, -0.9, -0.35).normalized(), 0.22};
const Bump kMouthCornerL{{-0.30, -0.28, 0.92}, 0.20,
                         Eigen::Vector3d(-0.35, 0.85, 0.10).normalized(), 0.13};
const Bump kMouthCornerR{{0.30, -0.28, 0.92}, 0.20,
                         Eigen::Vector3d(0.35, 0.85, 0.10).normalized(), 0.13};
const Bump kBrow{{0.0, 0.42, 0.90}, 0.28, Eigen::Vector3d(0.0, 0.9, 0.2).normalized(), 0.12};
const double kEyeCloseAmp = 0.08;
const double kCheekAmp = 0.12;
const double kPitchScale = 0.3, kYawScale = 0.4;

Eigen::Vector3d bumpOffsets(const Eigen::Vector3d& x, const std::vector<double>& z) {
  Eigen::Vector3d off = Eigen::Vector3d::Zero();
  off += comp(z, 0) * kJaw.amp * gaussian(x, kJaw.center, kJaw.sigma) * kJaw.dir;
  off += comp(z, 1) * kMouthCornerL.amp * gaussian(x, kMouthCornerL.center, kMouthCornerL.sigma) *
         kMouthCornerL.dir;
  off += comp(z, 2) * kMouthCornerR.amp * gaussian(x, kMouthCornerR.center, kMouthCornerR.sigma) *
         kMouthCornerR.dir;
  off += comp(z, 3) * kBrow.amp * gaussian(x, kBrow.center, kBrow.sigma) * kBrow.dir;
  off += comp(z, 4) * kEyeCloseAmp * (gaussian(x, kEyeL, kEyeSigma) + gaussian(x, kEyeR, kEyeSigma)) *
         Eigen::Vector3d(0.0, -1.0, 0.0);
  off += comp(z, 5) * kCheekAmp *
         (gaussian(x, kCheekL, kCheekSigma) + gaussian(x, kCheekR, kCheekSigma)) * x.normalized();
  return off;
}

Eigen::Matrix3d pitchMatrix(double a) {
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return m;
}

Eigen::Matrix3d yawMatrix(double a) {
  Eigen::Matrix3d m;
  m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return m;
}

void computeNormals(ProxyMesh& mesh) {
  mesh.normals.assign(mesh.vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& f : mesh.faces) {
    const Eigen::Vector3d& a = mesh.vertices[static_cast<size_t>(f[0])];
    const Eigen::Vector3d& b = mesh.vertices[static_cast<size_t>(f[1])];
    const Eigen::Vector3d& c = mesh.vertices[static_cast<size_t>(f[2])];
    const Eigen::Vector3d n = (b - a).cross(c - a);  // area-weighted
    for (int k = 0; k < 3; ++k) mesh.normals[static_cast<size_t>(f[k])] += n;
  }
  for (auto& n : mesh.normals) {
    const double len = n.norm();
    n = len > 1e-14 ? Eigen::Vector3d(n / len) : Eigen::Vector3d(0.0, 0.0, 1.0);
  }
}

}  // namespace

ProxyMesh icosphere(int frequency) {
  DD_CHECK_ARG(frequency >= 1, "icosphere frequency must be >= 1");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  const std::vector<Eigen::Vector3d> base = {
      {-1, t, 0}, {1, t, 0},   {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  const int faces[20][3] = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                            {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                            {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                            {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

  ProxyMesh mesh;
  const int n = frequency;
  // Grid points are identified combinatorially by their exact barycentric
  // weights over base vertex ids, so shared edges dedup without any
  // floating-point tolerance.
  std::map<std::vector<std::pair<int, int>>, int> index;
  auto pointId = [&](int va, int vb, int vc, int wa, int wb, int wc) {
    std::vector<std::pair<int, int>> key;
    if (wa > 0) key.emplace_back(va, wa);
    if (wb > 0) key.emplace_back(vb, wb);
    if (wc > 0) key.emplace_back(vc, wc);
    std::sort(key.begin(), key.end());
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    const Eigen::Vector3d p =
        (wa * base[static_cast<size_t>(va)] + wb * base[static_cast<size_t>(vb)] +
         wc * base[static_cast<size_t>(vc)])
            .normalized();
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(p);
    index.emplace(std::move(key), id);
    return id;
  };

  for (const auto& f : faces) {
    // Row-major grid over the face: local (i, j) has weights (n-i-j, i, j).
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n - i; ++j) {
        const int p00 = pointId(f[0], f[1], f[2], n - i - j, i, j);
        const int p10 = pointId(f[0], f[1], f[2], n - i - j - 1, i + 1, j);
        const int p01 = pointId(f[0], f[1], f[2], n - i - j - 1, i, j + 1);
        mesh.faces.push_back({p00, p10, p01});
        if (j < n - i - 1) {
          const int p11 = pointId(f[0], f[1], f[2], n - i - j - 2, i + 1, j + 1);
          mesh.faces.push_back({p10, p11, p01});
        }
      }
    }
  }
  return mesh;
}

Eigen::Vector3d shapeIdentity(const Eigen::Vector3d& u, const std::vector<double>& z_id) {
  Eigen::Vector3d p(u.x() * (1.0 + 0.15 * comp(z_id, 0)), u.y() * (1.0 + 0.20 * comp(z_id, 1)),
                    u.z());
  const Eigen::Vector3d nose_c = Eigen::Vector3d(0.0, -0.08, 1.0).normalized();
  const Eigen::Vector3d chin_c = Eigen::Vector3d(0.0, -0.85, 0.55).normalized();
  p += (0.12 + 0.06 * comp(z_id, 2)) * gaussian(u, nose_c, 0.22) * u;
  p += (0.08 + 0.05 * comp(z_id, 3)) * gaussian(u, chin_c, 0.25) * u;
  return p;
}

Eigen::Vector3d deformExpression(const Eigen::Vector3d& x_can, const std::vector<double>& z_exp) {
  const Eigen::Vector3d y = x_can + bumpOffsets(x_can, z_exp);
  return yawMatrix(kYawScale * comp(z_exp, 7)) * (pitchMatrix(kPitchScale * comp(z_exp, 6)) * y);
}

Eigen::Matrix<double, 3, Eigen::Dynamic> expressionJacobian(const Eigen::Vector3d& x_can,
                                                            const std::vector<double>& z_exp) {
  const int dims = static_cast<int>(z_exp.size());
  Eigen::Matrix<double, 3, Eigen::Dynamic> jac(3, dims);
  const double pitch = kPitchScale * comp(z_exp, 6);
  const double yaw = kYawScale * comp(z_exp, 7);
  const Eigen::Matrix3d rx = pitchMatrix(pitch);
  const Eigen::Matrix3d ry = yawMatrix(yaw);
  const Eigen::Matrix3d r = ry * rx;
  const Eigen::Vector3d y = x_can + bumpOffsets(x_can, z_exp);

  auto bumpCol = [&](int k) -> Eigen::Vector3d {
    switch (k) {
      case 0: return kJaw.amp * gaussian(x_can, kJaw.center, kJaw.sigma) * kJaw.dir;
      case 1:
        return kMouthCornerL.amp * gaussian(x_can, kMouthCornerL.center, kMouthCornerL.sigma) *
               kMouthCornerL.dir;
      case 2:
        return kMouthCornerR.amp * gaussian(x_can, kMouthCornerR.center, kMouthCornerR.sigma) *
               kMouthCornerR.dir;
      case 3: return kBrow.amp * gaussian(x_can, kBrow.center, kBrow.sigma) * kBrow.dir;
      case 4:
        return kEyeCloseAmp * (gaussian(x_can, kEyeL, kEyeSigma) + gaussian(x_can, kEyeR, kEyeSigma)) *
               Eigen::Vector3d(0.0, -1.0, 0.0);
      case 5:
        return kCheekAmp *
               (gaussian(x_can, kCheekL, kCheekSigma) + gaussian(x_can, kCheekR, kCheekSigma)) *
               x_can.normalized();
      default: return Eigen::Vector3d::Zero();
    }
  };

  for (int k = 0; k < dims && k < 6; ++k) jac.col(k) = r * bumpCol(k);
  if (dims > 6) {
    Eigen::Matrix3d drx;
    drx << 0, 0, 0, 0, -std::sin(pitch), -std::cos(pitch), 0, std::cos(pitch), -std::sin(pitch);
    jac.col(6) = ry * (kPitchScale * drx) * y;
  }
  if (dims > 7) {
    Eigen::Matrix3d dry;
    dry << -std::sin(yaw), 0, std::cos(yaw), 0, 0, 0, -std::cos(yaw), 0, -std::sin(yaw);
    jac.col(7) = (kYawScale * dry) * rx * y;
  }
  return jac;
}

Eigen::Vector2d ambientCoords(const Eigen::Vector3d& x_can, const std::vector<double>& z_exp) {
  const double mouth = gaussian(x_can, kMouthCenter, kMouthSigma);
  const double eyes = gaussian(x_can, kEyeL, kEyeSigma) + gaussian(x_can, kEyeR, kEyeSigma);
  return {mouth, eyes + 0.5 * comp(z_exp, 0) * mouth};
}

ProxyMesh buildMesh(const std::vector<double>& z_id, const std::vector<double>& z_exp,
                    int resolution) {
  // Below frequency 4 the tessellation no longer resolves the expression
  // bumps; 4..7 is coarse but usable (the degraded-proxy ablation lives there).
  DD_CHECK_ARG(resolution >= 4, "mesh resolution must be >= 4, got " << resolution);
  ProxyMesh mesh = icosphere(resolution);
  mesh.canonical.resize(mesh.vertices.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Eigen::Vector3d can = shapeIdentity(mesh.vertices[i], z_id);
    const Eigen::Vector2d amb = ambientCoords(can, z_exp);
    mesh.canonical[i] << can.x(), can.y(), can.z(), amb.x(), amb.y();
    mesh.vertices[i] = deformExpression(can, z_exp);
  }
  computeNormals(mesh);
  return mesh;
}

ProxyMesh buildDetailMesh(const std::vector<double>& z_id, const std::vector<double>& z_exp,
                          int resolution) {
  ProxyMesh mesh = buildMesh(z_id, z_exp, resolution);
  const double phase = 2.0 * M_PI * (0.37 + 0.21 * comp(z_id, 3));
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec5& c = mesh.canonical[i];
    const double d = 0.012 * (std::sin(17.0 * c[0] + phase) * std::sin(19.0 * c[1] + 0.6) +
                              0.5 * std::sin(23.0 * c[2] + 1.3 + phase));
    mesh.vertices[i] += d * mesh.normals[i];
  }
  computeNormals(mesh);
  return mesh;
}

Eigen::Vector3d closestPointOnTriangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                       const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  // Voronoi-region walk over vertex, edge, and face regions.
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double signedDistance(const ProxyMesh& mesh, const Eigen::Vector3d& x) {
  DD_CHECK_ARG(!mesh.faces.empty(), "mesh has no faces");
  double best = std::numeric_limits<double>::infinity();
  Eigen::Vector3d best_cp = Eigen::Vector3d::Zero(), best_n = Eigen::Vector3d::UnitZ();
  for (const auto& f : mesh.faces) {
    const Eigen::Vector3d& a = mesh.vertices[static_cast<size_t>(f[0])];
    const Eigen::Vector3d& b = mesh.vertices[static_cast<size_t>(f[1])];
    const Eigen::Vector3d& c = mesh.vertices[static_cast<size_t>(f[2])];
    const Eigen::Vector3d cp = closestPointOnTriangle(x, a, b, c);
    const double d2 = (x - cp).squaredNorm();
    if (d2 < best) {
      best = d2;
      best_cp = cp;
      best_n = (b - a).cross(c - a);
    }
  }
  const double sign = (x - best_cp).dot(best_n) >= 0.0 ? 1.0 : -1.0;
  return sign * std::sqrt(best);
}

double toySdf(const Eigen::Vector3d& x, const std::vector<double>& z_id,
              const std::vector<double>& z_exp, int resolution) {
  return signedDistance(buildMesh(z_id, z_exp, resolution), x);
}

std::vector<Eigen::Vector3d> samplePointcloud(const ProxyMesh& mesh, int n, Rng& rng,
                                              double sigma) {
  DD_CHECK_ARG(n >= 1, "need at least one sample");
  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    const Eigen::Vector3d& a = mesh.vertices[static_cast<size_t>(f[0])];
    const Eigen::Vector3d& b = mesh.vertices[static_cast<size_t>(f[1])];
    const Eigen::Vector3d& c = mesh.vertices[static_cast<size_t>(f[2])];
    total += 0.5 * (b - a).cross(c - a).norm();
    cum[i] = total;
  }
  DD_CHECK(total > 0.0, "degenerate mesh, zero area");

  std::vector<Eigen::Vector3d> points;
  points.reserve(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double r = rng.uniform() * total;
    const size_t idx = static_cast<size_t>(
        std::lower_bound(cum.begin(), cum.end(), r) - cum.begin());
    const auto& f = mesh.faces[std::min(idx, mesh.faces.size() - 1)];
    const Eigen::Vector3d& a = mesh.vertices[static_cast<size_t>(f[0])];
    const Eigen::Vector3d& b = mesh.vertices[static_cast<size_t>(f[1])];
    const Eigen::Vector3d& c = mesh.vertices[static_cast<size_t>(f[2])];
    const double su = std::sqrt(rng.uniform());
    const double v = rng.uniform();
    Eigen::Vector3d p = (1.0 - su) * a + su * (1.0 - v) * b + su * v * c;
    if (sigma > 0.0) p += sigma * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    points.push_back(p);
  }
  return points;
}

FitResult fitCodes(const std::vector<Eigen::Vector3d>& cloud, const std::vector<double>& init_id,
                   const std::vector<double>& init_exp, const FitConfig& config) {
  DD_CHECK_ARG(!cloud.empty(), "empty point cloud");
  const int nid = static_cast<int>(init_id.size());
  const int nexp = static_cast<int>(init_exp.size());
  const int dims = nid + nexp;

  auto objective = [&](const std::vector<double>& theta) {
    std::vector<double> zi(theta.begin(), theta.begin() + nid);
    std::vector<double> ze(theta.begin() + nid, theta.end());
    const ProxyMesh mesh = buildMesh(zi, ze, config.resolution);
    double obj = 0.0;
    for (const auto& p : cloud) obj += std::abs(signedDistance(mesh, p));
    if (config.prior_weight > 0.0)
      for (double v : theta) obj += config.prior_weight * v * v;
    return obj;
  };

  std::vector<double> theta(init_id);
  theta.insert(theta.end(), init_exp.begin(), init_exp.end());
  double obj = objective(theta);

  FitResult res;
  res.objective_trace.push_back(obj);
  // Coordinate descent: per-dimension finite-difference derivative plus a
  // per-dimension adaptive step with backtracking. Weakly observed code dims
  // (small bumps covered by few cloud points) then converge independently of
  // the strongly observed ones; only improving moves are accepted, so the
  // trace is non-increasing by construction.
  std::vector<double> step(static_cast<size_t>(dims), config.init_step);
  for (int sweep = 0; sweep < config.max_iters; ++sweep) {
    bool improved = false;
    for (int d = 0; d < dims; ++d) {
      std::vector<double> tp = theta, tm = theta;
      tp[static_cast<size_t>(d)] += config.fd_step;
      tm[static_cast<size_t>(d)] -= config.fd_step;
      const double g = (objective(tp) - objective(tm)) / (2.0 * config.fd_step);
      if (g == 0.0) continue;
      const double dir = g > 0.0 ? -1.0 : 1.0;
      double s = step[static_cast<size_t>(d)];
      while (s > config.min_step) {
        std::vector<double> cand = theta;
        cand[static_cast<size_t>(d)] += dir * s;
        const double cobj = objective(cand);
        if (cobj < obj) {
          theta = std::move(cand);
          obj = cobj;
          improved = true;
          break;
        }
        s *= 0.5;
      }
      step[static_cast<size_t>(d)] = std::clamp(s * 1.5, config.min_step, config.init_step);
    }
    if (!improved) {
      res.converged = true;  // no coordinate admits an improving step
      break;
    }
    res.iters = sweep + 1;
    res.objective_trace.push_back(obj);
  }

  res.z_id.assign(theta.begin(), theta.begin() + nid);
  res.z_exp.assign(theta.begin() + nid, theta.end());
  res.residual = obj;
  return res;
}

std::string exportObj(const ProxyMesh& mesh) {
  std::ostringstream oss;
  oss.precision(9);
  for (const auto& v : mesh.vertices) oss << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& f : mesh.faces)
    oss << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  return oss.str();
}

std::string canonicalSidecar(const ProxyMesh& mesh) {
  std::ostringstream oss;
  oss.precision(9);
  oss << "# canonical coordinates, 5 per vertex: 3 spatial + 2 ambient\n";
  for (const auto& c : mesh.canonical)
    oss << c[0] << " " << c[1] << " " << c[2] << " " << c[3] << " " << c[4] << "\n";
  return oss.str();
}

}  // namespace defdiff
