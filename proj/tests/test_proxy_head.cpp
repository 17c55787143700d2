#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "defdiff/proxy_head.h"

using namespace defdiff;

namespace {

std::vector<double> zeros(int n) { return std::vector<double>(static_cast<size_t>(n), 0.0); }

std::vector<double> randomCode(int n, Rng& rng, double scale) {
  std::vector<double> z(static_cast<size_t>(n));
  for (double& v : z) v = rng.uniform(-scale, scale);
  return z;
}

}  // namespace

TEST_CASE("icosphere vertex and face counts follow the geodesic formula") {
  for (int n : {1, 2, 8, 12}) {
    ProxyMesh m = icosphere(n);
    CHECK(m.vertexCount() == 10 * n * n + 2);
    CHECK(m.faceCount() == 20 * n * n);
    for (const auto& v : m.vertices) CHECK(std::abs(v.norm() - 1.0) < 1e-12);
    // Outward winding: face normal points away from the origin.
    for (const auto& f : m.faces) {
      const Eigen::Vector3d& a = m.vertices[static_cast<size_t>(f[0])];
      const Eigen::Vector3d& b = m.vertices[static_cast<size_t>(f[1])];
      const Eigen::Vector3d& c = m.vertices[static_cast<size_t>(f[2])];
      CHECK((b - a).cross(c - a).dot(a + b + c) > 0.0);
    }
    // Closed manifold: every edge shared by exactly two faces.
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& f : m.faces)
      for (int k = 0; k < 3; ++k) {
        int u = f[k], v = f[(k + 1) % 3];
        edge_count[{std::min(u, v), std::max(u, v)}]++;
      }
    for (const auto& [e, c] : edge_count) CHECK(c == 2);
  }
}

TEST_CASE("neutral mesh canonical spatial part equals posed vertices") {
  Rng rng(101);
  const auto z_id = randomCode(kIdDims, rng, 1.0);
  ProxyMesh m = buildMesh(z_id, zeros(kExpDims), 8);
  for (size_t i = 0; i < m.vertices.size(); ++i) {
    CHECK(std::abs(m.canonical[i][0] - m.vertices[i].x()) == 0.0);
    CHECK(std::abs(m.canonical[i][1] - m.vertices[i].y()) == 0.0);
    CHECK(std::abs(m.canonical[i][2] - m.vertices[i].z()) == 0.0);
  }
}

TEST_CASE("expression deformation of canonical coordinates reproduces posed vertices") {
  Rng rng(102);
  for (int rep = 0; rep < 3; ++rep) {
    const auto z_id = randomCode(kIdDims, rng, 1.0);
    const auto z_exp = randomCode(kExpDims, rng, 1.0);
    ProxyMesh m = buildMesh(z_id, z_exp, 8);
    for (size_t i = 0; i < m.vertices.size(); ++i) {
      const Eigen::Vector3d can(m.canonical[i][0], m.canonical[i][1], m.canonical[i][2]);
      CHECK((deformExpression(can, z_exp) - m.vertices[i]).norm() < 1e-6);
    }
  }
}

TEST_CASE("same inputs build bit-identical meshes") {
  Rng rng(103);
  const auto z_id = randomCode(kIdDims, rng, 1.0);
  const auto z_exp = randomCode(kExpDims, rng, 1.0);
  ProxyMesh a = buildMesh(z_id, z_exp, 8);
  ProxyMesh b = buildMesh(z_id, z_exp, 8);
  REQUIRE(a.vertexCount() == b.vertexCount());
  for (size_t i = 0; i < a.vertices.size(); ++i) {
    CHECK(a.vertices[i] == b.vertices[i]);
    CHECK(a.canonical[i] == b.canonical[i]);
  }
}

TEST_CASE("vertex normals are unit length") {
  Rng rng(104);
  ProxyMesh m = buildMesh(randomCode(kIdDims, rng, 1.0), randomCode(kExpDims, rng, 1.0), 8);
  for (const auto& n : m.normals) CHECK(std::abs(n.norm() - 1.0) < 1e-6);
}

TEST_CASE("jaw open displaces lower-face vertices by the closed-form bump") {
  // Displacement of a probe canonical point under jaw-only expression must
  // equal z * amp * w(x) * dir with the jaw constants; probe the analytic
  // function directly against an independently coded formula.
  std::vector<double> z = zeros(kExpDims);
  z[0] = 1.0;
  const Eigen::Vector3d probe(0.05, -0.52, 0.80);
  const Eigen::Vector3d moved = deformExpression(probe, z);
  const Eigen::Vector3d center(0.0, -0.55, 0.78);
  const double w = std::exp(-(probe - center).squaredNorm() / (2.0 * 0.38 * 0.38));
  const Eigen::Vector3d dir = Eigen::Vector3d(0.0, -0.9, -0.35).normalized();
  const Eigen::Vector3d expected = probe + 1.0 * 0.22 * w * dir;
  CHECK((moved - expected).norm() < 1e-12);
  // And it actually moved a meaningful amount.
  CHECK((moved - probe).norm() > 0.05);
  // A vertex far from the jaw barely moves.
  const Eigen::Vector3d far_probe(0.0, 0.9, -0.4);
  CHECK((deformExpression(far_probe, z) - far_probe).norm() < 5e-3);
}

TEST_CASE("analytic expression Jacobian matches finite differences") {
  // Probes are canonical surface points (where the deformation matters); the
  // error is relative with an absolute floor of 1e-6 because the central
  // difference itself carries ~1e-10 of cancellation noise.
  Rng rng(105);
  ProxyMesh base = buildMesh(randomCode(kIdDims, rng, 0.5), zeros(kExpDims), 8);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec5& c = base.canonical[static_cast<size_t>(rng.uniformInt(0, base.vertexCount() - 1))];
    const Eigen::Vector3d x(c[0], c[1], c[2]);
    auto z = randomCode(kExpDims, rng, 0.8);
    const auto jac = expressionJacobian(x, z);
    const double h = 1e-5;
    for (int d = 0; d < kExpDims; ++d) {
      auto zp = z, zm = z;
      zp[static_cast<size_t>(d)] += h;
      zm[static_cast<size_t>(d)] -= h;
      const Eigen::Vector3d fd = (deformExpression(x, zp) - deformExpression(x, zm)) / (2 * h);
      const double denom = std::max({1e-6, fd.norm(), jac.col(d).norm()});
      CHECK((jac.col(d) - fd).norm() / denom < 1e-4);
    }
  }
}

TEST_CASE("ambient coordinates respond to jaw opening only in component 1") {
  const Eigen::Vector3d mouth_pt(0.0, -0.30, 0.95);
  auto z0 = zeros(kExpDims);
  auto z1 = zeros(kExpDims);
  z1[0] = 1.0;
  const Eigen::Vector2d a0 = ambientCoords(mouth_pt, z0);
  const Eigen::Vector2d a1 = ambientCoords(mouth_pt, z1);
  CHECK(a0.x() == a1.x());
  CHECK(a1.y() > a0.y() + 0.2);
  // Far from the mouth the modulation vanishes.
  const Eigen::Vector3d back_pt(0.0, 0.0, -1.0);
  CHECK(std::abs(ambientCoords(back_pt, z1).y() - ambientCoords(back_pt, z0).y()) < 1e-6);
}

TEST_CASE("toy sdf sign and magnitude") {
  Rng rng(106);
  const auto z_id = randomCode(kIdDims, rng, 0.5);
  const auto z_exp = randomCode(kExpDims, rng, 0.5);
  ProxyMesh m = buildMesh(z_id, z_exp, 8);

  // Surface vertices are near zero.
  double edge = (m.vertices[static_cast<size_t>(m.faces[0][0])] -
                 m.vertices[static_cast<size_t>(m.faces[0][1])])
                    .norm();
  for (int k = 0; k < 10; ++k) {
    const auto& v = m.vertices[static_cast<size_t>(rng.uniformInt(0, m.vertexCount() - 1))];
    CHECK(std::abs(signedDistance(m, v)) <= edge * 0.01 + 1e-9);
  }
  // Origin is inside, a far point outside; far-point distance is near the
  // analytic distance to a sphere-ish surface.
  CHECK(signedDistance(m, Eigen::Vector3d::Zero()) < 0.0);
  const Eigen::Vector3d far_pt(0.0, 0.0, 5.0);
  const double d = signedDistance(m, far_pt);
  CHECK(d > 3.0);
  CHECK(d < 5.0);
}

TEST_CASE("sdf magnitude matches an independent brute-force triangle-distance loop") {
  Rng rng(107);
  ProxyMesh m = buildMesh(zeros(kIdDims), zeros(kExpDims), 8);
  for (int rep = 0; rep < 25; ++rep) {
    const Eigen::Vector3d x(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : m.faces) {
      const Eigen::Vector3d cp =
          closestPointOnTriangle(x, m.vertices[static_cast<size_t>(f[0])],
                                 m.vertices[static_cast<size_t>(f[1])],
                                 m.vertices[static_cast<size_t>(f[2])]);
      best = std::min(best, (x - cp).norm());
    }
    CHECK(std::abs(std::abs(signedDistance(m, x)) - best) < 1e-12);
  }
}

TEST_CASE("closest point on triangle handles all regions") {
  const Eigen::Vector3d a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  // Interior projection.
  CHECK((closestPointOnTriangle({0.2, 0.2, 1.0}, a, b, c) - Eigen::Vector3d(0.2, 0.2, 0)).norm() <
        1e-14);
  // Vertex regions.
  CHECK((closestPointOnTriangle({-1, -1, 0}, a, b, c) - a).norm() < 1e-14);
  CHECK((closestPointOnTriangle({2, -0.5, 0}, a, b, c) - b).norm() < 1e-14);
  CHECK((closestPointOnTriangle({-0.5, 2, 0}, a, b, c) - c).norm() < 1e-14);
  // Edge regions.
  CHECK((closestPointOnTriangle({0.5, -1, 0}, a, b, c) - Eigen::Vector3d(0.5, 0, 0)).norm() <
        1e-14);
  CHECK((closestPointOnTriangle({-1, 0.5, 0}, a, b, c) - Eigen::Vector3d(0, 0.5, 0)).norm() <
        1e-14);
  CHECK((closestPointOnTriangle({1, 1, 0}, a, b, c) - Eigen::Vector3d(0.5, 0.5, 0)).norm() <
        1e-14);
}

TEST_CASE("sampled point cloud lies on the surface and respects face areas") {
  Rng rng(108);
  ProxyMesh m = buildMesh(zeros(kIdDims), zeros(kExpDims), 8);
  auto pts = samplePointcloud(m, 200, rng);
  REQUIRE(pts.size() == 200);
  for (const auto& p : pts) CHECK(std::abs(signedDistance(m, p)) < 1e-9);

  // Area-weighted sampling: counts in the +z vs -z hemisphere should follow
  // the area split for a near-spherical mesh (roughly half) within 4 sigma of
  // the binomial bound.
  auto many = samplePointcloud(m, 10000, rng);
  int front = 0;
  for (const auto& p : many) front += p.z() > 0.0 ? 1 : 0;
  // The nose/chin bumps enlarge the +z side slightly; allow a generous band.
  CHECK(front > 4500);
  CHECK(front < 6200);

  auto single = samplePointcloud(m, 1, rng);
  CHECK(single.size() == 1);
}

TEST_CASE("noisy samples scatter around the surface") {
  Rng rng(109);
  ProxyMesh m = buildMesh(zeros(kIdDims), zeros(kExpDims), 8);
  auto pts = samplePointcloud(m, 200, rng, 0.05);
  double mean_abs = 0.0;
  for (const auto& p : pts) mean_abs += std::abs(signedDistance(m, p));
  mean_abs /= static_cast<double>(pts.size());
  CHECK(mean_abs > 0.01);
  CHECK(mean_abs < 0.2);
}

TEST_CASE("fitting a planted problem from the optimum stays put") {
  Rng rng(110);
  const auto z_id = randomCode(kIdDims, rng, 0.6);
  const auto z_exp = randomCode(kExpDims, rng, 0.6);
  ProxyMesh m = buildMesh(z_id, z_exp, 8);
  auto cloud = samplePointcloud(m, 200, rng);
  FitConfig cfg;
  cfg.max_iters = 3;
  FitResult r = fitCodes(cloud, z_id, z_exp, cfg);
  CHECK(r.residual < 1e-6 * 200);
  for (int i = 0; i < kIdDims; ++i)
    CHECK(std::abs(r.z_id[static_cast<size_t>(i)] - z_id[static_cast<size_t>(i)]) < 0.02);
  for (int i = 0; i < kExpDims; ++i)
    CHECK(std::abs(r.z_exp[static_cast<size_t>(i)] - z_exp[static_cast<size_t>(i)]) < 0.02);
}

TEST_CASE("fitting recovers perturbed codes and never increases the objective") {
  Rng rng(111);
  const auto z_id = randomCode(kIdDims, rng, 0.5);
  const auto z_exp = randomCode(kExpDims, rng, 0.5);
  ProxyMesh m = buildMesh(z_id, z_exp, 8);
  auto cloud = samplePointcloud(m, 200, rng);

  auto init_id = z_id;
  auto init_exp = z_exp;
  for (double& v : init_id) v += rng.uniform(-0.1, 0.1);
  for (double& v : init_exp) v += rng.uniform(-0.1, 0.1);

  FitResult r = fitCodes(cloud, init_id, init_exp);
  for (int i = 0; i < kIdDims; ++i)
    CHECK(std::abs(r.z_id[static_cast<size_t>(i)] - z_id[static_cast<size_t>(i)]) <= 0.05);
  for (int i = 0; i < kExpDims; ++i)
    CHECK(std::abs(r.z_exp[static_cast<size_t>(i)] - z_exp[static_cast<size_t>(i)]) <= 0.05);
  for (size_t i = 1; i < r.objective_trace.size(); ++i)
    CHECK(r.objective_trace[i] <= r.objective_trace[i - 1]);
}

TEST_CASE("zero iteration budget returns the init") {
  Rng rng(112);
  ProxyMesh m = buildMesh(zeros(kIdDims), zeros(kExpDims), 8);
  auto cloud = samplePointcloud(m, 30, rng);
  FitConfig cfg;
  cfg.max_iters = 0;
  std::vector<double> init_id = {0.3, -0.2, 0.1, 0.0};
  std::vector<double> init_exp = zeros(kExpDims);
  FitResult r = fitCodes(cloud, init_id, init_exp, cfg);
  CHECK(r.z_id == init_id);
  CHECK(r.z_exp == init_exp);
  CHECK(r.iters == 0);
}

TEST_CASE("obj export round trips counts and canonical sidecar lists all vertices") {
  ProxyMesh m = buildMesh(zeros(kIdDims), zeros(kExpDims), 8);
  const std::string obj = exportObj(m);
  size_t v_lines = 0, f_lines = 0, pos = 0;
  for (size_t i = 0; i < obj.size(); ++i)
    if (obj[i] == '\n' || i == 0) {
      const size_t s = i == 0 ? 0 : i + 1;
      if (s + 1 < obj.size()) {
        if (obj[s] == 'v') v_lines++;
        if (obj[s] == 'f') f_lines++;
      }
    }
  (void)pos;
  CHECK(v_lines == static_cast<size_t>(m.vertexCount()));
  CHECK(f_lines == static_cast<size_t>(m.faceCount()));
  CHECK(obj.find("f 0") == std::string::npos);  // 1-based face indices

  const std::string side = canonicalSidecar(m);
  size_t rows = 0;
  for (char ch : side)
    if (ch == '\n') rows++;
  CHECK(rows == static_cast<size_t>(m.vertexCount()) + 1);  // header + rows
}

TEST_CASE("detail mesh differs from the proxy but keeps canonical coordinates") {
  Rng rng(113);
  const auto z_id = randomCode(kIdDims, rng, 0.5);
  const auto z_exp = randomCode(kExpDims, rng, 0.5);
  ProxyMesh plain = buildMesh(z_id, z_exp, 8);
  ProxyMesh detail = buildDetailMesh(z_id, z_exp, 8);
  REQUIRE(plain.vertexCount() == detail.vertexCount());
  double max_disp = 0.0;
  for (size_t i = 0; i < plain.vertices.size(); ++i) {
    max_disp = std::max(max_disp, (plain.vertices[i] - detail.vertices[i]).norm());
    CHECK(plain.canonical[i] == detail.canonical[i]);
  }
  CHECK(max_disp > 1e-3);
  CHECK(max_disp < 0.05);
}
