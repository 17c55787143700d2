#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "defdiff/rng.h"

namespace defdiff {

// Identity code, default 4 dims: 0 head width, 1 head height, 2 nose bump
// amplitude, 3 chin bump amplitude (doubles as the appearance texture seed).
// Expression code, default 8 dims: 0 jaw open, 1 mouth corner left, 2 mouth
// corner right, 3 brow raise, 4 eye close, 5 cheek puff, 6 pitch, 7 yaw.
// Missing trailing dims read as zero so shorter codes stay valid.
inline constexpr int kIdDims = 4;
inline constexpr int kExpDims = 8;

using Vec5 = Eigen::Matrix<double, 5, 1>;

struct ProxyMesh {
  std::vector<Eigen::Vector3d> vertices;        // posed space
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec5> canonical;                  // 3 spatial + 2 ambient
  std::vector<Eigen::Vector3d> normals;         // unit, posed space

  int vertexCount() const { return static_cast<int>(vertices.size()); }
  int faceCount() const { return static_cast<int>(faces.size()); }
};

// Geodesic icosphere: every icosahedron edge split into `frequency` segments,
// V = 10 * frequency^2 + 2, outward winding.
ProxyMesh icosphere(int frequency);

// Identity-shaped neutral position for a unit-sphere template direction.
// This is the canonical spatial coordinate of that vertex.
Eigen::Vector3d shapeIdentity(const Eigen::Vector3d& u, const std::vector<double>& z_id);

// Posed position for a canonical spatial point: smooth expression bumps
// (linear in z_exp components 0..5) followed by pitch/yaw rotations.
Eigen::Vector3d deformExpression(const Eigen::Vector3d& x_can, const std::vector<double>& z_exp);

// Analytic Jacobian d posed / d z_exp, one column per code dim.
Eigen::Matrix<double, 3, Eigen::Dynamic> expressionJacobian(const Eigen::Vector3d& x_can,
                                                            const std::vector<double>& z_exp);

// Two ambient coordinates: 0 is a static mouth-region code, 1 is an eye-region
// code shifted by jaw opening over the mouth region, separating open-jaw
// surface states that share a spatial canonical point.
Eigen::Vector2d ambientCoords(const Eigen::Vector3d& x_can, const std::vector<double>& z_exp);

ProxyMesh buildMesh(const std::vector<double>& z_id, const std::vector<double>& z_exp,
                    int resolution);

// buildMesh at the same resolution plus a high-frequency displacement along
// vertex normals. Ground-truth geometry is deliberately richer than the proxy
// the renderer is conditioned on.
ProxyMesh buildDetailMesh(const std::vector<double>& z_id, const std::vector<double>& z_exp,
                          int resolution);

// Signed distance of x to the mesh surface: brute-force nearest point over all
// triangles, sign taken from the nearest face's geometric normal.
double signedDistance(const ProxyMesh& mesh, const Eigen::Vector3d& x);

// Convenience wrapper that builds the mesh per call; prefer signedDistance
// with a prebuilt mesh in loops.
double toySdf(const Eigen::Vector3d& x, const std::vector<double>& z_id,
              const std::vector<double>& z_exp, int resolution = 8);

// Closest point on one triangle, exposed for the oracle tests.
Eigen::Vector3d closestPointOnTriangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                       const Eigen::Vector3d& b, const Eigen::Vector3d& c);

// n surface points, uniform by face area, optional isotropic Gaussian noise.
std::vector<Eigen::Vector3d> samplePointcloud(const ProxyMesh& mesh, int n, Rng& rng,
                                              double sigma = 0.0);

struct FitConfig {
  int max_iters = 40;         // coordinate-descent sweeps
  double fd_step = 1e-3;
  double init_step = 0.1;     // per-dimension initial step
  double min_step = 1e-6;
  double prior_weight = 0.0;  // optional quadratic pull toward zero codes
  int resolution = 8;
};

struct FitResult {
  std::vector<double> z_id;
  std::vector<double> z_exp;
  double residual = 0.0;   // sum of |sdf| over the cloud at the returned codes
  bool converged = false;  // false when the iteration budget ran out
  int iters = 0;
  std::vector<double> objective_trace;  // objective after each accepted step
};

// Minimizes sum_x |sdf(x)| over (z_id, z_exp) with central finite differences
// and backtracking line search; the objective never increases across accepted
// iterations.
FitResult fitCodes(const std::vector<Eigen::Vector3d>& cloud, const std::vector<double>& init_id,
                   const std::vector<double>& init_exp, const FitConfig& config = {});

// OBJ-style export (v/f lines) and a sidecar table with one 5-column canonical
// row per vertex.
std::string exportObj(const ProxyMesh& mesh);
std::string canonicalSidecar(const ProxyMesh& mesh);

}  // namespace defdiff
