#pragma once

#include <Eigen/Dense>

#include "defdiff/check.h"

namespace defdiff {

// Pinhole camera. World-to-camera map is x_cam = R * x_world + t with the
// camera looking along +z and image y growing downward. Pixel centers sit at
// half-integer coordinates: pixel (row i, col j) samples (j + 0.5, i + 0.5).
struct Camera {
  double focal = 0.0;        // pixels, square pixels assumed
  double cx = 0.0, cy = 0.0; // principal point, pixels
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int height = 0, width = 0;

  void validate() const;

  Eigen::Vector3d worldToCam(const Eigen::Vector3d& x) const { return R * x + t; }
  Eigen::Vector3d camCenter() const { return -R.transpose() * t; }

  // Projects a camera-space point with positive z to continuous pixel coords
  // (px, py) = (col, row).
  Eigen::Vector2d projectCam(const Eigen::Vector3d& xc) const {
    return {focal * xc.x() / xc.z() + cx, focal * xc.y() / xc.z() + cy};
  }

  // Unit ray direction in world space through a continuous pixel coordinate.
  Eigen::Vector3d pixelRayDirWorld(double px, double py) const {
    Eigen::Vector3d d((px - cx) / focal, (py - cy) / focal, 1.0);
    return (R.transpose() * d).normalized();
  }
};

// Builds a camera at `eye` looking at `target`, fov_deg = full vertical field
// of view. Falls back to a tilted up vector when the view direction is
// parallel to world up.
Camera lookAtCamera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double fov_deg,
                    int height, int width);

// Camera `index` of `count` on a horizontal ring of given radius and height
// around `target`, all looking at the target.
Camera ringCamera(int index, int count, double radius, double height_offset,
                  const Eigen::Vector3d& target, double fov_deg, int height, int width);

}  // namespace defdiff
