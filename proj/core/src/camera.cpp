#include "defdiff/camera.h"

#include <cmath>

namespace defdiff {

void Camera::validate() const {
  DD_CHECK_ARG(height >= 8 && width >= 8, "image size too small: " << height << "x" << width);
  DD_CHECK_ARG(focal > 0.0, "focal must be positive");
  const double ortho = (R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  DD_CHECK_ARG(ortho < 1e-9, "rotation not orthonormal, error " << ortho);
  DD_CHECK_ARG(std::abs(R.determinant() - 1.0) < 1e-9, "rotation must have det +1");
}

Camera lookAtCamera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double fov_deg,
                    int height, int width) {
  DD_CHECK_ARG((target - eye).norm() > 1e-12, "eye and target coincide");
  Camera cam;
  cam.height = height;
  cam.width = width;
  cam.focal = 0.5 * height / std::tan(0.5 * fov_deg * M_PI / 180.0);
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;

  const Eigen::Vector3d zc = (target - eye).normalized();
  Eigen::Vector3d up(0.0, 1.0, 0.0);
  if (std::abs(zc.dot(up)) > 0.999) up = Eigen::Vector3d(0.0, 0.0, 1.0);
  const Eigen::Vector3d xc = zc.cross(up).normalized();
  const Eigen::Vector3d yc = zc.cross(xc);  // world-down for world-up `up`
  cam.R.row(0) = xc;
  cam.R.row(1) = yc;
  cam.R.row(2) = zc;
  cam.t = -cam.R * eye;
  cam.validate();
  return cam;
}

Camera ringCamera(int index, int count, double radius, double height_offset,
                  const Eigen::Vector3d& target, double fov_deg, int height, int width) {
  DD_CHECK_ARG(count >= 1 && index >= 0 && index < count, "ring index out of range");
  const double ang = 2.0 * M_PI * index / count;
  const Eigen::Vector3d eye =
      target + Eigen::Vector3d(radius * std::sin(ang), height_offset, radius * std::cos(ang));
  return lookAtCamera(eye, target, fov_deg, height, width);
}

}  // namespace defdiff
