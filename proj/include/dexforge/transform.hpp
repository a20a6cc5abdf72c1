// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace dexforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Iso3 = Eigen::Isometry3d;

inline Iso3 make_pose(const Vec3& t, const Mat3& r) {
  Iso3 p = Iso3::Identity();
  p.linear() = r;
  p.translation() = t;
  return p;
}

inline Iso3 translation(double x, double y, double z) {
  Iso3 p = Iso3::Identity();
  p.translation() = Vec3(x, y, z);
  return p;
}

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

// Rotation taking unit vector a onto unit vector b (shortest arc).
inline Mat3 rotation_between(const Vec3& a, const Vec3& b) {
  return Eigen::Quaterniond::FromTwoVectors(a, b).toRotationMatrix();
}

// Axis-angle log map with angle in [0, pi]; antipodal ambiguity resolved by
// making the first nonzero axis component positive.
inline Vec3 axis_angle_canonical(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  double angle = aa.angle();
  Vec3 axis = aa.axis();
  if (angle < 0) { angle = -angle; axis = -axis; }
  if (angle > M_PI - 1e-9) {
    // R(a, pi) == R(-a, pi); pick the representative deterministically.
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0) axis = -axis;
        break;
      }
    }
  }
  return axis * angle;
}

}  // namespace dexforge
