// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dexforge/bvh.hpp"
#include "dexforge/transform.hpp"
#include "dexforge/trimesh.hpp"

namespace dexforge {

// 20 angles, finger-major: finger 0 joints 1-4, finger 1 joints 1-4, ...
using JointVec = Eigen::Matrix<double, 20, 1>;

constexpr int kFingers = 5;
constexpr int kJointsPerFinger = 4;

// Collision geometry attached to one link (or the palm), in the link frame.
struct LinkGeom {
  std::shared_ptr<TriMesh> mesh;
  std::shared_ptr<Bvh> bvh;
  std::vector<Vec3> contact_samples;  // surface points, link frame
};

struct FingerJoint {
  Iso3 parent_transform = Iso3::Identity();  // previous joint frame -> this joint
  Vec3 axis = Vec3::UnitZ();                 // unit rotation axis, local
  double lower = 0.0, upper = 0.0;           // radians
  std::string tag;                           // yaw | pitch | distal
  LinkGeom link;
};

struct FingerChain {
  std::string name;
  Iso3 base_transform = Iso3::Identity();  // F_base -> F_fi
  std::array<FingerJoint, kJointsPerFinger> joints;
  Vec3 fingertip_local = Vec3::Zero();     // in the last link frame
};

struct HandDescription {
  std::string name;
  int schema_version = 0;
  std::array<FingerChain, kFingers> fingers;
  Iso3 tcp_offset = Iso3::Identity();  // F_base -> F_tcp
  std::array<double, kFingers> delta{};
  double coupling_ratio = 1.0;         // theta_i4 = ratio * theta_i3
  LinkGeom palm;
  uint64_t content_hash = 0;           // digest of the description file

  Iso3 base_from_tcp(const Iso3& tcp_pose) const {
    return tcp_pose * tcp_offset.inverse();
  }
};

// Parses and validates a hand description file; loads link meshes relative to
// it and precomputes per-link BVHs and contact sample points.
HandDescription load_hand(const std::string& path, int contact_samples_per_link = 100);

// Throws unless q is within limits and coupling-consistent.
void validate_joints(const HandDescription& hand, const JointVec& q, double tol = 1e-9);

struct FkResult {
  Iso3 base = Iso3::Identity();
  std::array<Iso3, kFingers> finger_bases;
  std::array<std::array<Iso3, kJointsPerFinger>, kFingers> links;
  std::array<Vec3, kFingers> fingertips;
};

FkResult forward_kinematics(const HandDescription& hand, const JointVec& q,
                            const Iso3& base_pose);

// F_base -> F_tip: F_tcp's rotation, origin shifted along F_tcp z by the mean
// fingertip z-coordinate expressed in F_tcp.
Iso3 fingertip_plane_frame(const HandDescription& hand, const JointVec& q);

struct IkResult {
  Eigen::Vector4d angles = Eigen::Vector4d::Zero();
  double residual = 0.0;  // meters
  bool reachable = false;
  bool limit_clamped = false;
  int iterations = 0;
};

// Damped-least-squares IK over the 3 active DoF of one finger; target is in
// the finger base frame F_fi. Coupling theta_4 = ratio * theta_3 is enforced
// throughout; the seed defaults to the open pose.
IkResult finger_ik(const HandDescription& hand, int finger, const Vec3& target,
                   const Eigen::Vector4d& seed = Eigen::Vector4d::Zero(),
                   double tol = 1e-3, int max_iters = 200, double damping = 1e-3);

// Pre-grasp from a final configuration: factors (1.0, 0.6, 0.2, 0.2) on
// participating fingers, other fingers unchanged.
JointVec derive_pregrasp(const JointVec& j_end, const std::array<bool, kFingers>& mask);

// Visits every collision geom with its world pose: palm first as
// (finger -1, joint -1), then finger links.
template <typename F>
void for_each_link(const HandDescription& hand, const FkResult& fk, F&& visit) {
  visit(-1, -1, hand.palm, fk.base);
  for (int f = 0; f < kFingers; ++f)
    for (int k = 0; k < kJointsPerFinger; ++k)
      visit(f, k, hand.fingers[f].joints[k].link, fk.links[f][k]);
}

}  // namespace dexforge
