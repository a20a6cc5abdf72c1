// SPDX-License-Identifier: Apache-2.0
#include "dexforge/hand.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>

#include "dexforge/io.hpp"
#include "dexforge/rng.hpp"

namespace dexforge {

namespace {

Vec3 parse_vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument(std::string("hand file: ") + what +
                                " must be a 3-array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

Iso3 parse_transform(const nlohmann::json& j, const char* what) {
  Iso3 out = Iso3::Identity();
  if (j.contains("translation")) out.translation() = parse_vec3(j["translation"], what);
  if (j.contains("rotation")) {
    const auto& rows = j["rotation"];
    if (!rows.is_array() || rows.size() != 3)
      throw std::invalid_argument(std::string("hand file: ") + what +
                                  " rotation must be 3 rows");
    Mat3 R;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) R(r, c) = rows[r][c].get<double>();
    if ((R * R.transpose() - Mat3::Identity()).norm() > 1e-6 ||
        R.determinant() < 0.0)
      throw std::invalid_argument(std::string("hand file: ") + what +
                                  " rotation is not orthonormal");
    out.linear() = R;
  }
  return out;
}

}  // namespace

HandDescription load_hand(const std::string& path, int contact_samples_per_link) {
  nlohmann::json j = load_json(path);
  HandDescription hand;
  hand.content_hash = fnv1a(read_text_file(path));
  hand.schema_version = j.at("schema_version").get<int>();
  if (hand.schema_version != 1)
    throw std::invalid_argument("hand file: unsupported schema_version");
  hand.name = j.at("name").get<std::string>();
  hand.coupling_ratio = j.at("coupling_ratio").get<double>();
  if (hand.coupling_ratio <= 0)
    throw std::invalid_argument("hand file: coupling_ratio must be > 0");
  if (j.contains("tcp_offset"))
    hand.tcp_offset = parse_transform(j["tcp_offset"], "tcp_offset");
  const auto& delta = j.at("delta");
  if (delta.size() != kFingers)
    throw std::invalid_argument("hand file: delta must list 5 values");
  for (int i = 0; i < kFingers; ++i) hand.delta[i] = delta[i].get<double>();

  const auto& fingers = j.at("fingers");
  if (fingers.size() != kFingers)
    throw std::invalid_argument("hand file: finger count must be 5");

  std::filesystem::path dir = std::filesystem::path(path).parent_path();
  std::map<std::string, LinkGeom> mesh_cache;
  auto load_link = [&](const std::string& rel) -> LinkGeom {
    auto it = mesh_cache.find(rel);
    if (it != mesh_cache.end()) return it->second;
    LinkGeom geom;
    geom.mesh = std::make_shared<TriMesh>(load_mesh((dir / rel).string()));
    geom.bvh = std::make_shared<Bvh>(*geom.mesh);
    geom.contact_samples = sample_surface(*geom.mesh, contact_samples_per_link,
                                          mix_seed(0x68616e64u, fnv1a(rel)));
    mesh_cache.emplace(rel, geom);
    return geom;
  };

  hand.palm = load_link(j.at("palm_mesh").get<std::string>());

  for (int f = 0; f < kFingers; ++f) {
    const auto& jf = fingers[f];
    FingerChain& chain = hand.fingers[f];
    chain.name = jf.at("name").get<std::string>();
    chain.base_transform = parse_transform(jf.at("base_transform"), "base_transform");
    chain.fingertip_local = parse_vec3(jf.at("fingertip_local"), "fingertip_local");
    const auto& joints = jf.at("joints");
    if (joints.size() != kJointsPerFinger)
      throw std::invalid_argument("hand file: joint count per finger must be 4");
    for (int k = 0; k < kJointsPerFinger; ++k) {
      const auto& jj = joints[k];
      FingerJoint& joint = chain.joints[k];
      joint.tag = jj.at("tag").get<std::string>();
      joint.axis = parse_vec3(jj.at("axis"), "axis").normalized();
      if (jj.contains("parent_transform"))
        joint.parent_transform = parse_transform(jj["parent_transform"], "parent_transform");
      const auto& lim = jj.at("limits");
      joint.lower = lim[0].get<double>();
      joint.upper = lim[1].get<double>();
      if (!(joint.lower < joint.upper))
        throw std::invalid_argument("hand file: joint limits must satisfy lower < upper");
      joint.link = load_link(jj.at("mesh").get<std::string>());
    }
    if (chain.joints[0].tag != "yaw" || chain.joints[1].tag != "pitch")
      throw std::invalid_argument(
          "hand file: joints 1 and 2 must be tagged yaw and pitch");
  }
  return hand;
}

void validate_joints(const HandDescription& hand, const JointVec& q, double tol) {
  for (int f = 0; f < kFingers; ++f) {
    for (int k = 0; k < kJointsPerFinger; ++k) {
      double v = q[f * kJointsPerFinger + k];
      const FingerJoint& joint = hand.fingers[f].joints[k];
      if (v < joint.lower - tol || v > joint.upper + tol)
        throw std::invalid_argument("joint vector violates limits (finger " +
                                    std::to_string(f) + ", joint " +
                                    std::to_string(k + 1) + ")");
    }
    double q3 = q[f * kJointsPerFinger + 2], q4 = q[f * kJointsPerFinger + 3];
    if (std::abs(q4 - hand.coupling_ratio * q3) > tol)
      throw std::invalid_argument("joint vector violates coupling (finger " +
                                  std::to_string(f) + ")");
  }
}

FkResult forward_kinematics(const HandDescription& hand, const JointVec& q,
                            const Iso3& base_pose) {
  validate_joints(hand, q);
  FkResult out;
  out.base = base_pose;
  for (int f = 0; f < kFingers; ++f) {
    const FingerChain& chain = hand.fingers[f];
    Iso3 X = base_pose * chain.base_transform;
    out.finger_bases[f] = X;
    for (int k = 0; k < kJointsPerFinger; ++k) {
      const FingerJoint& joint = chain.joints[k];
      X = X * joint.parent_transform *
          Iso3(Eigen::AngleAxisd(q[f * kJointsPerFinger + k], joint.axis));
      out.links[f][k] = X;
    }
    out.fingertips[f] = X * chain.fingertip_local;
  }
  return out;
}

Iso3 fingertip_plane_frame(const HandDescription& hand, const JointVec& q) {
  FkResult fk = forward_kinematics(hand, q, Iso3::Identity());
  Iso3 tcp_inv = hand.tcp_offset.inverse();
  double mean_z = 0.0;
  for (int f = 0; f < kFingers; ++f) mean_z += (tcp_inv * fk.fingertips[f]).z();
  mean_z /= kFingers;
  return hand.tcp_offset * Iso3(Eigen::Translation3d(0, 0, mean_z));
}

namespace {

// Fingertip position and joint origins/axes for one finger in F_fi, as a
// function of the 4 coupled joint angles.
struct FingerFk {
  Vec3 tip;
  std::array<Vec3, kJointsPerFinger> origins;
  std::array<Vec3, kJointsPerFinger> axes;
};

FingerFk finger_fk_local(const FingerChain& chain, const Eigen::Vector4d& angles) {
  FingerFk out;
  Iso3 X = Iso3::Identity();
  for (int k = 0; k < kJointsPerFinger; ++k) {
    const FingerJoint& joint = chain.joints[k];
    X = X * joint.parent_transform;
    out.origins[k] = X.translation();
    out.axes[k] = X.linear() * joint.axis;
    X = X * Iso3(Eigen::AngleAxisd(angles[k], joint.axis));
  }
  out.tip = X * chain.fingertip_local;
  return out;
}

}  // namespace

IkResult finger_ik(const HandDescription& hand, int finger, const Vec3& target,
                   const Eigen::Vector4d& seed, double tol, int max_iters,
                   double damping) {
  if (finger < 0 || finger >= kFingers)
    throw std::invalid_argument("finger_ik: finger index out of range");
  const FingerChain& chain = hand.fingers[finger];
  const double ratio = hand.coupling_ratio;

  Eigen::Vector4d q = seed;
  q[3] = ratio * q[2];
  auto clamp_all = [&](Eigen::Vector4d& v) {
    bool clamped = false;
    for (int k = 0; k < 3; ++k) {
      double c = std::clamp(v[k], chain.joints[k].lower, chain.joints[k].upper);
      if (c != v[k]) clamped = true;
      v[k] = c;
    }
    // Coupling first, then the distal limit wins by pulling theta_3 back.
    v[3] = ratio * v[2];
    double c = std::clamp(v[3], chain.joints[3].lower, chain.joints[3].upper);
    if (c != v[3]) {
      clamped = true;
      v[3] = c;
      v[2] = c / ratio;
    }
    return clamped;
  };
  clamp_all(q);

  IkResult result;
  double best_residual = std::numeric_limits<double>::max();
  Eigen::Vector4d best_q = q;
  for (int it = 0; it < max_iters; ++it) {
    FingerFk fk = finger_fk_local(chain, q);
    Vec3 e = target - fk.tip;
    double res = e.norm();
    if (res < best_residual) {
      best_residual = res;
      best_q = q;
    }
    if (res <= tol) {
      result.iterations = it;
      break;
    }
    Eigen::Matrix3d J;
    for (int c = 0; c < 3; ++c) {
      Vec3 col = fk.axes[c].cross(fk.tip - fk.origins[c]);
      if (c == 2) col += ratio * fk.axes[3].cross(fk.tip - fk.origins[3]);
      J.col(c) = col;
    }
    Mat3 JJt = J * J.transpose() + damping * damping * Mat3::Identity();
    Vec3 dq3 = J.transpose() * JJt.ldlt().solve(e);
    double step = dq3.norm();
    if (step > 0.5) dq3 *= 0.5 / step;
    q.head<3>() += dq3;
    result.limit_clamped = clamp_all(q) || result.limit_clamped;
    result.iterations = it + 1;
  }
  result.angles = best_q;
  result.residual = best_residual;
  result.reachable = best_residual <= tol;
  return result;
}

JointVec derive_pregrasp(const JointVec& j_end, const std::array<bool, kFingers>& mask) {
  static const double factors[kJointsPerFinger] = {1.0, 0.6, 0.2, 0.2};
  JointVec out = j_end;
  for (int f = 0; f < kFingers; ++f) {
    if (!mask[f]) continue;
    for (int k = 0; k < kJointsPerFinger; ++k)
      out[f * kJointsPerFinger + k] = factors[k] * j_end[f * kJointsPerFinger + k];
  }
  return out;
}

}  // namespace dexforge
