// SPDX-License-Identifier: Apache-2.0
#include "dexforge/closure.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "dexforge/grasp_math.hpp"
#include "dexforge/rng.hpp"

namespace dexforge {

void AdmittanceParams::validate() const {
  if (M <= 0 || D <= 0 || K <= 0 || dt <= 0 || contact_stiffness <= 0 ||
      max_steps <= 0 || settle_velocity_eps <= 0 || pen_tol <= 0 || moment_arm <= 0)
    throw std::invalid_argument("AdmittanceParams: all parameters must be positive");
  if (contact_damping < 0)
    throw std::invalid_argument("AdmittanceParams: contact_damping must be >= 0");
  // Explicit integration stays stable only below the spring-mass period;
  // contact stiffness reflects into joint space through the lever arm.
  double k_eff = K + contact_stiffness * moment_arm * moment_arm;
  if (dt > 2.0 * std::sqrt(M / k_eff))
    throw std::invalid_argument("AdmittanceParams: dt exceeds the stability bound");
}

std::string to_string(GraspStatus status) {
  switch (status) {
    case GraspStatus::valid: return "valid";
    case GraspStatus::approach_collision: return "approach_collision";
    case GraspStatus::no_contact: return "no_contact";
    case GraspStatus::unstable: return "unstable";
    case GraspStatus::ik_failure: return "ik_failure";
    case GraspStatus::diverged: return "diverged";
    case GraspStatus::penetration: return "penetration";
  }
  return "unknown";
}

GraspStatus grasp_status_from_string(const std::string& s) {
  for (auto v : {GraspStatus::valid, GraspStatus::approach_collision,
                 GraspStatus::no_contact, GraspStatus::unstable,
                 GraspStatus::ik_failure, GraspStatus::diverged,
                 GraspStatus::penetration})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown grasp status: " + s);
}

namespace {

nlohmann::json vec_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from_json(const nlohmann::json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

}  // namespace

nlohmann::json grasp_to_json(const GraspRecord& g) {
  nlohmann::json j;
  j["T"] = vec_to_json(g.T);
  Vec6 r6 = rot6d_encode(g.R);
  j["R6"] = {r6[0], r6[1], r6[2], r6[3], r6[4], r6[5]};
  j["j_init"] = std::vector<double>(g.j_init.data(), g.j_init.data() + 20);
  j["j_end"] = std::vector<double>(g.j_end.data(), g.j_end.data() + 20);
  j["finger_mask"] = g.finger_mask;
  j["constraint"] = {
      {"kind", g.constraint.kind == ConstraintKind::circular ? "circular" : "rectangular"},
      {"r", g.constraint.r},
      {"h", g.constraint.h}};
  j["status"] = to_string(g.status);
  nlohmann::json contacts = nlohmann::json::array();
  for (const auto& c : g.contacts)
    contacts.push_back({{"finger", c.finger},
                        {"point", vec_to_json(c.point)},
                        {"normal", vec_to_json(c.normal)},
                        {"depth", c.depth},
                        {"object_id", c.object_id}});
  j["contacts"] = contacts;
  j["seed"] = g.seed;
  j["object_id"] = g.object_id;
  j["scale"] = g.scale;
  return j;
}

GraspRecord grasp_from_json(const nlohmann::json& j) {
  GraspRecord g;
  g.T = vec_from_json(j.at("T"));
  Vec6 r6;
  for (int i = 0; i < 6; ++i) r6[i] = j.at("R6").at(i).get<double>();
  g.R = rot6d_decode(r6);
  for (int i = 0; i < 20; ++i) {
    g.j_init[i] = j.at("j_init").at(i).get<double>();
    g.j_end[i] = j.at("j_end").at(i).get<double>();
  }
  for (int i = 0; i < 5; ++i) g.finger_mask[i] = j.at("finger_mask").at(i).get<bool>();
  const auto& c = j.at("constraint");
  g.constraint.kind = c.at("kind").get<std::string>() == "circular"
                          ? ConstraintKind::circular
                          : ConstraintKind::rectangular;
  g.constraint.r = c.at("r").get<double>();
  g.constraint.h = c.at("h").get<double>();
  g.constraint.finger_mask = g.finger_mask;
  g.status = grasp_status_from_string(j.at("status").get<std::string>());
  for (const auto& jc : j.at("contacts")) {
    ContactInfo info;
    info.finger = jc.at("finger").get<int>();
    info.point = vec_from_json(jc.at("point"));
    info.normal = vec_from_json(jc.at("normal"));
    info.depth = jc.at("depth").get<double>();
    info.object_id = jc.at("object_id").get<int>();
    g.contacts.push_back(info);
  }
  g.seed = j.at("seed").get<uint64_t>();
  g.object_id = j.at("object_id").get<int>();
  g.scale = j.at("scale").get<double>();
  return g;
}

namespace {

double mesh_min_z(const TriMesh& mesh, const Iso3& pose) {
  double min_z = std::numeric_limits<double>::max();
  for (const auto& v : mesh.vertices) min_z = std::min(min_z, (pose * v).z());
  return min_z;
}

}  // namespace

ApproachResult check_approach(const HandDescription& hand, const Iso3& tcp_pose,
                              const JointVec& j_init, const ObstacleSet& obstacles,
                              double distance, int steps) {
  if (distance < 0) throw std::invalid_argument("check_approach: distance must be >= 0");
  const int n = distance == 0.0 ? 1 : std::max(steps, 2);
  for (int s = 0; s < n; ++s) {
    double a = n == 1 ? 1.0 : (double)s / (n - 1);
    // Retracted along the TCP local +z; the palm faces -z and leads the sweep.
    Iso3 pose_s = tcp_pose * translation(0, 0, (1.0 - a) * distance);
    FkResult fk = forward_kinematics(hand, j_init, hand.base_from_tcp(pose_s));
    bool hit = false;
    for_each_link(hand, fk, [&](int, int, const LinkGeom& link, const Iso3& pose) {
      if (hit) return;
      for (const auto& obs : obstacles.meshes) {
        if (Bvh::collides(*link.bvh, pose, *obs.bvh, obs.pose, 0.0)) {
          hit = true;
          return;
        }
      }
      if (obstacles.has_plane && mesh_min_z(*link.mesh, pose) < obstacles.plane_z)
        hit = true;
    });
    if (hit) return {false, s};
  }
  return {true, -1};
}

namespace {

Vec3 sdf_gradient(const SdfGrid& sdf, const Vec3& p) {
  const double h = 0.5 * sdf.cell();
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 dp = Vec3::Zero();
    dp[k] = h;
    g[k] = (sdf.signed_distance(p + dp) - sdf.signed_distance(p - dp)) / (2.0 * h);
  }
  return g;
}

Aabb transform_bounds(const Aabb& box, const Iso3& pose) {
  Aabb out;
  for (int i = 0; i < 8; ++i) {
    Vec3 c((i & 1) ? box.hi.x() : box.lo.x(), (i & 2) ? box.hi.y() : box.lo.y(),
           (i & 4) ? box.hi.z() : box.lo.z());
    out.expand(pose * c);
  }
  return out;
}

Aabb grid_bounds(const SdfGrid& sdf) {
  Aabb box;
  box.expand(sdf.origin());
  box.expand(sdf.origin() + Vec3(sdf.dims()[0] - 1, sdf.dims()[1] - 1,
                                 sdf.dims()[2] - 1) *
                                sdf.cell());
  return box;
}

// Per-finger kinematic snapshot used by the torque loop.
struct FingerState {
  std::array<Iso3, kJointsPerFinger> link_pose;
  std::array<Vec3, kJointsPerFinger> origin;
  std::array<Vec3, kJointsPerFinger> axis;
};

FingerState finger_state(const FingerChain& chain, const Iso3& base_pose,
                         const double* q4) {
  FingerState st;
  Iso3 X = base_pose * chain.base_transform;
  for (int k = 0; k < kJointsPerFinger; ++k) {
    const FingerJoint& joint = chain.joints[k];
    X = X * joint.parent_transform;
    st.origin[k] = X.translation();
    st.axis[k] = X.linear() * joint.axis;
    X = X * Iso3(Eigen::AngleAxisd(q4[k], joint.axis));
    st.link_pose[k] = X;
  }
  return st;
}

}  // namespace

ClosureResult close_fingers(const HandDescription& hand, const Iso3& tcp_pose,
                            const JointVec& j_start, const JointVec& goals,
                            const std::vector<SdfInstance>& objects,
                            const AdmittanceParams& params) {
  params.validate();
  validate_joints(hand, j_start);
  validate_joints(hand, goals);
  const Iso3 base_pose = hand.base_from_tcp(tcp_pose);
  const double ratio = hand.coupling_ratio;

  std::vector<Iso3> inv_poses(objects.size());
  std::vector<Aabb> grid_boxes(objects.size());
  for (size_t i = 0; i < objects.size(); ++i) {
    inv_poses[i] = objects[i].pose.inverse();
    grid_boxes[i] = grid_bounds(*objects[i].sdf);
  }

  JointVec q = j_start;
  Eigen::Matrix<double, 15, 1> qd = Eigen::Matrix<double, 15, 1>::Zero();
  ClosureResult result;

  auto clamp_finger = [&](int f) {
    const FingerChain& chain = hand.fingers[f];
    for (int k = 0; k < 3; ++k) {
      double& v = q[f * 4 + k];
      double c = std::clamp(v, chain.joints[k].lower, chain.joints[k].upper);
      if (c != v) {
        v = c;
        qd[f * 3 + k] = 0.0;
      }
    }
    double& v4 = q[f * 4 + 3];
    v4 = ratio * q[f * 4 + 2];
    double c4 = std::clamp(v4, chain.joints[3].lower, chain.joints[3].upper);
    if (c4 != v4) {
      v4 = c4;
      q[f * 4 + 2] = c4 / ratio;
      qd[f * 3 + 2] = 0.0;
    }
  };
  for (int f = 0; f < kFingers; ++f) clamp_finger(f);

  // Torque on the active joints of one finger from penalty contacts on its
  // links; joint 4 folds into active joint 3 through the coupling ratio.
  auto contact_torques = [&](int f, const FingerState& st, Eigen::Vector3d& tau) {
    tau.setZero();
    const FingerChain& chain = hand.fingers[f];
    for (int k = 0; k < kJointsPerFinger; ++k) {
      const LinkGeom& link = chain.joints[k].link;
      Aabb world_box = transform_bounds(link.mesh->bounds(), st.link_pose[k]);
      for (size_t oi = 0; oi < objects.size(); ++oi) {
        Aabb obj_box = transform_bounds(world_box, inv_poses[oi]);
        if (obj_box.distance(grid_boxes[oi]) > 0.0) continue;
        const SdfGrid& sdf = *objects[oi].sdf;
        for (const Vec3& sample : link.contact_samples) {
          Vec3 p = st.link_pose[k] * sample;
          Vec3 p_obj = inv_poses[oi] * p;
          double sd = sdf.signed_distance(p_obj);
          if (sd >= 0.0) continue;
          Vec3 n_obj = sdf_gradient(sdf, p_obj);
          double nn = n_obj.norm();
          if (nn < 1e-9) continue;
          Vec3 n = objects[oi].pose.linear() * (n_obj / nn);
          Vec3 force = -params.contact_stiffness * sd * n;
          if (params.contact_damping > 0.0) {
            Vec3 v_point = Vec3::Zero();
            for (int j = 0; j <= std::min(k, 2); ++j)
              v_point += qd[f * 3 + j] * st.axis[j].cross(p - st.origin[j]);
            if (k == 3)
              v_point += ratio * qd[f * 3 + 2] * st.axis[3].cross(p - st.origin[3]);
            force -= params.contact_damping * v_point.dot(n) * n;
          }
          for (int j = 0; j <= std::min(k, 2); ++j)
            tau[j] += st.axis[j].cross(p - st.origin[j]).dot(force);
          if (k == 3)
            tau[2] += ratio * st.axis[3].cross(p - st.origin[3]).dot(force);
        }
      }
    }
  };

  for (int step = 0; step < params.max_steps; ++step) {
    result.steps = step;
    Eigen::Matrix<double, 15, 1> qdd;
    for (int f = 0; f < kFingers; ++f) {
      FingerState st = finger_state(hand.fingers[f], base_pose, q.data() + f * 4);
      Eigen::Vector3d tau;
      contact_torques(f, st, tau);
      for (int k = 0; k < 3; ++k) {
        double spring = params.K * (goals[f * 4 + k] - q[f * 4 + k]);
        if (k == 2) spring += ratio * params.K * (goals[f * 4 + 3] - q[f * 4 + 3]);
        qdd[f * 3 + k] =
            (spring - params.D * qd[f * 3 + k] + tau[k]) / params.M;
      }
    }
    if (qd.cwiseAbs().maxCoeff() < params.settle_velocity_eps &&
        (qdd * params.dt).cwiseAbs().maxCoeff() < params.settle_velocity_eps) {
      result.settled = true;
      break;
    }
    qd += params.dt * qdd;
    double peak = qd.cwiseAbs().maxCoeff();
    if (peak > 100.0) {
      result.diverged = true;
      Eigen::Index worst;
      qd.cwiseAbs().maxCoeff(&worst);
      result.diverged_finger = (int)(worst / 3);
      break;
    }
    for (int f = 0; f < kFingers; ++f) {
      for (int k = 0; k < 3; ++k) q[f * 4 + k] += params.dt * qd[f * 3 + k];
      clamp_finger(f);
    }
  }

  result.j_end = q;
  // Final contact sweep over every link including the palm.
  FkResult fk = forward_kinematics(hand, q, base_pose);
  for_each_link(hand, fk, [&](int f, int, const LinkGeom& link, const Iso3& pose) {
    Aabb world_box = transform_bounds(link.mesh->bounds(), pose);
    for (size_t oi = 0; oi < objects.size(); ++oi) {
      Aabb obj_box = transform_bounds(world_box, inv_poses[oi]);
      if (obj_box.distance(grid_boxes[oi]) > 0.0) continue;
      const SdfGrid& sdf = *objects[oi].sdf;
      for (const Vec3& sample : link.contact_samples) {
        Vec3 p = pose * sample;
        Vec3 p_obj = inv_poses[oi] * p;
        double sd = sdf.signed_distance(p_obj);
        if (sd >= 0.0) continue;
        Vec3 n_obj = sdf_gradient(sdf, p_obj);
        double nn = n_obj.norm();
        if (nn < 1e-9) continue;
        ContactInfo info;
        info.finger = f;
        info.point = p;
        info.normal = objects[oi].pose.linear() * (n_obj / nn);
        info.depth = -sd;
        info.object_id = objects[oi].object_id;
        result.contacts.push_back(info);
        if (f >= 0) result.finger_contact[f] = true;
        result.max_penetration = std::max(result.max_penetration, info.depth);
      }
    }
  });
  return result;
}

StabilityResult stability_test(const std::vector<ContactInfo>& contacts,
                               const TriMesh& object, const SdfGrid& sdf,
                               const Iso3& object_pose, const StabilityParams& params) {
  StabilityResult result;
  if (contacts.empty()) return result;

  const double m = params.mass;
  Vec3 ext = object.bounds().extents();
  Vec3 com_local = object.bounds().center();
  Mat3 I_local = Mat3::Zero();
  I_local(0, 0) = m * (ext.y() * ext.y() + ext.z() * ext.z()) / 12.0;
  I_local(1, 1) = m * (ext.x() * ext.x() + ext.z() * ext.z()) / 12.0;
  I_local(2, 2) = m * (ext.x() * ext.x() + ext.y() * ext.y()) / 12.0;

  // Keep the explicit integrator under the stiffest possible contact load.
  double omega = std::sqrt((double)contacts.size() * params.contact_stiffness / m);
  int substeps = std::max(1, (int)std::ceil(params.dt * omega / 0.5));
  double h = params.dt / substeps;

  const Vec3 dirs[6] = {Vec3::UnitX(),  -Vec3::UnitX(), Vec3::UnitY(),
                        -Vec3::UnitY(), Vec3::UnitZ(),  -Vec3::UnitZ()};
  for (int d = 0; d < 6; ++d) {
    Iso3 X = object_pose;
    Vec3 v = Vec3::Zero(), w = Vec3::Zero();
    const Vec3 c0 = object_pose * com_local;
    const Mat3 R0 = object_pose.linear();
    bool failed = false;
    for (int step = 0; step < params.steps && !failed; ++step) {
      for (int sub = 0; sub < substeps; ++sub) {
        Vec3 c = X * com_local;
        Vec3 F = m * params.gravity * dirs[d] - params.linear_damping * v;
        Vec3 T = -params.angular_damping * w;
        Iso3 inv = X.inverse();
        for (const auto& contact : contacts) {
          Vec3 p_obj = inv * contact.point;
          double sd = sdf.signed_distance(p_obj);
          if (sd >= 0.0) continue;
          Vec3 n_obj = sdf_gradient(sdf, p_obj);
          double nn = n_obj.norm();
          if (nn < 1e-9) continue;
          // Reaction on the object pushes it off the intruding hand point.
          Vec3 n = X.linear() * (n_obj / nn);
          Vec3 f = params.contact_stiffness * sd * n;
          F += f;
          T += (contact.point - c).cross(f);
        }
        Mat3 I_world = X.linear() * I_local * X.linear().transpose();
        v += h * F / m;
        w += h * I_world.inverse() * T;
        X.translation() += h * v;
        double wn = w.norm();
        if (wn > 1e-12) {
          Mat3 dR = Eigen::AngleAxisd(wn * h, w / wn).toRotationMatrix();
          X.linear() = dR * X.linear();
          // Rotation also moves the COM-anchored translation.
          Vec3 c_new = X * com_local;
          X.translation() += (c + h * v) - c_new;
        }
      }
      double disp = ((X * com_local) - c0).norm();
      double rot = Eigen::AngleAxisd(X.linear() * R0.transpose()).angle();
      result.max_displacement = std::max(result.max_displacement, disp);
      result.max_rotation = std::max(result.max_rotation, std::abs(rot));
      if (disp > params.disp_tol || std::abs(rot) > params.rot_tol) {
        result.failed_direction = d;
        failed = true;
      }
    }
    if (failed) return result;
  }
  result.pass = true;
  return result;
}

SynthesisResult synthesize_object_grasps(const TriMesh& object, const Bvh& object_bvh,
                                         const SdfGrid& object_sdf,
                                         const HandDescription& hand,
                                         const SynthesisConfig& config, int n_attempts,
                                         uint64_t seed, int jobs) {
  config.admittance.validate();
  if (n_attempts < 0)
    throw std::invalid_argument("synthesize_object_grasps: negative attempt count");

  const Iso3 tip_frame = fingertip_plane_frame(hand, JointVec::Zero());
  ObstacleSet obstacles;
  obstacles.meshes.push_back({&object_bvh, Iso3::Identity()});
  std::vector<SdfInstance> sdfs{{&object_sdf, Iso3::Identity(), object.object_id}};

  std::vector<GraspRecord> records((size_t)n_attempts);
  std::vector<AttemptLog> logs((size_t)n_attempts);
  std::vector<char> is_valid((size_t)n_attempts, 0);

  auto run_attempt = [&](int attempt) {
    auto t0 = std::chrono::steady_clock::now();
    uint64_t attempt_seed = mix_seed(seed, (uint64_t)attempt);
    Rng rng(attempt_seed);
    GraspStatus status = GraspStatus::valid;
    GraspRecord record;

    Iso3 pose = sample_pose(object.bounds(), rng);
    ConstraintSpec spec = sample_constraint(rng, config.sampler, config.class_hint);
    std::array<Vec3, 5> targets = constraint_targets(spec, hand.delta);

    JointVec goals = JointVec::Zero();
    for (int f = 0; f < kFingers && status == GraspStatus::valid; ++f) {
      if (!spec.finger_mask[f]) continue;
      Vec3 target_ffi =
          hand.fingers[f].base_transform.inverse() * (tip_frame * targets[f]);
      IkResult ik = finger_ik(hand, f, target_ffi);
      if (!ik.reachable) {
        status = GraspStatus::ik_failure;
        break;
      }
      goals.segment<4>(f * 4) = ik.angles;
    }

    if (status == GraspStatus::valid) {
      JointVec j_init0 = derive_pregrasp(goals, spec.finger_mask);
      ApproachResult approach =
          check_approach(hand, pose, j_init0, obstacles, config.approach_distance,
                         config.approach_steps);
      if (!approach.collision_free) status = GraspStatus::approach_collision;

      if (status == GraspStatus::valid) {
        ClosureResult closure =
            close_fingers(hand, pose, j_init0, goals, sdfs, config.admittance);
        if (closure.diverged) {
          status = GraspStatus::diverged;
        } else {
          int touching = 0;
          for (int f = 0; f < kFingers; ++f)
            if (spec.finger_mask[f] && closure.finger_contact[f]) ++touching;
          if (touching < 2) {
            status = GraspStatus::no_contact;
          } else if (closure.max_penetration > config.admittance.pen_tol) {
            status = GraspStatus::penetration;
          } else {
            JointVec j_init = derive_pregrasp(closure.j_end, spec.finger_mask);
            ApproachResult recheck =
                check_approach(hand, pose, j_init, obstacles,
                               config.approach_distance, config.approach_steps);
            if (!recheck.collision_free) {
              status = GraspStatus::approach_collision;
            } else {
              StabilityResult stab =
                  stability_test(closure.contacts, object, object_sdf,
                                 Iso3::Identity(), config.stability);
              if (!stab.pass) {
                status = GraspStatus::unstable;
              } else {
                record.T = pose.translation();
                record.R = pose.linear();
                record.j_init = j_init;
                record.j_end = closure.j_end;
                record.finger_mask = spec.finger_mask;
                record.constraint = spec;
                record.status = GraspStatus::valid;
                record.seed = attempt_seed;
                record.object_id = object.object_id;
                // Per-finger deepest contact as the record summary.
                for (int f = 0; f < kFingers; ++f) {
                  const ContactInfo* best = nullptr;
                  for (const auto& c : closure.contacts)
                    if (c.finger == f && (!best || c.depth > best->depth)) best = &c;
                  if (best) record.contacts.push_back(*best);
                }
                is_valid[attempt] = 1;
              }
            }
          }
        }
      }
    }

    if (is_valid[attempt]) records[attempt] = std::move(record);
    AttemptLog log;
    log.attempt = attempt;
    log.seed = attempt_seed;
    log.status = status;
    log.kind = spec.kind;
    log.mask_fingers = 0;
    for (bool b : spec.finger_mask) log.mask_fingers += b ? 1 : 0;
    log.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    logs[attempt] = log;
  };

  jobs = std::max(1, jobs);
  if (jobs == 1 || n_attempts <= 1) {
    for (int a = 0; a < n_attempts; ++a) run_attempt(a);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < jobs; ++t)
      pool.emplace_back([&] {
        for (int a = next.fetch_add(1); a < n_attempts; a = next.fetch_add(1))
          run_attempt(a);
      });
    for (auto& th : pool) th.join();
  }

  SynthesisResult out;
  for (int a = 0; a < n_attempts; ++a) {
    if (is_valid[a]) out.valid.push_back(std::move(records[a]));
    out.attempts.push_back(logs[a]);
  }
  return out;
}

}  // namespace dexforge
