// SPDX-License-Identifier: Apache-2.0
//
// Approach sweep, admittance finger closure, frozen-contact stability, and
// the per-object synthesis loop.

#include <doctest.h>

#include <cmath>

#include "dexforge/closure.hpp"
#include "dexforge/primitives.hpp"
#include "dexforge/sdf.hpp"

using namespace dexforge;

namespace {

const HandDescription& test_hand() {
  static HandDescription hand =
      load_hand(std::string(DEXFORGE_SOURCE_DIR) + "/assets/hands/default/hand.json");
  return hand;
}

JointVec uniform_goals(double q1, double q2, double q3) {
  JointVec q = JointVec::Zero();
  for (int f = 0; f < kFingers; ++f) {
    q[f * 4 + 0] = q1;
    q[f * 4 + 1] = q2;
    q[f * 4 + 2] = q3;
    q[f * 4 + 3] = q3;  // coupling ratio 1 in the test hand
  }
  return q;
}

}  // namespace

TEST_CASE("admittance parameters validate the integration bound") {
  AdmittanceParams p;
  CHECK_NOTHROW(p.validate());

  p.dt = 0.02;  // above 2 sqrt(M / (K + k_c a^2))
  CHECK_THROWS_WITH_AS(p.validate(), doctest::Contains("stability bound"),
                       std::invalid_argument);

  p = AdmittanceParams{};
  p.K = -1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = AdmittanceParams{};
  p.contact_damping = -0.1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = AdmittanceParams{};
  p.max_steps = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("grasp status strings round trip") {
  for (auto s : {GraspStatus::valid, GraspStatus::approach_collision,
                 GraspStatus::no_contact, GraspStatus::unstable,
                 GraspStatus::ik_failure, GraspStatus::diverged,
                 GraspStatus::penetration})
    CHECK(grasp_status_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(grasp_status_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("grasp records round trip through JSON") {
  GraspRecord g;
  g.T = Vec3(0.1, -0.2, 0.3);
  g.R = rot_z(0.7) * rot_x(-0.3);
  for (int i = 0; i < 20; ++i) {
    g.j_init[i] = 0.01 * i;
    g.j_end[i] = -0.02 * i;
  }
  g.finger_mask = {true, true, true, false, false};
  g.constraint.kind = ConstraintKind::rectangular;
  g.constraint.r = 0.035;
  g.constraint.h = 0.012;
  g.status = GraspStatus::valid;
  ContactInfo c;
  c.finger = 1;
  c.point = Vec3(0.01, 0.02, 0.03);
  c.normal = Vec3(0, 0, 1);
  c.depth = 0.0015;
  c.object_id = 4;
  g.contacts.push_back(c);
  g.seed = 123456789ull;
  g.object_id = 2;
  g.scale = 1.1;

  GraspRecord h = grasp_from_json(grasp_to_json(g));
  CHECK((h.T - g.T).norm() == 0.0);
  CHECK((h.R - g.R).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((h.j_init - g.j_init).cwiseAbs().maxCoeff() == 0.0);
  CHECK((h.j_end - g.j_end).cwiseAbs().maxCoeff() == 0.0);
  CHECK(h.finger_mask == g.finger_mask);
  CHECK(h.constraint.kind == g.constraint.kind);
  CHECK(h.constraint.r == g.constraint.r);
  CHECK(h.constraint.h == g.constraint.h);
  CHECK(h.status == g.status);
  REQUIRE(h.contacts.size() == 1);
  CHECK(h.contacts[0].finger == 1);
  CHECK((h.contacts[0].point - c.point).norm() == 0.0);
  CHECK(h.contacts[0].depth == c.depth);
  CHECK(h.contacts[0].object_id == 4);
  CHECK(h.seed == g.seed);
  CHECK(h.object_id == 2);
  CHECK(h.scale == 1.1);
}

TEST_CASE("approach sweep passes in free space and hits obstacles") {
  const HandDescription& hand = test_hand();
  JointVec open = JointVec::Zero();

  ObstacleSet none;
  ApproachResult free_space =
      check_approach(hand, Iso3::Identity(), open, none, 0.1, 20);
  CHECK(free_space.collision_free);
  CHECK(free_space.first_collision_step == -1);

  // Support plane far below: still free.
  ObstacleSet low_plane;
  low_plane.has_plane = true;
  low_plane.plane_z = -0.5;
  CHECK(check_approach(hand, Iso3::Identity(), open, low_plane, 0.1, 20)
            .collision_free);

  // Plane crossing the final pose but not the retracted start: the sweep
  // reports the first offending step.
  ObstacleSet mid_plane;
  mid_plane.has_plane = true;
  mid_plane.plane_z = -0.05;
  ApproachResult blocked =
      check_approach(hand, Iso3::Identity(), open, mid_plane, 0.2, 20);
  CHECK(!blocked.collision_free);
  CHECK(blocked.first_collision_step > 0);

  // A box sitting at the grasp pose blocks the sweep.
  TriMesh box = make_box(0.05, 0.05, 0.05);
  Bvh box_bvh(box);
  ObstacleSet with_box;
  with_box.meshes.push_back({&box_bvh, translation(0, 0, -0.05)});
  CHECK(!check_approach(hand, Iso3::Identity(), open, with_box, 0.1, 20)
             .collision_free);

  // The same box far to the side does not.
  ObstacleSet far_box;
  far_box.meshes.push_back({&box_bvh, translation(0.8, 0, -0.05)});
  CHECK(check_approach(hand, Iso3::Identity(), open, far_box, 0.1, 20)
            .collision_free);

  CHECK_THROWS_AS(check_approach(hand, Iso3::Identity(), open, none, -0.1, 20),
                  std::invalid_argument);
}

TEST_CASE("free-space closure reaches the goal configuration") {
  const HandDescription& hand = test_hand();
  AdmittanceParams params;
  JointVec goals = uniform_goals(0.2, 0.9, 0.6);

  ClosureResult r = close_fingers(hand, Iso3::Identity(), JointVec::Zero(), goals,
                                  {}, params);
  CHECK(r.settled);
  CHECK(!r.diverged);
  CHECK(r.contacts.empty());
  CHECK((r.j_end - goals).cwiseAbs().maxCoeff() < 1e-3);
  for (int f = 0; f < kFingers; ++f)
    CHECK(std::abs(r.j_end[f * 4 + 3] - hand.coupling_ratio * r.j_end[f * 4 + 2]) <
          1e-12);
}

TEST_CASE("closure blocked by an object settles in contact within tolerance") {
  const HandDescription& hand = test_hand();
  AdmittanceParams params;
  JointVec start = JointVec::Zero();
  JointVec goals = uniform_goals(0.0, 0.9, 0.6);

  // Park a ball on the index fingertip's mid-sweep position so the closing
  // finger is guaranteed to run into it.
  JointVec mid = 0.5 * (start + goals);
  FkResult fk_mid = forward_kinematics(hand, mid, Iso3::Identity());
  Vec3 center = fk_mid.fingertips[1];

  TriMesh ball = make_icosphere(0.02, 3);
  SdfGrid ball_sdf(ball, 0.002, 0.02);
  std::vector<SdfInstance> objects{{&ball_sdf, translation(center.x(), center.y(),
                                                           center.z()),
                                    7}};

  ClosureResult r =
      close_fingers(hand, Iso3::Identity(), start, goals, objects, params);
  CHECK(r.settled);
  CHECK(!r.diverged);
  REQUIRE(!r.contacts.empty());
  CHECK(r.finger_contact[1]);
  CHECK(r.max_penetration <= params.pen_tol);
  CHECK(r.max_penetration > 0.0);
  for (const ContactInfo& c : r.contacts) {
    CHECK(c.object_id == 7);
    CHECK(c.depth <= params.pen_tol);
    CHECK(std::abs(c.normal.norm() - 1.0) < 1e-9);
  }
  // The blocked finger stops short of its pitch goal.
  CHECK(r.j_end[1 * 4 + 1] < goals[1 * 4 + 1] - 1e-3);
}

TEST_CASE("closure is deterministic") {
  const HandDescription& hand = test_hand();
  AdmittanceParams params;
  JointVec goals = uniform_goals(0.1, 1.0, 0.7);
  TriMesh ball = make_icosphere(0.025, 3);
  SdfGrid sdf(ball, 0.002, 0.02);
  std::vector<SdfInstance> objects{{&sdf, translation(0, 0, -0.06), 0}};

  ClosureResult a =
      close_fingers(hand, Iso3::Identity(), JointVec::Zero(), goals, objects, params);
  ClosureResult b =
      close_fingers(hand, Iso3::Identity(), JointVec::Zero(), goals, objects, params);
  CHECK((a.j_end - b.j_end).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.contacts.size() == b.contacts.size());
  CHECK(a.steps == b.steps);
}

TEST_CASE("a caged sphere is stable; a single side contact is not") {
  TriMesh ball = make_icosphere(0.03, 3);
  SdfGrid sdf(ball, 0.002, 0.02);
  StabilityParams params;

  auto contact_at = [](const Vec3& axis) {
    ContactInfo c;
    c.normal = axis;
    c.point = axis * 0.029;  // 1 mm inside the surface
    c.depth = 0.001;
    c.finger = 0;
    c.object_id = 0;
    return c;
  };

  std::vector<ContactInfo> cage{contact_at(Vec3::UnitX()),  contact_at(-Vec3::UnitX()),
                                contact_at(Vec3::UnitY()),  contact_at(-Vec3::UnitY()),
                                contact_at(Vec3::UnitZ()),  contact_at(-Vec3::UnitZ())};
  StabilityResult caged = stability_test(cage, ball, sdf, Iso3::Identity(), params);
  CHECK(caged.pass);
  CHECK(caged.max_displacement < params.disp_tol);
  CHECK(caged.max_rotation < params.rot_tol);

  std::vector<ContactInfo> single{contact_at(Vec3::UnitX())};
  StabilityResult loose = stability_test(single, ball, sdf, Iso3::Identity(), params);
  CHECK(!loose.pass);
  CHECK(loose.failed_direction >= 0);
  CHECK(loose.max_displacement > params.disp_tol);

  StabilityResult empty = stability_test({}, ball, sdf, Iso3::Identity(), params);
  CHECK(!empty.pass);
}

TEST_CASE("object synthesis is deterministic and emits coupled valid grasps") {
  const HandDescription& hand = test_hand();
  TriMesh ball = make_icosphere(0.028, 3);
  ball.object_id = 0;
  Bvh bvh(ball);
  SdfGrid sdf(ball, 0.002, 0.02);

  SynthesisConfig config;
  config.class_hint = "Sphere";
  const int attempts = 10;

  SynthesisResult a = synthesize_object_grasps(ball, bvh, sdf, hand, config,
                                               attempts, 99, 1);
  SynthesisResult b = synthesize_object_grasps(ball, bvh, sdf, hand, config,
                                               attempts, 99, 1);
  SynthesisResult c = synthesize_object_grasps(ball, bvh, sdf, hand, config,
                                               attempts, 99, 2);

  REQUIRE(a.attempts.size() == attempts);
  REQUIRE(b.attempts.size() == attempts);
  REQUIRE(c.attempts.size() == attempts);
  CHECK(a.valid.size() == b.valid.size());
  CHECK(a.valid.size() == c.valid.size());
  for (size_t i = 0; i < a.valid.size(); ++i) {
    CHECK(grasp_to_json(a.valid[i]) == grasp_to_json(b.valid[i]));
    CHECK(grasp_to_json(a.valid[i]) == grasp_to_json(c.valid[i]));
  }
  for (int i = 0; i < attempts; ++i) {
    CHECK(a.attempts[i].status == b.attempts[i].status);
    CHECK(a.attempts[i].status == c.attempts[i].status);
    CHECK(a.attempts[i].seed == b.attempts[i].seed);
  }

  for (const GraspRecord& g : a.valid) {
    CHECK(g.status == GraspStatus::valid);
    CHECK_NOTHROW(validate_joints(hand, g.j_init));
    CHECK_NOTHROW(validate_joints(hand, g.j_end));
    CHECK(allowed_finger_mask(g.finger_mask));
    CHECK(!g.contacts.empty());
    int touching = 0;
    std::array<bool, 5> seen{};
    for (const ContactInfo& contact : g.contacts)
      if (contact.finger >= 0 && !seen[contact.finger] &&
          g.finger_mask[contact.finger]) {
        seen[contact.finger] = true;
        ++touching;
      }
    CHECK(touching >= 2);
    for (const ContactInfo& contact : g.contacts)
      CHECK(contact.depth <= config.admittance.pen_tol + 1e-12);
    // Proper rotation.
    CHECK(std::abs(g.R.determinant() - 1.0) < 1e-9);
    CHECK((g.R.transpose() * g.R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  }

  CHECK_THROWS_AS(synthesize_object_grasps(ball, bvh, sdf, hand, config, -1, 0, 1),
                  std::invalid_argument);
}
