// SPDX-License-Identifier: Apache-2.0
//
// Numeric reference of the training objective: closed-form values, naive-sum
// oracles, gradient checks, and the 6D rotation codec.

#include <doctest.h>

#include <numbers>

#include "dexforge/grasp_math.hpp"
#include "dexforge/pipeline.hpp"
#include "dexforge/rng.hpp"

using namespace dexforge;

namespace {

Mat3 random_rotation(Rng& rng) {
  Vec3 axis(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  if (axis.norm() < 1e-9) axis = Vec3::UnitX();
  return Eigen::AngleAxisd(rng.uniform(-std::numbers::pi, std::numbers::pi),
                           axis.normalized())
      .toRotationMatrix();
}

}  // namespace

TEST_CASE("rot6d codec: exact cases and random round trips") {
  Vec6 id = rot6d_encode(Mat3::Identity());
  CHECK(id(0) == 1.0);
  CHECK(id(1) == 0.0);
  CHECK(id(2) == 0.0);
  CHECK(id(3) == 0.0);
  CHECK(id(4) == 1.0);
  CHECK(id(5) == 0.0);
  CHECK((rot6d_decode(id) - Mat3::Identity()).norm() == 0.0);

  Mat3 rz90 = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
  Vec6 enc = rot6d_encode(rz90);
  CHECK(enc(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(enc(1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(enc(3) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(enc(4) == doctest::Approx(0.0).epsilon(1e-15));

  Rng rng(9001);
  double worst = 0.0, worst_ortho = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Mat3 r = random_rotation(rng);
    Mat3 back = rot6d_decode(rot6d_encode(r));
    worst = std::max(worst, (back - r).norm());
    worst_ortho = std::max(
        worst_ortho, (back.transpose() * back - Mat3::Identity()).norm());
    CHECK(back.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(worst < 1e-12);
  CHECK(worst_ortho < 1e-12);
}

TEST_CASE("rot6d decode rejects degenerate input") {
  Vec6 zero = Vec6::Zero();
  CHECK_THROWS(rot6d_decode(zero));
  Vec6 parallel;
  parallel << 1, 0, 0, 2, 0, 0;
  CHECK_THROWS(rot6d_decode(parallel));
}

TEST_CASE("classification loss: closed forms and naive oracle") {
  LossWeights w;

  Eigen::MatrixX2d perfect(3, 2);
  perfect << 1, 0, 0, 1, 0, 1;
  CHECK(loss_gp(perfect, {0, 1, 2}, w) == 0.0);

  Eigen::MatrixX2d half(1, 2);
  half << 0.5, 0.5;
  CHECK(loss_gp(half, {2}, w) ==
        doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-12));

  // naive weighted-sum oracle on a random batch
  Rng rng(31);
  int n = 64;
  Eigen::MatrixX2d probs(n, 2);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    double p = rng.uniform(0.05, 0.95);
    probs(i, 0) = 1 - p;
    probs(i, 1) = p;
    labels[i] = (int)rng.uniform_index(3);
  }
  double expect = 0.0;
  for (int i = 0; i < n; ++i) {
    double p_true = labels[i] >= 1 ? probs(i, 1) : probs(i, 0);
    expect += -w.class_weights[labels[i]] * std::log(p_true);
  }
  expect /= n;
  CHECK(loss_gp(probs, labels, w) == doctest::Approx(expect).epsilon(1e-12));

  // zero probability is clamped and flagged
  Eigen::MatrixX2d zero(1, 2);
  zero << 1, 0;
  bool clamped = false;
  double v = loss_gp(zero, {2}, w, &clamped);
  CHECK(clamped);
  CHECK(v > 20.0);  // -w2 * log(1e-12)
}

TEST_CASE("rotation loss: closed forms, symmetry, oracle") {
  std::vector<Mat3> id{Mat3::Identity()};
  CHECK(loss_rotation(id, id, 0.5) == 0.0);

  const double angle = 0.7;
  std::vector<Mat3> pred{
      Eigen::AngleAxisd(angle, Vec3(1, 2, 3).normalized()).toRotationMatrix()};
  CHECK(loss_rotation(pred, id, 1.0) == doctest::Approx(angle).epsilon(1e-12));

  std::vector<Mat3> rz180{
      Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitZ()).toRotationMatrix()};
  CHECK(loss_rotation(rz180, id, 0.0) == doctest::Approx(8.0).epsilon(1e-12));

  Rng rng(32);
  std::vector<Mat3> a, b;
  for (int i = 0; i < 16; ++i) {
    a.push_back(random_rotation(rng));
    b.push_back(random_rotation(rng));
  }
  for (double lam : {0.0, 0.3, 1.0})
    CHECK(loss_rotation(a, b, lam) == doctest::Approx(loss_rotation(b, a, lam))
                                          .epsilon(1e-12));

  // naive oracle at lambda = 0.4
  double lam = 0.4, frob = 0, geo = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    frob += (a[i] - b[i]).squaredNorm();
    double c = std::clamp(((a[i].transpose() * b[i]).trace() - 1.0) / 2.0, -1.0, 1.0);
    geo += std::acos(c);
  }
  frob /= a.size();
  geo /= a.size();
  CHECK(loss_rotation(a, b, lam) ==
        doctest::Approx((1 - lam) * frob + lam * geo).epsilon(1e-12));
}

TEST_CASE("offset loss: closed form, variants, oracle") {
  std::vector<Vec3> same{Vec3(0.1, -0.2, 0.3)};
  CHECK(loss_offset(same, same, 1e-6) == 0.0);

  std::vector<Vec3> pred{Vec3(1.1, 0.9, 1.0)}, gt{Vec3(1.0, 1.0, 1.0)};
  CHECK(loss_offset(pred, gt, 1e-12) == doctest::Approx(0.2 / 3.0).epsilon(1e-9));

  // norm-ratio variant: |pred - gt| / (|gt| + eps)
  double expect_ratio = (pred[0] - gt[0]).norm() / (gt[0].norm() + 1e-12);
  CHECK(loss_offset(pred, gt, 1e-12, true) ==
        doctest::Approx(expect_ratio).epsilon(1e-12));

  Rng rng(33);
  std::vector<Vec3> p2, g2;
  for (int i = 0; i < 24; ++i) {
    p2.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
    g2.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
  }
  double eps = 1e-6, expect = 0;
  for (size_t i = 0; i < p2.size(); ++i)
    for (int c = 0; c < 3; ++c)
      expect += std::abs(p2[i](c) - g2[i](c)) / (std::abs(g2[i](c)) + eps);
  expect /= 3.0 * p2.size();
  CHECK(loss_offset(p2, g2, eps) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("joint loss is plain MSE") {
  Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(4, 20);
  CHECK(loss_joints(gt, gt) == 0.0);
  CHECK(loss_joints(Eigen::MatrixXd::Ones(4, 20), gt) == doctest::Approx(1.0));

  Rng rng(34);
  Eigen::MatrixXd p(3, 20), g(3, 20);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 20; ++c) {
      p(r, c) = rng.uniform(-2, 2);
      g(r, c) = rng.uniform(-2, 2);
    }
  CHECK(loss_joints(p, g) ==
        doctest::Approx((p - g).squaredNorm() / (3 * 20)).epsilon(1e-12));
}

TEST_CASE("total loss is the weighted sum of parts") {
  LossWeights w;
  w.lambda_gp = 2.0;
  w.lambda_T = 0.5;
  w.lambda_R = 3.0;
  w.lambda_j_init = 0.25;
  w.lambda_j_end = 4.0;
  LossParts parts{1.0, 2.0, 3.0, 4.0, 5.0};
  LossReport r = loss_total(parts, w);
  CHECK(r.total ==
        doctest::Approx(2.0 * 1 + 0.5 * 2 + 3.0 * 3 + 0.25 * 4 + 4.0 * 5)
            .epsilon(1e-15));
}

TEST_CASE("batch loss masks regression to reference rows") {
  LossWeights w;
  LossBatch batch;
  batch.probs.resize(3, 2);
  batch.probs << 1, 0, 0, 1, 0, 1;
  batch.labels = {0, 1, 2};
  // regression rows are per reference point (label 2): exactly one here
  batch.rot_pred = {Mat3::Identity()};
  batch.rot_gt = {Mat3::Identity()};
  batch.off_pred = {Vec3::Zero()};
  batch.off_gt = {Vec3::Zero()};
  batch.j_init_pred = Eigen::MatrixXd::Zero(1, 20);
  batch.j_init_gt = Eigen::MatrixXd::Zero(1, 20);
  batch.j_end_pred = Eigen::MatrixXd::Zero(1, 20);
  batch.j_end_gt = Eigen::MatrixXd::Zero(1, 20);
  LossReport r = compute_losses(batch, w);
  CHECK(r.total == 0.0);
  CHECK(r.reference_count == 1);
  CHECK(!r.missing_reference);

  batch.labels = {0, 1, 1};  // no reference at all
  batch.rot_pred.clear();
  batch.rot_gt.clear();
  batch.off_pred.clear();
  batch.off_gt.clear();
  batch.j_init_pred.resize(0, 20);
  batch.j_init_gt.resize(0, 20);
  batch.j_end_pred.resize(0, 20);
  batch.j_end_gt.resize(0, 20);
  LossReport r2 = compute_losses(batch, w);
  CHECK(r2.missing_reference);
  CHECK(r2.reference_count == 0);
}

TEST_CASE("grasp selection: threshold, NMS, permutation invariance") {
  std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(0.005, 0, 0), Vec3(0.1, 0, 0),
                        Vec3(0.2, 0, 0)};
  std::vector<double> scores{0.95, 0.9, 0.8, 0.5};
  auto sel = select_grasps(pts, scores, 0.7, 0.02);
  // 0 suppresses 1 (within 2 cm); 3 is under threshold
  CHECK(sel == std::vector<int>{0, 2});

  // permuting the input returns the same physical picks
  std::vector<Vec3> pts2{pts[2], pts[0], pts[3], pts[1]};
  std::vector<double> scores2{scores[2], scores[0], scores[3], scores[1]};
  auto sel2 = select_grasps(pts2, scores2, 0.7, 0.02);
  REQUIRE(sel2.size() == sel.size());
  for (size_t i = 0; i < sel.size(); ++i)
    CHECK((pts2[sel2[i]] - pts[sel[i]]).norm() == 0.0);

  // exact ties resolve by position, not input order
  std::vector<Vec3> tie_pts{Vec3(1, 0, 0), Vec3(0, 1, 0)};
  std::vector<double> tie_scores{0.9, 0.9};
  auto t1 = select_grasps(tie_pts, tie_scores, 0.5, 0.01);
  std::vector<Vec3> tie_rev{tie_pts[1], tie_pts[0]};
  std::vector<double> tie_rev_scores{0.9, 0.9};
  auto t2 = select_grasps(tie_rev, tie_rev_scores, 0.5, 0.01);
  REQUIRE(t1.size() == 2);
  REQUIRE(t2.size() == 2);
  CHECK((tie_pts[t1[0]] - tie_rev[t2[0]]).norm() == 0.0);
}

TEST_CASE("analytic gradients pass central-difference checks") {
  Rng rng(35);

  {  // joints
    Eigen::MatrixXd p(4, 20), g(4, 20);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 20; ++c) {
        p(r, c) = rng.uniform(-1, 1);
        g(r, c) = rng.uniform(-1, 1);
      }
    Eigen::MatrixXd grad = loss_joints_grad(p, g);
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
    Eigen::VectorXd gv = Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size());
    auto f = [&](const Eigen::VectorXd& v) {
      return loss_joints(Eigen::Map<const Eigen::MatrixXd>(v.data(), 4, 20), g);
    };
    CHECK(finite_diff_check(f, x, gv) < 1e-6);
  }

  {  // offset, away from zero denominators
    std::vector<Vec3> p, g;
    for (int i = 0; i < 6; ++i) {
      p.push_back(Vec3(rng.uniform(0.5, 1.5), rng.uniform(0.5, 1.5),
                       rng.uniform(0.5, 1.5)));
      g.push_back(Vec3(rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2),
                       rng.uniform(0.8, 1.2)));
    }
    auto grads = loss_offset_grad(p, g, 1e-6);
    Eigen::VectorXd x(18), gv(18);
    for (int i = 0; i < 6; ++i) {
      x.segment<3>(3 * i) = p[i];
      gv.segment<3>(3 * i) = grads[i];
    }
    auto f = [&](const Eigen::VectorXd& v) {
      std::vector<Vec3> q(6);
      for (int i = 0; i < 6; ++i) q[i] = v.segment<3>(3 * i);
      return loss_offset(q, g, 1e-6);
    };
    CHECK(finite_diff_check(f, x, gv) < 1e-6);
  }

  {  // geodesic rotation at 90 degrees (away from the arccos endpoints)
    Mat3 gt = random_rotation(rng);
    Mat3 pred = gt * Eigen::AngleAxisd(std::numbers::pi / 2,
                                       Vec3(1, 1, 0).normalized())
                         .toRotationMatrix();
    Vec3 grad = loss_rotation_grad_rotvec(pred, gt, 1.0);
    auto f = [&](const Eigen::VectorXd& v) {
      Vec3 w(v);
      Mat3 delta = w.norm() < 1e-300
                       ? Mat3::Identity()
                       : Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
      return loss_rotation({pred * delta}, {gt}, 1.0);
    };
    CHECK(finite_diff_check(f, Eigen::VectorXd::Zero(3), Eigen::VectorXd(grad)) <
          1e-4);
  }
}

TEST_CASE("compose_tcp reconstructs the TCP from reference + offset") {
  Vec3 ref(0.1, 0.2, 0.3), sigma(0.01, -0.02, 0.005);
  CHECK((compose_tcp(ref, sigma) - (ref + sigma)).norm() == 0.0);
}

TEST_CASE("loss self-test harness passes end to end") {
  LossSelfTest t = run_losses_selftest();
  for (const auto& row : t.rows) {
    INFO(row.name, " value=", row.value, " expected=", row.expected);
    CHECK(row.pass);
  }
  CHECK(t.pass);
  CHECK(selftest_table(t).find("ALL CHECKS PASSED") != std::string::npos);
}
