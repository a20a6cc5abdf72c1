// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <vector>

#include "dexforge/transform.hpp"

namespace dexforge {

using Vec6 = Eigen::Matrix<double, 6, 1>;

// 6D rotation representation: concatenated first two columns of R.
Vec6 rot6d_encode(const Mat3& R);
// Gram-Schmidt decode; always returns a proper rotation. Throws when a1 is
// near zero or a2 is parallel to a1.
Mat3 rot6d_decode(const Vec6& v);

struct LossWeights {
  double lambda_gp = 1.0;
  double lambda_T = 1.0;
  double lambda_R = 1.0;
  double lambda_j_init = 1.0;
  double lambda_j_end = 1.0;
  double lambda_geo = 0.5;                     // rotation-loss mix
  std::array<double, 3> class_weights{0.1, 1.0, 2.0};  // labels 0/1/2
  double epsilon = 1e-6;                       // relative-L1 guard
  bool offset_norm_ratio = false;              // L2-ratio variant of the offset loss
};

// Weighted binary cross-entropy over graspability. `probs` rows are
// (not-graspable, graspable) and must sum to 1; the true binary class is
// label >= 1, weighted by the semantic class weight. Probabilities are
// clamped at 1e-12; `clamped` reports when that happened.
double loss_gp(const Eigen::MatrixX2d& probs, const std::vector<int>& labels,
               const LossWeights& w, bool* clamped = nullptr);

// (1-lambda)*mean ||R_hat - R||_F^2 + lambda*mean geodesic angle.
double loss_rotation(const std::vector<Mat3>& pred, const std::vector<Mat3>& gt,
                     double lambda);

// Relative L1, componentwise by default; L2-norm ratio when norm_ratio.
double loss_offset(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                   double epsilon, bool norm_ratio = false);

// Plain MSE over all entries; rows are batch samples.
double loss_joints(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt);

struct LossParts {
  double gp = 0.0;
  double T = 0.0;
  double R = 0.0;
  double j_init = 0.0;
  double j_end = 0.0;
};

struct LossReport {
  LossParts parts;
  double total = 0.0;
  int reference_count = 0;
  bool missing_reference = false;
};

// Weighted sum of precomputed parts.
LossReport loss_total(const LossParts& parts, const LossWeights& w);

// Full batch for the end-to-end loss: classification over every point,
// regression only over label-2 (reference) rows.
struct LossBatch {
  Eigen::MatrixX2d probs;
  std::vector<int> labels;
  std::vector<Mat3> rot_pred, rot_gt;
  std::vector<Vec3> off_pred, off_gt;
  Eigen::MatrixXd j_init_pred, j_init_gt;
  Eigen::MatrixXd j_end_pred, j_end_gt;
};

// Applies the reference-point mask, evaluates every term, and combines them.
LossReport compute_losses(const LossBatch& batch, const LossWeights& w);

// Greedy score-threshold + spatial NMS. Returns indices in descending score
// order; ties resolve by lexicographic position then lower index, so the
// selected points do not depend on input order.
std::vector<int> select_grasps(const std::vector<Vec3>& points,
                               const std::vector<double>& scores,
                               double threshold = 0.7, double nms_radius = 0.02);

inline Vec3 compose_tcp(const Vec3& reference, const Vec3& sigma) {
  return reference + sigma;
}

// Central-difference comparison against an analytic gradient; returns the
// max relative error over coordinates. Throws on non-finite values.
double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                         const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                         double step = 1e-5);

// Analytic gradients used by the self-test suite.
Eigen::MatrixXd loss_joints_grad(const Eigen::MatrixXd& pred,
                                 const Eigen::MatrixXd& gt);
std::vector<Vec3> loss_offset_grad(const std::vector<Vec3>& pred,
                                   const std::vector<Vec3>& gt, double epsilon);
// d loss_rotation / d w for the right-trivialized perturbation
// R_hat <- R_hat * exp([w]x) at w = 0, for a single pair (batch mean of one).
Vec3 loss_rotation_grad_rotvec(const Mat3& pred, const Mat3& gt, double lambda);

}  // namespace dexforge
