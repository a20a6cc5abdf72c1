// SPDX-License-Identifier: Apache-2.0
#include "dexforge/grasp_math.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dexforge {

Vec6 rot6d_encode(const Mat3& R) {
  Vec6 v;
  v << R.col(0), R.col(1);
  return v;
}

Mat3 rot6d_decode(const Vec6& v) {
  Vec3 a1 = v.head<3>(), a2 = v.tail<3>();
  double n1 = a1.norm();
  if (n1 <= 1e-9) throw std::invalid_argument("rot6d_decode: first column near zero");
  Vec3 b1 = a1 / n1;
  Vec3 r2 = a2 - b1.dot(a2) * b1;
  double n2 = r2.norm();
  if (n2 <= 1e-9)
    throw std::invalid_argument("rot6d_decode: columns are parallel");
  Vec3 b2 = r2 / n2;
  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b1.cross(b2);
  return R;
}

double loss_gp(const Eigen::MatrixX2d& probs, const std::vector<int>& labels,
               const LossWeights& w, bool* clamped) {
  if ((size_t)probs.rows() != labels.size())
    throw std::invalid_argument("loss_gp: row/label count mismatch");
  if (clamped) *clamped = false;
  const Eigen::Index n = probs.rows();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int label = labels[i];
    if (label < 0 || label > 2) throw std::invalid_argument("loss_gp: label out of range");
    int truth = label >= 1 ? 1 : 0;
    double p = probs(i, truth);
    if (p < 1e-12) {
      p = 1e-12;
      if (clamped) *clamped = true;
    }
    sum += w.class_weights[label] * -std::log(p);
  }
  return sum / (double)n;
}

double loss_rotation(const std::vector<Mat3>& pred, const std::vector<Mat3>& gt,
                     double lambda) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("loss_rotation: batch size mismatch");
  if (pred.empty()) return 0.0;
  double frob = 0.0, geo = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    frob += (pred[i] - gt[i]).squaredNorm();
    double c = 0.5 * ((pred[i].transpose() * gt[i]).trace() - 1.0);
    geo += std::acos(std::clamp(c, -1.0, 1.0));
  }
  double n = (double)pred.size();
  return (1.0 - lambda) * frob / n + lambda * geo / n;
}

double loss_offset(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                   double epsilon, bool norm_ratio) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("loss_offset: batch size mismatch");
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  if (norm_ratio) {
    for (size_t i = 0; i < pred.size(); ++i)
      sum += (pred[i] - gt[i]).norm() / (gt[i].norm() + epsilon);
    return sum / (double)pred.size();
  }
  for (size_t i = 0; i < pred.size(); ++i)
    for (int c = 0; c < 3; ++c)
      sum += std::abs(pred[i][c] - gt[i][c]) / (std::abs(gt[i][c]) + epsilon);
  return sum / (3.0 * (double)pred.size());
}

double loss_joints(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw std::invalid_argument("loss_joints: shape mismatch");
  if (pred.size() == 0) return 0.0;
  return (pred - gt).squaredNorm() / (double)pred.size();
}

LossReport loss_total(const LossParts& parts, const LossWeights& w) {
  LossReport report;
  report.parts = parts;
  report.total = w.lambda_gp * parts.gp + w.lambda_T * parts.T + w.lambda_R * parts.R +
                 w.lambda_j_init * parts.j_init + w.lambda_j_end * parts.j_end;
  return report;
}

LossReport compute_losses(const LossBatch& batch, const LossWeights& w) {
  const size_t n = batch.labels.size();
  std::vector<int> refs;
  for (size_t i = 0; i < n; ++i)
    if (batch.labels[i] == 2) refs.push_back((int)i);

  LossParts parts;
  parts.gp = loss_gp(batch.probs, batch.labels, w);
  if (!refs.empty()) {
    std::vector<Mat3> rp, rg;
    std::vector<Vec3> op, og;
    Eigen::MatrixXd jip((int)refs.size(), batch.j_init_pred.cols());
    Eigen::MatrixXd jig((int)refs.size(), batch.j_init_gt.cols());
    Eigen::MatrixXd jep((int)refs.size(), batch.j_end_pred.cols());
    Eigen::MatrixXd jeg((int)refs.size(), batch.j_end_gt.cols());
    for (size_t k = 0; k < refs.size(); ++k) {
      int i = refs[k];
      rp.push_back(batch.rot_pred[i]);
      rg.push_back(batch.rot_gt[i]);
      op.push_back(batch.off_pred[i]);
      og.push_back(batch.off_gt[i]);
      jip.row((int)k) = batch.j_init_pred.row(i);
      jig.row((int)k) = batch.j_init_gt.row(i);
      jep.row((int)k) = batch.j_end_pred.row(i);
      jeg.row((int)k) = batch.j_end_gt.row(i);
    }
    parts.R = loss_rotation(rp, rg, w.lambda_geo);
    parts.T = loss_offset(op, og, w.epsilon, w.offset_norm_ratio);
    parts.j_init = loss_joints(jip, jig);
    parts.j_end = loss_joints(jep, jeg);
  }
  LossReport report = loss_total(parts, w);
  report.reference_count = (int)refs.size();
  report.missing_reference = refs.empty();
  return report;
}

std::vector<int> select_grasps(const std::vector<Vec3>& points,
                               const std::vector<double>& scores, double threshold,
                               double nms_radius) {
  if (points.size() != scores.size())
    throw std::invalid_argument("select_grasps: size mismatch");
  std::vector<int> order;
  for (size_t i = 0; i < points.size(); ++i)
    if (scores[i] > threshold) order.push_back((int)i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    for (int c = 0; c < 3; ++c)
      if (points[a][c] != points[b][c]) return points[a][c] < points[b][c];
    return a < b;
  });
  std::vector<int> selected;
  const double r_sq = nms_radius * nms_radius;
  for (int candidate : order) {
    bool suppressed = false;
    for (int kept : selected) {
      if ((points[candidate] - points[kept]).squaredNorm() <= r_sq) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) selected.push_back(candidate);
  }
  return selected;
}

double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                         const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                         double step) {
  if (x.size() != grad.size())
    throw std::invalid_argument("finite_diff_check: size mismatch");
  double max_rel = 0.0;
  double scale = std::max(grad.cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    double numeric = (f(xp) - f(xm)) / (2.0 * step);
    if (!std::isfinite(numeric))
      throw std::runtime_error("finite_diff_check: non-finite finite difference");
    double rel = std::abs(numeric - grad[i]) / scale;
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

Eigen::MatrixXd loss_joints_grad(const Eigen::MatrixXd& pred,
                                 const Eigen::MatrixXd& gt) {
  return 2.0 * (pred - gt) / (double)pred.size();
}

std::vector<Vec3> loss_offset_grad(const std::vector<Vec3>& pred,
                                   const std::vector<Vec3>& gt, double epsilon) {
  std::vector<Vec3> grads(pred.size());
  double scale = 3.0 * (double)pred.size();
  for (size_t i = 0; i < pred.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      double d = pred[i][c] - gt[i][c];
      double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      grads[i][c] = sign / ((std::abs(gt[i][c]) + epsilon) * scale);
    }
  return grads;
}

Vec3 loss_rotation_grad_rotvec(const Mat3& pred, const Mat3& gt, double lambda) {
  // so(3) generators.
  Mat3 G[3];
  G[0] << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  G[1] << 0, 0, 1, 0, 0, 0, -1, 0, 0;
  G[2] << 0, -1, 0, 1, 0, 0, 0, 0, 0;
  // R(w) = pred * exp([w]x); dR/dw_i at 0 = pred * G_i.
  Vec3 grad = Vec3::Zero();
  Mat3 diff = pred - gt;
  double c = std::clamp(0.5 * ((pred.transpose() * gt).trace() - 1.0), -1.0, 1.0);
  double dacos = -1.0 / std::sqrt(std::max(1.0 - c * c, 1e-15));
  for (int i = 0; i < 3; ++i) {
    Mat3 dR = pred * G[i];
    double dfrob = 2.0 * (diff.cwiseProduct(dR)).sum();
    double dtrace = (dR.transpose() * gt).trace();
    double dgeo = dacos * 0.5 * dtrace;
    grad[i] = (1.0 - lambda) * dfrob + lambda * dgeo;
  }
  return grad;
}

}  // namespace dexforge
