// SPDX-License-Identifier: Apache-2.0
#include "dexforge/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dexforge/io.hpp"
#include "dexforge/sdf.hpp"

namespace dexforge {

double penetration_depth_mm(const HandDescription& hand, const Iso3& tcp_pose,
                            const JointVec& q, const SdfGrid& sdf,
                            const Iso3& object_pose) {
  FkResult fk = forward_kinematics(hand, q, hand.base_from_tcp(tcp_pose));
  const Iso3 inv = object_pose.inverse();
  double depth = 0.0;
  for_each_link(hand, fk, [&](int, int, const LinkGeom& link, const Iso3& pose) {
    for (const Vec3& sample : link.contact_samples) {
      double sd = sdf.signed_distance(inv * (pose * sample));
      if (sd < 0.0) depth = std::max(depth, -sd);
    }
  });
  return depth * 1000.0;
}

double penetration_volume_mm3(const HandDescription& hand, const Iso3& tcp_pose,
                              const JointVec& q, const TriMesh& object,
                              const Iso3& object_pose, double cell) {
  FkResult fk = forward_kinematics(hand, q, hand.base_from_tcp(tcp_pose));
  double total = 0.0;
  for_each_link(hand, fk, [&](int, int, const LinkGeom& link, const Iso3& pose) {
    total += voxel_intersection_volume(*link.mesh, pose, object, object_pose, cell);
  });
  return total;
}

Eigen::VectorXd grasp_feature_vector(const GraspRecord& grasp) {
  Eigen::VectorXd v(46);
  v.segment<3>(0) = grasp.T;
  v.segment<3>(3) = axis_angle_canonical(grasp.R);
  v.segment<20>(6) = grasp.j_init;
  v.segment<20>(26) = grasp.j_end;
  return v;
}

double diversity(const std::vector<Eigen::VectorXd>& vectors) {
  if (vectors.size() < 2)
    throw std::invalid_argument("diversity: need at least 2 samples");
  const Eigen::Index dim = vectors[0].size();
  for (const auto& v : vectors)
    if (v.size() != dim) throw std::invalid_argument("diversity: ragged input");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& v : vectors) mean += v;
  mean /= (double)vectors.size();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& v : vectors) {
    Eigen::VectorXd d = v - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= (double)(vectors.size() - 1);
  if (cov.trace() <= 1e-18) throw std::runtime_error("diversity: degenerate (zero covariance)");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const auto& lambda = solver.eigenvalues();
  return 100.0 * lambda(dim - 1) / lambda.sum();
}

double diversity(const std::vector<GraspRecord>& grasps) {
  std::vector<Eigen::VectorXd> vectors;
  vectors.reserve(grasps.size());
  for (const auto& g : grasps) vectors.push_back(grasp_feature_vector(g));
  return diversity(vectors);
}

namespace {

bool hand_collides_instance(const HandDescription& hand, const FkResult& fk,
                            const Bvh& bvh, const Iso3& pose) {
  bool hit = false;
  for_each_link(hand, fk, [&](int, int, const LinkGeom& link, const Iso3& link_pose) {
    if (hit) return;
    if (Bvh::collides(*link.bvh, link_pose, bvh, pose, 0.0)) hit = true;
  });
  return hit;
}

}  // namespace

MetricReport run_clearance_protocol(const SceneSpec& scene, const SceneGeometry& geom,
                                    const GraspSource& source,
                                    const HandDescription& hand,
                                    const ClearanceConfig& config) {
  config.admittance.validate();
  const int n = (int)scene.instances.size();
  MetricReport report;
  report.objects_total = n;

  std::vector<char> present(n, 1);
  std::vector<int> failures(n, 0);
  std::set<std::pair<int, int>> attempted;  // (instance, grasp_index) already tried

  auto remaining_list = [&] {
    std::vector<int> out;
    for (int i = 0; i < n; ++i)
      if (present[i]) out.push_back(i);
    return out;
  };

  double decision_s_total = 0.0;
  while (true) {
    std::vector<int> remaining = remaining_list();
    if (remaining.empty()) break;
    auto t0 = std::chrono::steady_clock::now();

    std::vector<ScoredGrasp> offers = source(remaining);
    const ScoredGrasp* pick = nullptr;
    for (const auto& offer : offers) {
      if (offer.instance < 0 || offer.instance >= n || !present[offer.instance])
        continue;
      if (attempted.count({offer.instance, offer.grasp_index})) continue;
      if (std::abs(offer.grasp.T.x()) > 0.5 * config.workspace_x ||
          std::abs(offer.grasp.T.y()) > 0.5 * config.workspace_y)
        continue;
      if (!pick || offer.score > pick->score ||
          (offer.score == pick->score &&
           std::tie(offer.instance, offer.grasp_index) <
               std::tie(pick->instance, pick->grasp_index)))
        pick = &offer;
    }
    if (!pick) break;

    const int target = pick->instance;
    const GraspRecord& g = pick->grasp;
    Iso3 pose = g.pose();

    AttemptRecord rec;
    rec.attempt = report.attempts;
    rec.instance = target;
    rec.grasp_index = pick->grasp_index;
    rec.score = pick->score;

    ObstacleSet obstacles;
    obstacles.has_plane = true;
    obstacles.plane_z = 0.0;
    std::vector<SdfInstance> sdfs;
    for (int i : remaining) {
      obstacles.meshes.push_back({&geom.bvh(i), scene.instances[i].pose});
      sdfs.push_back({&geom.sdf(i), scene.instances[i].pose, i});
    }

    bool success = false;
    ApproachResult approach = check_approach(hand, pose, g.j_init, obstacles,
                                             config.approach_distance,
                                             config.approach_steps);
    if (!approach.collision_free) {
      rec.outcome = "approach failure";
    } else {
      ClosureResult closure =
          close_fingers(hand, pose, g.j_init, g.j_end, sdfs, config.admittance);
      rec.pd_mm = penetration_depth_mm(hand, pose, closure.j_end, geom.sdf(target),
                                       scene.instances[target].pose);
      rec.pv_mm3 = penetration_volume_mm3(hand, pose, closure.j_end, geom.mesh(target),
                                          scene.instances[target].pose);
      if (closure.diverged) {
        rec.outcome = "closure divergence";
      } else {
        std::vector<ContactInfo> target_contacts;
        for (const auto& c : closure.contacts)
          if (c.object_id == target) target_contacts.push_back(c);
        if (target_contacts.empty()) {
          rec.outcome = "no contact";
        } else {
          StabilityResult stab =
              stability_test(target_contacts, geom.mesh(target), geom.sdf(target),
                             scene.instances[target].pose, config.stability);
          if (!stab.pass) {
            rec.outcome = "unstable";
          } else {
            // Kinematic lift: hand and attached object rise together; any
            // contact with a remaining neighbor aborts the attempt.
            bool blocked = false;
            for (int step = 1; step <= config.lift_steps && !blocked; ++step) {
              double h = config.lift_height * step / config.lift_steps;
              Iso3 lift = translation(0, 0, h);
              FkResult fk = forward_kinematics(
                  hand, closure.j_end, hand.base_from_tcp(lift * pose));
              Iso3 obj_pose = lift * scene.instances[target].pose;
              for (int i : remaining) {
                if (i == target) continue;
                if (Bvh::collides(geom.bvh(target), obj_pose, geom.bvh(i),
                                  scene.instances[i].pose, 0.0) ||
                    hand_collides_instance(hand, fk, geom.bvh(i),
                                           scene.instances[i].pose)) {
                  blocked = true;
                  break;
                }
              }
            }
            if (blocked) {
              rec.outcome = "lift collision";
            } else if (config.lift_height + 1e-12 >= config.success_height) {
              rec.outcome = "success";
              success = true;
            } else {
              rec.outcome = "insufficient lift";
            }
          }
        }
      }
    }

    ++report.attempts;
    attempted.insert({target, pick->grasp_index});
    if (success) {
      ++report.successes;
      ++report.objects_cleared;
      present[target] = 0;
    } else {
      if (++failures[target] >= config.max_failures) present[target] = 0;
    }
    rec.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count();
    decision_s_total += rec.elapsed_s;
    report.attempts_log.push_back(std::move(rec));
  }

  if (report.attempts > 0) {
    report.sr_pct = 100.0 * report.successes / report.attempts;
    report.mean_decision_s = decision_s_total / report.attempts;
    double pd_sum = 0, pv_sum = 0;
    for (const auto& a : report.attempts_log) {
      pd_sum += a.pd_mm;
      pv_sum += a.pv_mm3;
    }
    report.pd_mean_mm = pd_sum / report.attempts;
    report.pv_mean_mm3 = pv_sum / report.attempts;
    double pd_var = 0, pv_var = 0;
    for (const auto& a : report.attempts_log) {
      pd_var += (a.pd_mm - report.pd_mean_mm) * (a.pd_mm - report.pd_mean_mm);
      pv_var += (a.pv_mm3 - report.pv_mean_mm3) * (a.pv_mm3 - report.pv_mean_mm3);
    }
    report.pd_var_mm2 = pd_var / report.attempts;
    report.pv_var_mm6 = pv_var / report.attempts;
  }
  report.cr_pct = n > 0 ? 100.0 * report.objects_cleared / n : 0.0;
  return report;
}

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json j;
  j["attempts"] = report.attempts;
  j["successes"] = report.successes;
  j["objects_total"] = report.objects_total;
  j["objects_cleared"] = report.objects_cleared;
  j["sr_pct"] = std::isnan(report.sr_pct) ? nlohmann::json(nullptr)
                                          : nlohmann::json(report.sr_pct);
  j["cr_pct"] = report.cr_pct;
  j["pd_mean_mm"] = report.pd_mean_mm;
  j["pd_var_mm2"] = report.pd_var_mm2;
  j["pv_mean_mm3"] = report.pv_mean_mm3;
  j["pv_var_mm6"] = report.pv_var_mm6;
  j["diversity_pct"] = std::isnan(report.diversity_pct)
                           ? nlohmann::json(nullptr)
                           : nlohmann::json(report.diversity_pct);
  j["mean_decision_s"] = report.mean_decision_s;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& a : report.attempts_log)
    rows.push_back({{"attempt", a.attempt},
                    {"instance", a.instance},
                    {"grasp_index", a.grasp_index},
                    {"score", a.score},
                    {"outcome", a.outcome},
                    {"pd_mm", a.pd_mm},
                    {"pv_mm3", a.pv_mm3},
                    {"elapsed_s", a.elapsed_s}});
  j["attempts_log"] = rows;
  j["config"] = report.config_echo;
  return j;
}

std::string report_table(const MetricReport& report) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "metric          value\n";
  out << "PD (mm)         " << report.pd_mean_mm << " +/- " << report.pd_var_mm2
      << "\n";
  out << "PV (mm^3)       " << report.pv_mean_mm3 << " +/- " << report.pv_var_mm6
      << "\n";
  out << "D (%)           ";
  if (std::isnan(report.diversity_pct)) out << "-";
  else out << report.diversity_pct;
  out << "\n";
  out << "SR (%)          ";
  if (std::isnan(report.sr_pct)) out << "-";
  else out << report.sr_pct;
  out << "\n";
  out << "CR (%)          " << report.cr_pct << "\n";
  out << "TC (s)          " << report.mean_decision_s << "\n";
  out << "attempts        " << report.attempts << "\n";
  out << "objects cleared " << report.objects_cleared << "/" << report.objects_total
      << "\n";
  return out.str();
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "attempt,instance,grasp_index,score,outcome,pd_mm,pv_mm3,elapsed_s\n";
  for (const auto& a : report.attempts_log)
    out << a.attempt << "," << a.instance << "," << a.grasp_index << "," << a.score
        << "," << a.outcome << "," << a.pd_mm << "," << a.pv_mm3 << ","
        << a.elapsed_s << "\n";
  write_text_file(path.string(), out.str());
}

}  // namespace dexforge
