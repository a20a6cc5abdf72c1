// SPDX-License-Identifier: Apache-2.0
#include "dexforge/labels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "dexforge/grasp_math.hpp"
#include "dexforge/io.hpp"
#include "dexforge/kdtree.hpp"
#include "dexforge/rng.hpp"

namespace dexforge {

bool GraspTableRow::operator==(const GraspTableRow& o) const {
  return ref_index == o.ref_index && sigma == o.sigma && rot6d == o.rot6d &&
         j_init == o.j_init && j_end == o.j_end && finger_mask == o.finger_mask &&
         instance == o.instance && grasp_index == o.grasp_index;
}

bool LabeledCloudSample::operator==(const LabeledCloudSample& o) const {
  return points == o.points && labels == o.labels && instance_ids == o.instance_ids &&
         offsets == o.offsets && table == o.table && occlusion == o.occlusion &&
         out_of_frustum == o.out_of_frustum && requested_points == o.requested_points &&
         camera.fx == o.camera.fx && camera.fy == o.camera.fy &&
         camera.cx == o.camera.cx && camera.cy == o.camera.cy &&
         camera.width == o.camera.width && camera.height == o.camera.height &&
         camera.viewpoint_index == o.camera.viewpoint_index &&
         camera.camera_from_world.matrix() == o.camera.camera_from_world.matrix();
}

std::vector<int> downsample_cloud(const std::vector<Vec3>& points, int n,
                                  uint64_t seed) {
  if (points.empty()) throw std::invalid_argument("downsample_cloud: empty cloud");
  if (n < 1) throw std::invalid_argument("downsample_cloud: n must be >= 1");
  const int total = (int)points.size();
  if (total <= n) {
    std::vector<int> all(total);
    for (int i = 0; i < total; ++i) all[i] = i;
    return all;
  }

  Aabb box;
  for (const auto& p : points) box.expand(p);
  Vec3 ext = box.extents().cwiseMax(1e-9);
  double voxel = std::max(std::cbrt(ext.x() * ext.y() * ext.z() / n), 1e-6);

  // Bucket by voxel, ordered by integer cell key for determinism.
  std::map<std::array<int64_t, 3>, std::vector<int>> cells;
  for (int i = 0; i < total; ++i) {
    Vec3 q = (points[i] - box.lo) / voxel;
    cells[{(int64_t)std::floor(q.x()), (int64_t)std::floor(q.y()),
           (int64_t)std::floor(q.z())}]
        .push_back(i);
  }

  Rng rng(seed);
  std::vector<std::vector<int>> shuffled;
  shuffled.reserve(cells.size());
  for (auto& [key, members] : cells) {
    for (size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[rng.uniform_index(i)]);
    shuffled.push_back(std::move(members));
  }

  // Round-robin across voxels; the final partial round is subsampled at
  // random so no voxel-order bias sneaks in.
  std::vector<int> out;
  out.reserve(n);
  for (size_t round = 0; (int)out.size() < n; ++round) {
    std::vector<int> layer;
    for (const auto& cell : shuffled)
      if (round < cell.size()) layer.push_back(cell[round]);
    if (layer.empty()) break;
    int remaining = n - (int)out.size();
    if ((int)layer.size() <= remaining) {
      out.insert(out.end(), layer.begin(), layer.end());
    } else {
      for (int k = 0; k < remaining; ++k) {
        size_t pick = k + rng.uniform_index(layer.size() - k);
        std::swap(layer[k], layer[pick]);
        out.push_back(layer[k]);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void assign_labels(LabeledCloudSample& sample, const SceneSpec& scene,
                   const CameraModel& cam, const LabelParams& params,
                   std::vector<DropRecord>* dropped) {
  if (params.k_candidates < 0 || params.sigma_max <= 0)
    throw std::invalid_argument("assign_labels: invalid parameters");
  const size_t n = sample.points.size();
  if (sample.instance_ids.size() != n)
    throw std::invalid_argument("assign_labels: points/instance_ids size mismatch");
  sample.labels.assign(n, kLabelNonGraspable);
  sample.offsets.assign(n, Eigen::Vector3f::Zero());
  sample.table.clear();
  if (n == 0 || scene.grasps.empty()) return;

  std::vector<Vec3> pts(n);
  for (size_t i = 0; i < n; ++i) pts[i] = sample.points[i].cast<double>();
  KdTree tree(pts);
  const Iso3& E = cam.camera_from_world;

  // Pass 1: reference points (take precedence over candidate labels).
  for (size_t inst = 0; inst < scene.grasps.size(); ++inst) {
    for (size_t gi = 0; gi < scene.grasps[inst].size(); ++gi) {
      const GraspRecord& g = scene.grasps[inst][gi];
      Vec3 tcp_cam = E * g.T;
      Neighbor ref = tree.nearest(tcp_cam);
      Vec3 sigma = tcp_cam - pts[ref.index];
      if (sigma.norm() > params.sigma_max) {
        if (dropped) dropped->push_back({(int)inst, (int)gi, "offset too large"});
        continue;
      }
      if (sample.instance_ids[ref.index] != (int32_t)inst) {
        if (dropped)
          dropped->push_back({(int)inst, (int)gi, "reference on different instance"});
        continue;
      }
      GraspTableRow row;
      row.ref_index = ref.index;
      row.sigma = sigma;
      row.rot6d = rot6d_encode(E.linear() * g.R);
      row.j_init = g.j_init;
      row.j_end = g.j_end;
      row.finger_mask = g.finger_mask;
      row.instance = (int32_t)inst;
      row.grasp_index = (int32_t)gi;
      if (sample.labels[ref.index] != kLabelReference)
        sample.offsets[ref.index] = sigma.cast<float>();
      sample.labels[ref.index] = kLabelReference;
      sample.table.push_back(std::move(row));
    }
  }

  // Pass 2: candidate neighborhoods around each distinct reference point.
  std::vector<int> refs;
  for (const auto& row : sample.table) refs.push_back(row.ref_index);
  std::sort(refs.begin(), refs.end());
  refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
  for (int ref : refs) {
    auto neighbors = tree.knn(pts[ref], params.k_candidates + 1);
    int marked = 0;
    for (const Neighbor& nb : neighbors) {
      if (nb.index == ref) continue;
      if (marked == params.k_candidates) break;
      ++marked;
      if (sample.labels[nb.index] == kLabelNonGraspable)
        sample.labels[nb.index] = kLabelCandidate;
    }
  }
}

LabeledCloudSample make_sample(const RenderedView& view, const CameraModel& cam,
                               const SceneSpec& scene, int n_points, uint64_t seed,
                               const LabelParams& params,
                               std::vector<DropRecord>* dropped) {
  LabeledCloudSample sample;
  sample.camera = cam;
  sample.requested_points = n_points;
  if (!view.points.empty()) {
    std::vector<int> idx = downsample_cloud(view.points, n_points, seed);
    sample.points.reserve(idx.size());
    sample.instance_ids.reserve(idx.size());
    for (int i : idx) {
      sample.points.push_back(view.points[i].cast<float>());
      sample.instance_ids.push_back(view.point_ids[i]);
    }
  }
  assign_labels(sample, scene, cam, params, dropped);
  return sample;
}

namespace {

constexpr int kSampleSchema = 1;
constexpr double kDepthUnit = 1e-4;  // 16-bit depth PNG quantization (0.1 mm)

nlohmann::json row_to_json(const GraspTableRow& r) {
  nlohmann::json j;
  j["ref_index"] = r.ref_index;
  j["sigma"] = {r.sigma.x(), r.sigma.y(), r.sigma.z()};
  j["rot6d"] = std::vector<double>(r.rot6d.data(), r.rot6d.data() + 6);
  j["j_init"] = std::vector<double>(r.j_init.data(), r.j_init.data() + 20);
  j["j_end"] = std::vector<double>(r.j_end.data(), r.j_end.data() + 20);
  j["finger_mask"] = r.finger_mask;
  j["instance"] = r.instance;
  j["grasp_index"] = r.grasp_index;
  return j;
}

GraspTableRow row_from_json(const nlohmann::json& j) {
  GraspTableRow r;
  r.ref_index = j.at("ref_index").get<int32_t>();
  for (int k = 0; k < 3; ++k) r.sigma[k] = j.at("sigma").at(k).get<double>();
  for (int k = 0; k < 6; ++k) r.rot6d[k] = j.at("rot6d").at(k).get<double>();
  for (int k = 0; k < 20; ++k) {
    r.j_init[k] = j.at("j_init").at(k).get<double>();
    r.j_end[k] = j.at("j_end").at(k).get<double>();
  }
  for (int k = 0; k < 5; ++k) r.finger_mask[k] = j.at("finger_mask").at(k).get<bool>();
  r.instance = j.at("instance").get<int32_t>();
  r.grasp_index = j.at("grasp_index").get<int32_t>();
  return r;
}

}  // namespace

void write_sample(const LabeledCloudSample& sample, const std::filesystem::path& dir,
                  const RenderedView* view) {
  std::filesystem::create_directories(dir);

  PointCloud cloud;
  cloud.points = sample.points;
  cloud.labels = sample.labels;
  cloud.object_ids = sample.instance_ids;
  cloud.offsets = sample.offsets;
  write_ply((dir / "cloud.ply").string(), cloud);

  nlohmann::json j;
  j["schema_version"] = kSampleSchema;
  j["requested_points"] = sample.requested_points;
  j["occlusion"] = sample.occlusion;
  j["out_of_frustum"] = sample.out_of_frustum;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : sample.table) rows.push_back(row_to_json(r));
  j["grasps"] = rows;
  save_json((dir / "grasps.json").string(), j);

  save_camera(sample.camera, dir / "camera.txt");

  if (view) {
    std::vector<uint16_t> depth16(view->depth.size());
    for (size_t i = 0; i < view->depth.size(); ++i)
      depth16[i] = (uint16_t)std::min(65535.0, std::round(view->depth[i] / kDepthUnit));
    write_png16((dir / "depth16.png").string(), view->width, view->height, depth16);
    write_float_image((dir / "depth.f32").string(), view->width, view->height,
                      view->depth);
    std::vector<uint8_t> mask(view->ids.size());
    for (size_t i = 0; i < view->ids.size(); ++i) {
      int32_t id = view->ids[i];
      if (id == kIdBackground) mask[i] = kMaskBackground;
      else if (id == kIdPlane) mask[i] = kMaskPlane;
      else if (id >= 0 && id < 254) mask[i] = (uint8_t)id;
      else throw std::runtime_error("write_sample: instance id exceeds mask range");
    }
    write_png8((dir / "ids.png").string(), view->width, view->height, mask);
  }
}

LabeledCloudSample read_sample(const std::filesystem::path& dir) {
  LabeledCloudSample sample;
  PointCloud cloud = read_ply((dir / "cloud.ply").string());
  sample.points = std::move(cloud.points);
  sample.labels = std::move(cloud.labels);
  sample.instance_ids = std::move(cloud.object_ids);
  sample.offsets = std::move(cloud.offsets);

  nlohmann::json j = load_json((dir / "grasps.json").string());
  int version = j.at("schema_version").get<int>();
  if (version != kSampleSchema)
    throw std::runtime_error("read_sample: schema version mismatch (file " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kSampleSchema) + ")");
  sample.requested_points = j.at("requested_points").get<int>();
  sample.occlusion = j.at("occlusion").get<std::vector<double>>();
  sample.out_of_frustum = j.at("out_of_frustum").get<std::vector<uint8_t>>();
  for (const auto& jr : j.at("grasps")) sample.table.push_back(row_from_json(jr));

  sample.camera = load_camera(dir / "camera.txt");
  return sample;
}

}  // namespace dexforge
