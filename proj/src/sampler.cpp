// SPDX-License-Identifier: Apache-2.0
#include "dexforge/sampler.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dexforge {

bool allowed_finger_mask(const std::array<bool, 5>& mask) {
  return mask == kMaskAllFive || mask == kMaskThumbIndex ||
         mask == kMaskThumbIndexMiddle;
}

Iso3 sample_pose(const Aabb& bbox, Rng& rng) {
  Vec3 ext = bbox.extents();
  if (!bbox.valid() || ext.minCoeff() < 1e-3)
    throw std::invalid_argument("sample_pose: bbox extent below 1 mm");
  Vec3 t(rng.uniform(bbox.lo.x(), bbox.hi.x()), rng.uniform(bbox.lo.y(), bbox.hi.y()),
         rng.uniform(bbox.lo.z(), bbox.hi.z()));
  // Palm faces the bbox center: TCP -z toward it.
  Vec3 to_center = bbox.center() - t;
  Vec3 facing = to_center.norm() > 1e-9 ? to_center.normalized() : Vec3(0, 0, -1);
  Mat3 base = rotation_between(Vec3(0, 0, -1), facing);
  const double pi = std::numbers::pi;
  double ax = rng.uniform(-pi, pi);
  double ay = rng.uniform(-pi, pi);
  double az = rng.uniform(-pi, pi);
  Mat3 R = base * rot_x(ax) * rot_y(ay) * rot_z(az);
  return make_pose(t, R);
}

namespace {

bool curved_class(const std::string& hint) {
  return hint == "Sphere" || hint == "Cylinder" || hint == "Bowl";
}

bool planar_class(const std::string& hint) {
  return hint == "Box" || hint == "Stick" || hint == "Plate";
}

}  // namespace

ConstraintSpec sample_constraint(Rng& rng, const SamplerConfig& config,
                                 const std::optional<std::string>& class_hint) {
  if (!(config.r_min <= config.r_max) || config.r_min < 0 ||
      !(config.h_min <= config.h_max))
    throw std::invalid_argument("sample_constraint: invalid (r, h) ranges");
  double p_circular = config.circular_probability;
  if (class_hint) {
    if (curved_class(*class_hint)) p_circular = config.class_hint_bias;
    else if (planar_class(*class_hint)) p_circular = 1.0 - config.class_hint_bias;
  }
  ConstraintSpec spec;
  spec.kind = rng.bernoulli(p_circular) ? ConstraintKind::circular
                                        : ConstraintKind::rectangular;
  spec.r = rng.uniform(config.r_min, config.r_max);
  spec.h = rng.uniform(config.h_min, config.h_max);
  const bool allow_two =
      spec.kind == ConstraintKind::rectangular || !config.two_finger_rectangular_only;
  const std::array<bool, 5> patterns[3] = {kMaskAllFive, kMaskThumbIndexMiddle,
                                           kMaskThumbIndex};
  spec.finger_mask = patterns[rng.uniform_index(allow_two ? 3 : 2)];
  return spec;
}

std::array<Vec3, 5> circular_targets(const ConstraintSpec& spec,
                                     const std::array<double, 5>& delta) {
  const double deg = std::numbers::pi / 180.0;
  std::array<Vec3, 5> out;
  for (int i = 0; i < 5; ++i) {
    double theta = i == 0 ? 15.0 * deg : (120.0 + (i - 1) / 4.0 * 120.0) * deg;
    out[i] = Vec3(spec.r * std::cos(theta), spec.r * std::sin(theta),
                  spec.h + delta[i]);
  }
  return out;
}

std::array<Vec3, 5> rectangular_targets(const ConstraintSpec& spec,
                                        const std::array<double, 5>& delta) {
  std::array<Vec3, 5> out;
  out[0] = Vec3(0.8 * spec.r, 0.005, spec.h + delta[0]);
  for (int i = 1; i < 5; ++i)
    out[i] = Vec3(-spec.r, 0.025 * (i - 2.5), spec.h + delta[i]);
  return out;
}

std::array<Vec3, 5> constraint_targets(const ConstraintSpec& spec,
                                       const std::array<double, 5>& delta) {
  return spec.kind == ConstraintKind::circular ? circular_targets(spec, delta)
                                               : rectangular_targets(spec, delta);
}

}  // namespace dexforge
