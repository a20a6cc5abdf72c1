// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>

#include "dexforge/rng.hpp"
#include "dexforge/transform.hpp"
#include "dexforge/trimesh.hpp"

namespace dexforge {

enum class ConstraintKind { circular, rectangular };

// Fingertip constraint: r = circle radius or half rectangle width, h = offset
// from the expected fingertip positions to the fingertip plane (along +z of
// F_tip, i.e. toward the palm).
struct ConstraintSpec {
  ConstraintKind kind = ConstraintKind::circular;
  double r = 0.0;
  double h = 0.0;
  std::array<bool, 5> finger_mask{true, true, true, true, true};
};

// The three allowed participation patterns (thumb always participates).
constexpr std::array<bool, 5> kMaskAllFive{true, true, true, true, true};
constexpr std::array<bool, 5> kMaskThumbIndex{true, true, false, false, false};
constexpr std::array<bool, 5> kMaskThumbIndexMiddle{true, true, true, false, false};

bool allowed_finger_mask(const std::array<bool, 5>& mask);

struct GraspPoseSample {
  Iso3 tcp_pose = Iso3::Identity();
  ConstraintSpec constraint;
  uint64_t seed = 0;
};

struct SamplerConfig {
  double r_min = 0.01, r_max = 0.06;
  double h_min = 0.0, h_max = 0.05;
  double circular_probability = 0.5;  // without a class hint
  double class_hint_bias = 0.9;       // P(favored kind) when a hint applies
  bool two_finger_rectangular_only = true;
};

// Uniform TCP translation in the bbox; orientation = palm facing the bbox
// center (TCP -z toward it) composed with intrinsic x->y->z rotations uniform
// in [-pi, pi]. Throws when any bbox extent is below 1 mm.
Iso3 sample_pose(const Aabb& bbox, Rng& rng);

// Uniform (kind, r, h, pattern) draw; a class hint biases the kind.
ConstraintSpec sample_constraint(Rng& rng, const SamplerConfig& config,
                                 const std::optional<std::string>& class_hint = {});

// Fingertip targets in F_tip. Masked-out fingers still get a point.
std::array<Vec3, 5> circular_targets(const ConstraintSpec& spec,
                                     const std::array<double, 5>& delta);
std::array<Vec3, 5> rectangular_targets(const ConstraintSpec& spec,
                                        const std::array<double, 5>& delta);
std::array<Vec3, 5> constraint_targets(const ConstraintSpec& spec,
                                       const std::array<double, 5>& delta);

}  // namespace dexforge
