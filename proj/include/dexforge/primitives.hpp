// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dexforge/trimesh.hpp"

namespace dexforge {

// All primitives are watertight, centered on the origin unless noted.
TriMesh make_box(double sx, double sy, double sz);
TriMesh make_icosphere(double radius, int subdivisions = 3);
TriMesh make_cylinder(double radius, double height, int segments = 48);
// A long thin cylinder along z.
TriMesh make_stick(double radius, double length, int segments = 24);
// A hollow hemispherical shell, opening up (+z); watertight.
TriMesh make_bowl(double outer_radius, double thickness, int segments = 32, int rings = 8);

}  // namespace dexforge
