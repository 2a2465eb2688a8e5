// Virtual viewpoints at a map anchor and per-viewpoint rendering.
#pragma once

#include "xpr/core.hpp"
#include "xpr/projection.hpp"

namespace xpr {

struct ViewpointSet {
  Pose anchor;
  std::vector<Pose> poses;
  double yaw_step = 0.0;  // radians
};

/// N_V poses sharing the anchor translation, yawed by k * 2pi / N_V about world z.
ViewpointSet make_viewpoints(const Pose& anchor, const Config& cfg);

struct ViewRender {
  RangeImage range;
  SemanticImage semantics;
};

/// Crops the map to max_range_m around the pose, projects and estimates normals.
ViewRender render_viewpoint(const LabeledPointCloud& map_cloud, const Pose& pose, const Config& cfg);

/// Index of the viewpoint whose heading is closest to `heading` (relative to the anchor).
int nearest_viewpoint(double heading, const Config& cfg);

}  // namespace xpr
