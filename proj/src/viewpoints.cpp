#include "xpr/viewpoints.hpp"

#include <cmath>

namespace xpr {

ViewpointSet make_viewpoints(const Pose& anchor, const Config& cfg) {
  ViewpointSet set;
  set.anchor = anchor;
  set.yaw_step = 2.0 * M_PI / cfg.n_viewpoints;
  set.poses.reserve(static_cast<std::size_t>(cfg.n_viewpoints));
  for (int k = 0; k < cfg.n_viewpoints; ++k) {
    if (k == 0) {
      set.poses.push_back(anchor);
      continue;
    }
    set.poses.push_back(Pose{yaw_rotation(k * set.yaw_step) * anchor.rotation, anchor.translation});
  }
  return set;
}

ViewRender render_viewpoint(const LabeledPointCloud& map_cloud, const Pose& pose, const Config& cfg) {
  LabeledPointCloud cropped;
  const double max_sq = cfg.max_range_m * cfg.max_range_m;
  cropped.points.reserve(map_cloud.count());
  cropped.labels.reserve(map_cloud.count());
  for (std::size_t i = 0; i < map_cloud.count(); ++i) {
    if ((map_cloud.points[i] - pose.translation).squaredNorm() <= max_sq) {
      cropped.push_back(map_cloud.points[i], map_cloud.labels[i]);
    }
  }
  auto [range, sem] = project_spherical(cropped, pose, cfg);
  return ViewRender{estimate_normals(std::move(range)), std::move(sem)};
}

int nearest_viewpoint(double heading, const Config& cfg) {
  const double step = 2.0 * M_PI / cfg.n_viewpoints;
  const long k = std::lround(heading / step);
  return static_cast<int>(((k % cfg.n_viewpoints) + cfg.n_viewpoints) % cfg.n_viewpoints);
}

}  // namespace xpr
