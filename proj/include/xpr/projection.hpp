// Spherical projection of labeled LiDAR points into range/semantic images.
#pragma once

#include "xpr/core.hpp"

#include <utility>

namespace xpr {

struct RangeImage {
  Grid<double> depth;    // meters, 0 = empty cell
  Grid<Vec3> normals;    // unit where depth > 0, zero elsewhere
  double vfov_up = 0.0;  // degrees
  double vfov_down = 0.0;

  int rows() const noexcept { return depth.rows; }
  int cols() const noexcept { return depth.cols; }
  /// Unit viewing direction through the center of cell (row, col).
  Vec3 cell_direction(int row, int col) const;
  /// 3D point reconstructed from the cell center direction and stored depth.
  Vec3 cell_point(int row, int col) const { return depth(row, col) * cell_direction(row, col); }
};

RangeImage make_empty_range_image(const Config& cfg);

/// Column index for an azimuth in radians; azimuth 0 lands on column cols/2.
int azimuth_to_col(double azimuth, int cols);
/// Row index for an elevation in radians, or -1 when outside the vertical FOV.
int elevation_to_row(double elevation, double vfov_up_deg, double vfov_down_deg, int rows);

/// Column window [start, start + width) seen by the forward-looking query camera.
struct ColumnWindow {
  int start = 0;
  int width = 0;
};
ColumnWindow frustum_window(const Config& cfg);
/// Window of `width` columns centered on the forward direction of a `cols`-wide image.
ColumnWindow centered_window(int cols, int width);

/// Projects every point of `cloud` seen from `sensor_pose` into a range image and a
/// semantic image. The nearest point wins each cell; equal ranges (within 1e-9)
/// go to the lower point index. Normals are left zero; see estimate_normals.
std::pair<RangeImage, SemanticImage> project_spherical(const LabeledPointCloud& cloud, const Pose& sensor_pose,
                                                       const Config& cfg);

/// Fills the normals channel from right/down one-sided differences, falling back
/// to the negative radial direction where a neighbor is missing.
RangeImage estimate_normals(RangeImage img);

/// Class frequency over non-void cells; uniform over classes 1..N_S-1 when the
/// image holds no labels. Entry 0 is always 0.
std::vector<double> semantic_histogram(const SemanticImage& sem, const Config& cfg);

/// Copy of the columns [window.start, window.start + window.width) with wraparound.
RangeImage crop_columns(const RangeImage& img, ColumnWindow window);
SemanticImage crop_columns(const SemanticImage& img, ColumnWindow window);

}  // namespace xpr
