#include "xpr/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xpr {

namespace {

constexpr double kDeg = M_PI / 180.0;
constexpr double kTieTolerance = 1e-9;

int wrap(int c, int n) { return ((c % n) + n) % n; }

}  // namespace

Vec3 RangeImage::cell_direction(int row, int col) const {
  const double az = -M_PI + (col + 0.5) * (2.0 * M_PI / cols());
  const double el = (vfov_up - (row + 0.5) * (vfov_up - vfov_down) / rows()) * kDeg;
  return Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

RangeImage make_empty_range_image(const Config& cfg) {
  RangeImage img;
  img.depth = Grid<double>(cfg.range_rows, cfg.range_cols, 0.0);
  img.normals = Grid<Vec3>(cfg.range_rows, cfg.range_cols, Vec3::Zero());
  img.vfov_up = cfg.vfov_up;
  img.vfov_down = cfg.vfov_down;
  return img;
}

int azimuth_to_col(double azimuth, int cols) {
  // atan2 yields (-pi, pi]; +pi folds onto -pi so the domain is [-pi, pi).
  if (azimuth >= M_PI) azimuth -= 2.0 * M_PI;
  const int col = static_cast<int>(std::floor((azimuth + M_PI) / (2.0 * M_PI) * cols));
  return std::clamp(col, 0, cols - 1);
}

int elevation_to_row(double elevation, double vfov_up_deg, double vfov_down_deg, int rows) {
  const double up = vfov_up_deg * kDeg;
  const double down = vfov_down_deg * kDeg;
  if (elevation > up || elevation < down) return -1;
  const int row = static_cast<int>(std::floor((up - elevation) / (up - down) * rows));
  return std::clamp(row, 0, rows - 1);
}

ColumnWindow centered_window(int cols, int width) {
  width = std::clamp(width, 1, cols);
  return {cols / 2 - width / 2, width};
}

ColumnWindow frustum_window(const Config& cfg) {
  const int width = static_cast<int>(std::lround(cfg.range_cols * cfg.query_fov_deg / 360.0));
  return centered_window(cfg.range_cols, width);
}

std::pair<RangeImage, SemanticImage> project_spherical(const LabeledPointCloud& cloud, const Pose& sensor_pose,
                                                       const Config& cfg) {
  RangeImage img = make_empty_range_image(cfg);
  SemanticImage sem(cfg.range_rows, cfg.range_cols, 0);
  Grid<std::size_t> winner(cfg.range_rows, cfg.range_cols, std::numeric_limits<std::size_t>::max());

  const Mat3 rt = sensor_pose.rotation.transpose();
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3 offset = cloud.points[i] - sensor_pose.translation;
    // Range from the world-frame offset so pure sensor rotations leave it bit-identical.
    const double range = offset.norm();
    if (!(range > 0.0)) continue;
    const Vec3 p = rt * offset;
    const int row = elevation_to_row(std::asin(std::clamp(p.z() / range, -1.0, 1.0)), cfg.vfov_up, cfg.vfov_down,
                                     cfg.range_rows);
    if (row < 0) continue;
    const int col = azimuth_to_col(std::atan2(p.y(), p.x()), cfg.range_cols);

    double& depth = img.depth(row, col);
    std::size_t& best = winner(row, col);
    const bool empty = best == std::numeric_limits<std::size_t>::max();
    const bool nearer = range < depth - kTieTolerance;
    const bool tie_lower_index = std::abs(range - depth) <= kTieTolerance && i < best;
    if (empty || nearer || tie_lower_index) {
      depth = range;
      best = i;
      sem(row, col) = cloud.labels[i];
    }
  }
  return {std::move(img), std::move(sem)};
}

RangeImage estimate_normals(RangeImage img) {
  const int rows = img.rows();
  const int cols = img.cols();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (img.depth(r, c) <= 0.0) {
        img.normals(r, c) = Vec3::Zero();
        continue;
      }
      const Vec3 p = img.cell_point(r, c);
      const Vec3 radial = -p.normalized();
      const int right = wrap(c + 1, cols);
      const bool has_neighbors = r + 1 < rows && img.depth(r, right) > 0.0 && img.depth(r + 1, c) > 0.0;
      Vec3 n = radial;
      if (has_neighbors) {
        const Vec3 cross = (img.cell_point(r, right) - p).cross(img.cell_point(r + 1, c) - p);
        const double norm = cross.norm();
        if (norm > 1e-12) {
          n = cross / norm;
          if (n.dot(p) > 0.0) n = -n;
        }
      }
      img.normals(r, c) = n;
    }
  }
  return img;
}

std::vector<double> semantic_histogram(const SemanticImage& sem, const Config& cfg) {
  std::vector<double> hist(static_cast<std::size_t>(cfg.n_classes), 0.0);
  std::size_t total = 0;
  for (std::uint8_t label : sem.data) {
    if (label == 0) continue;
    if (label >= cfg.n_classes) throw DataError("semantic image label exceeds n_classes");
    hist[label] += 1.0;
    ++total;
  }
  if (total == 0) {
    for (int c = 1; c < cfg.n_classes; ++c) hist[c] = 1.0 / (cfg.n_classes - 1);
    return hist;
  }
  for (double& h : hist) h /= static_cast<double>(total);
  return hist;
}

RangeImage crop_columns(const RangeImage& img, ColumnWindow window) {
  RangeImage out;
  out.vfov_up = img.vfov_up;
  out.vfov_down = img.vfov_down;
  out.depth = Grid<double>(img.rows(), window.width, 0.0);
  out.normals = Grid<Vec3>(img.rows(), window.width, Vec3::Zero());
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < window.width; ++c) {
      const int src = wrap(window.start + c, img.cols());
      out.depth(r, c) = img.depth(r, src);
      out.normals(r, c) = img.normals(r, src);
    }
  }
  return out;
}

SemanticImage crop_columns(const SemanticImage& img, ColumnWindow window) {
  SemanticImage out(img.rows, window.width, 0);
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < window.width; ++c) out(r, c) = img(r, wrap(window.start + c, img.cols));
  }
  return out;
}

}  // namespace xpr
