#include "xpr/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdlib>
#include <thread>

namespace xpr {

std::string_view to_string(LossKind kind) {
  return kind == LossKind::kTriplet ? "triplet" : "infonce";
}

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "triplet") return LossKind::kTriplet;
  if (name == "infonce") return LossKind::kInfoNce;
  throw ConfigError("loss_kind", "expected 'triplet' or 'infonce', got '" + std::string(name) + "'");
}

Config validate_config(const Config& cfg) {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw ConfigError(field, what);
  };
  // Class 0 is void, so at least one real class is needed; ids are stored as bytes.
  require(cfg.n_classes >= 2 && cfg.n_classes <= 255, "n_classes", "must be in [2, 255]");
  require(cfg.descriptor_dim > 0, "descriptor_dim", "must be positive");
  require(cfg.n_viewpoints > 0, "n_viewpoints", "must be positive");
  require(cfg.range_rows > 0, "range_rows", "must be positive");
  require(cfg.range_cols > 0, "range_cols", "must be positive");
  require(std::isfinite(cfg.vfov_up) && std::isfinite(cfg.vfov_down) && cfg.vfov_up > cfg.vfov_down,
          "vfov_up/vfov_down", "vfov_up must exceed vfov_down");
  require(cfg.vfov_up <= 90.0 && cfg.vfov_down >= -90.0, "vfov_up/vfov_down", "must lie in [-90, 90]");
  require(std::isfinite(cfg.alpha) && cfg.alpha >= 0.0, "alpha", "must be non-negative");
  require(std::isfinite(cfg.beta) && cfg.beta >= 0.0, "beta", "must be non-negative");
  require(cfg.alpha + cfg.beta > 0.0, "alpha/beta", "alpha + beta must be positive");
  require(std::isfinite(cfg.lambda_sem) && cfg.lambda_sem >= 0.0, "lambda_sem", "must be non-negative");
  require(std::isfinite(cfg.margin) && cfg.margin >= 0.0, "margin", "must be non-negative");
  require(std::isfinite(cfg.temperature) && cfg.temperature > 0.0, "temperature", "must be positive");
  require(std::isfinite(cfg.match_threshold_m) && cfg.match_threshold_m >= 0.0, "match_threshold_m",
          "must be non-negative");
  require(std::isfinite(cfg.max_range_m) && cfg.max_range_m > 0.0, "max_range_m", "must be positive");
  require(cfg.query_fov_deg > 0.0 && cfg.query_fov_deg <= 360.0, "query_fov_deg", "must be in (0, 360]");
  require(cfg.netvlad_clusters > 0, "netvlad_clusters", "must be positive");
  require(cfg.negatives_per_anchor > 0, "negatives_per_anchor", "must be positive");
  require(cfg.batch_size > 0, "batch_size", "must be positive");
  return cfg;
}

Mat3 yaw_rotation(double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Mat3 r;
  r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return r;
}

Pose Pose::from_yaw(double yaw, const Vec3& translation) {
  return Pose{yaw_rotation(yaw), translation};
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::operator*(const Pose& rhs) const {
  return Pose{rotation * rhs.rotation, rotation * rhs.translation + translation};
}

double Pose::yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

void LabeledPointCloud::validate(const Config& cfg) const {
  if (labels.size() != points.size()) {
    throw DataError("point cloud: " + std::to_string(points.size()) + " points but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (!intensities.empty() && intensities.size() != points.size()) {
    throw DataError("point cloud: intensity count does not match point count");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) throw DataError("point cloud: non-finite coordinate at point " + std::to_string(i));
    if (labels[i] >= cfg.n_classes) {
      throw DataError("point cloud: label " + std::to_string(labels[i]) + " at point " + std::to_string(i) +
                      " exceeds n_classes");
    }
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double Rng::normal() {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Rng Rng::split(std::uint64_t stream) const { return Rng(splitmix64(seed_ ^ splitmix64(stream + 1))); }

int worker_threads() {
  if (const char* env = std::getenv("XPR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace xpr
