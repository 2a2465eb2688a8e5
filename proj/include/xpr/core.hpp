// Shared domain records for the cross-modal place recognition pipeline.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace xpr {

inline constexpr std::string_view kVersion = "0.1.0";

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration; `field()` names the first violated key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error("config: " + field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Malformed or inconsistent input data (files, shapes, values).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Dense row-major 2D grid.
template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int r, int c, const T& init = T{})
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), init) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(int r, int c) const noexcept { return rows == r && cols == c; }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
  }
};

/// Per-cell class ids; 0 marks void / empty cells.
using SemanticImage = Grid<std::uint8_t>;

enum class LossKind { kTriplet, kInfoNce };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

struct Config {
  int n_classes = 8;
  int descriptor_dim = 128;
  int n_viewpoints = 8;
  int range_rows = 16;
  int range_cols = 180;
  double vfov_up = 2.0;     // degrees
  double vfov_down = -24.8; // degrees
  double alpha = 0.7;
  double beta = 0.3;
  double lambda_sem = 0.1;
  double margin = 0.3;
  double temperature = 0.07;
  LossKind loss_kind = LossKind::kInfoNce;
  double match_threshold_m = 5.0;
  std::uint64_t seed = 42;

  double max_range_m = 80.0;
  double query_fov_deg = 90.0;
  int netvlad_clusters = 8;
  int negatives_per_anchor = 4;
  int batch_size = 4;

  friend bool operator==(const Config&, const Config&) = default;
};

/// Returns `cfg` unchanged when every invariant holds, throws ConfigError
/// naming the first violated field otherwise.
Config validate_config(const Config& cfg);

/// Number of query feature channels: depth, normal (3), appearance (3).
inline constexpr int kQueryInputChannels = 7;

/// Local feature width shared by both modalities: depth, normal (3), one-hot.
inline int feature_channels(const Config& cfg) { return 4 + cfg.n_classes; }

struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_yaw(double yaw, const Vec3& translation);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  /// World point expressed in this pose's local frame.
  Vec3 to_local(const Vec3& p) const { return rotation.transpose() * (p - translation); }
  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;
  /// Heading about +z, assuming the rotation is (close to) a pure yaw.
  double yaw() const;
  bool is_valid(double tol = 1e-6) const;

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

Mat3 yaw_rotation(double yaw);

struct LabeledPointCloud {
  std::vector<Vec3> points;
  std::vector<double> intensities;  // empty or same length as points
  std::vector<std::uint8_t> labels;

  std::size_t count() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  void push_back(const Vec3& p, std::uint8_t label) {
    points.push_back(p);
    labels.push_back(label);
  }
  /// Throws DataError when lengths disagree, a label is out of range or a
  /// coordinate is not finite.
  void validate(const Config& cfg) const;
};

/// Seeded pseudo-random stream. The engine is mt19937_64 (its output is fixed
/// by the standard); distributions are computed here rather than through
/// <random> so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Independent child stream; does not advance this stream.
  Rng split(std::uint64_t stream) const;
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Worker count from XPR_THREADS (0 or unset = hardware concurrency).
int worker_threads();

}  // namespace xpr
