// Deterministic synthetic urban scenes: labeled primitives per place, surface
// sampling, and camera-like query observations.
#pragma once

#include "xpr/core.hpp"
#include "xpr/encoder.hpp"

namespace xpr {

namespace cls {
inline constexpr std::uint8_t kVoid = 0;
inline constexpr std::uint8_t kGround = 1;
inline constexpr std::uint8_t kRoad = 2;
inline constexpr std::uint8_t kBuilding = 3;
inline constexpr std::uint8_t kTree = 4;
inline constexpr std::uint8_t kPole = 5;
}  // namespace cls

enum class PrimitiveKind { kGround, kRoad, kBuilding, kTree, kPole };

/// Geometry in the place-local frame (origin on the ground below the sensor).
/// Ground/road: horizontal rectangle at `center.z()`. Building: box standing on
/// z = 0. Tree/pole: vertical cylinder standing on z = 0.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kGround;
  std::uint8_t label = cls::kGround;
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;
  double half_x = 0.0;  // rectangle / box half extents
  double half_y = 0.0;
  double radius = 0.0;  // cylinders
  double height = 0.0;  // boxes and cylinders
};

/// Sampled surface area of a primitive (box: four sides and roof; cylinder: side and cap).
double surface_area(const Primitive& prim);

struct SyntheticPlace {
  std::uint32_t id = 0;
  Vec3 position = Vec3::Zero();  // world position of the local origin
  std::uint64_t scene_seed = 0;
  std::vector<Primitive> primitives;
};

struct SyntheticWorld {
  std::vector<SyntheticPlace> places;
  double sensor_height = 1.73;
  double density = 6.0;  // points / m^2 used by place_cloud

  const SyntheticPlace& place(std::uint32_t id) const;
};

struct WorldOptions {
  double spacing_m = 200.0;
  double density = 6.0;
  /// Places 2i and 2i+1 share their geometry; the second swaps building and tree labels.
  bool aliased_pairs = false;
};

SyntheticWorld generate_world(int n_places, Rng& rng, const Config& cfg, const WorldOptions& options = {});

/// Surface samples in world coordinates; round(area * density) points per surface.
/// `sources`, when given, receives the primitive index of each point.
LabeledPointCloud sample_cloud(const SyntheticWorld& world, std::uint32_t place_id, double density, Rng& rng,
                               std::vector<std::uint32_t>* sources = nullptr);

/// The place's scan at world.density, seeded by the place's scene seed.
LabeledPointCloud place_cloud(const SyntheticWorld& world, std::uint32_t place_id);

/// Sensor pose at the place: identity rotation, raised by the sensor height.
Pose anchor_pose(const SyntheticWorld& world, std::uint32_t place_id);

struct SyntheticQuery {
  std::uint32_t place_id = 0;
  double heading = 0.0;
  Vec3 gt_position = Vec3::Zero();
  QueryObservation obs;
};

/// Appearance color of each class; queries add Gaussian noise on top.
Vec3 class_color(std::uint8_t label);

/// Renders the forward frustum of `cloud` from `anchor` yawed by `heading` and
/// builds raw channels: normalized depth, normal, class color + noise_level * N(0, 1).
SyntheticQuery make_query_from_cloud(const LabeledPointCloud& cloud, const Pose& anchor, std::uint32_t place_id,
                                     double heading, double noise_level, Rng& rng, const Config& cfg);

SyntheticQuery make_query(const SyntheticWorld& world, std::uint32_t place_id, double heading, double noise_level,
                          Rng& rng, const Config& cfg);

}  // namespace xpr
