#include "xpr/synth.hpp"

#include "xpr/projection.hpp"
#include "xpr/viewpoints.hpp"

#include <algorithm>
#include <cmath>

namespace xpr {

namespace {

struct Footprint {
  Vec3 center;
  double radius;
};

double distance_to_road(const Primitive& road, const Vec3& p) {
  // Lateral distance from the road's center line.
  const Vec3 d = p - road.center;
  return std::abs(-std::sin(road.yaw) * d.x() + std::cos(road.yaw) * d.y());
}

bool clear_of(const std::vector<Primitive>& roads, const std::vector<Footprint>& taken, const Vec3& c, double r) {
  if (c.head<2>().norm() < r + 3.0) return false;  // keep the sensor position free
  for (const Primitive& road : roads) {
    if (distance_to_road(road, c) < road.half_y + r + 0.5) return false;
  }
  for (const Footprint& f : taken) {
    if ((f.center - c).head<2>().norm() < f.radius + r + 1.0) return false;
  }
  return true;
}

Vec3 polar(double dist, double az) { return Vec3(dist * std::cos(az), dist * std::sin(az), 0.0); }

std::vector<Primitive> generate_scene(Rng& rng) {
  std::vector<Primitive> prims;
  Primitive ground;
  ground.kind = PrimitiveKind::kGround;
  ground.label = cls::kGround;
  ground.half_x = 30.0;
  ground.half_y = 30.0;
  prims.push_back(ground);

  std::vector<Primitive> roads;
  const int n_roads = 1 + static_cast<int>(rng.index(2));
  const double first_yaw = rng.uniform(0.0, M_PI);
  for (int i = 0; i < n_roads; ++i) {
    Primitive road;
    road.kind = PrimitiveKind::kRoad;
    road.label = cls::kRoad;
    road.yaw = i == 0 ? first_yaw : first_yaw + rng.uniform(0.35 * M_PI, 0.65 * M_PI);
    const double offset = rng.uniform(-2.0, 2.0);
    road.center = Vec3(-std::sin(road.yaw) * offset, std::cos(road.yaw) * offset, 0.05 * (i + 1));
    road.half_x = 30.0;
    road.half_y = rng.uniform(3.0, 5.0);
    roads.push_back(road);
    prims.push_back(road);
  }

  // Per-place street character shared by every direction: setbacks and sizes
  // vary between places but only mildly within one.
  const double building_dist = rng.uniform(9.0, 34.0);
  const double building_height = rng.uniform(4.0, 28.0);
  const double tree_dist = rng.uniform(5.0, 28.0);
  const double tree_height = rng.uniform(3.0, 12.0);
  const double tree_radius = rng.uniform(0.8, 2.2);
  const double pole_dist = rng.uniform(5.0, 18.0);
  double building_half_w = rng.uniform(2.5, 7.0);
  double building_half_d = rng.uniform(2.5, 7.0);
  // Keep footprints clear of the sensor at this setback.
  const double fit = std::min(1.0, 0.55 * building_dist / std::hypot(building_half_w, building_half_d));
  building_half_w *= fit;
  building_half_d *= fit;

  std::vector<Footprint> taken;
  // Azimuths are stratified so every heading sees each object kind.
  const auto place_objects = [&](PrimitiveKind kind, int count, double dist) {
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int n = 0; n < count; ++n) {
      for (int attempt = 0; attempt < 40; ++attempt) {
        Primitive p;
        p.kind = kind;
        const double az = phase + 2.0 * M_PI * (n + rng.uniform(0.15, 0.85)) / count;
        const Vec3 c = polar(dist * rng.uniform(0.9, 1.1), az);
        double footprint = 0.0;
        switch (kind) {
          case PrimitiveKind::kBuilding:
            p.label = cls::kBuilding;
            // Facades face the place center.
            p.half_x = building_half_d * rng.uniform(0.9, 1.1);
            p.half_y = building_half_w * rng.uniform(0.9, 1.1);
            p.height = building_height * rng.uniform(0.85, 1.15);
            p.yaw = az;
            footprint = std::hypot(p.half_x, p.half_y);
            break;
          case PrimitiveKind::kTree:
            p.label = cls::kTree;
            p.radius = tree_radius * rng.uniform(0.85, 1.15);
            p.height = tree_height * rng.uniform(0.85, 1.15);
            footprint = p.radius;
            break;
          default:
            p.label = cls::kPole;
            p.radius = 0.15;
            p.height = rng.uniform(5.0, 8.0);
            footprint = p.radius;
            break;
        }
        if (!clear_of(roads, taken, c, footprint)) continue;
        p.center = c;
        taken.push_back({c, footprint});
        prims.push_back(p);
        break;
      }
    }
  };
  // Which object kinds line this street: buildings, trees or both, with or without poles.
  const std::size_t kinds = (1 + rng.index(3)) | (rng.index(2) << 2);
  if (kinds & 1) place_objects(PrimitiveKind::kBuilding, 8 + static_cast<int>(rng.index(5)), building_dist);
  if (kinds & 2) place_objects(PrimitiveKind::kTree, 8 + static_cast<int>(rng.index(7)), tree_dist);
  if (kinds & 4) place_objects(PrimitiveKind::kPole, 4 + static_cast<int>(rng.index(5)), pole_dist);
  return prims;
}

std::size_t sample_count(double area, double density) {
  return static_cast<std::size_t>(std::llround(std::max(0.0, area * density)));
}

void sample_rect(const Vec3& center, double yaw, double hx, double hy, double density, std::uint8_t label,
                 const Vec3& origin, std::uint32_t source, Rng& rng, LabeledPointCloud& out,
                 std::vector<std::uint32_t>* sources) {
  const std::size_t n = sample_count(4.0 * hx * hy, density);
  const double c = std::cos(yaw), s = std::sin(yaw);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(-hx, hx);
    const double v = rng.uniform(-hy, hy);
    out.push_back(origin + center + Vec3(c * u - s * v, s * u + c * v, 0.0), label);
    if (sources) sources->push_back(source);
  }
}

}  // namespace

double surface_area(const Primitive& p) {
  switch (p.kind) {
    case PrimitiveKind::kGround:
    case PrimitiveKind::kRoad:
      return 4.0 * p.half_x * p.half_y;
    case PrimitiveKind::kBuilding:
      return 4.0 * p.height * (p.half_x + p.half_y) + 4.0 * p.half_x * p.half_y;
    case PrimitiveKind::kTree:
    case PrimitiveKind::kPole:
      return 2.0 * M_PI * p.radius * p.height + M_PI * p.radius * p.radius;
  }
  return 0.0;
}

const SyntheticPlace& SyntheticWorld::place(std::uint32_t id) const {
  auto it = std::find_if(places.begin(), places.end(), [id](const SyntheticPlace& p) { return p.id == id; });
  if (it == places.end()) throw DataError("synthetic world: unknown place " + std::to_string(id));
  return *it;
}

SyntheticWorld generate_world(int n_places, Rng& rng, const Config& cfg, const WorldOptions& options) {
  if (n_places < 1) throw DataError("generate_world: need at least one place");
  if (options.spacing_m < 2.0 * cfg.match_threshold_m) {
    throw DataError("generate_world: place spacing must be at least twice the match threshold");
  }
  SyntheticWorld world;
  world.density = options.density;
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_places))));
  const double jitter = 0.1 * options.spacing_m;
  for (int i = 0; i < n_places; ++i) {
    SyntheticPlace place;
    place.id = static_cast<std::uint32_t>(i);
    if (i > 0) {
      place.position = Vec3(options.spacing_m * (i % grid) + rng.uniform(-jitter, jitter),
                            options.spacing_m * (i / grid) + rng.uniform(-jitter, jitter), 0.0);
    }
    place.scene_seed = rng.next_u64();
    const bool twin = options.aliased_pairs && i % 2 == 1;
    if (twin) {
      place.primitives = world.places.back().primitives;
      for (Primitive& p : place.primitives) {
        if (p.label == cls::kBuilding) {
          p.label = cls::kTree;
        } else if (p.label == cls::kTree) {
          p.label = cls::kBuilding;
        }
      }
    } else {
      Rng scene(place.scene_seed);
      place.primitives = generate_scene(scene);
    }
    world.places.push_back(std::move(place));
  }
  return world;
}

LabeledPointCloud sample_cloud(const SyntheticWorld& world, std::uint32_t place_id, double density, Rng& rng,
                               std::vector<std::uint32_t>* sources) {
  const SyntheticPlace& place = world.place(place_id);
  LabeledPointCloud out;
  if (sources) sources->clear();
  if (density <= 0.0) return out;
  const Vec3& origin = place.position;
  for (std::uint32_t idx = 0; idx < place.primitives.size(); ++idx) {
    const Primitive& p = place.primitives[idx];
    switch (p.kind) {
      case PrimitiveKind::kGround:
      case PrimitiveKind::kRoad:
        sample_rect(p.center, p.yaw, p.half_x, p.half_y, density, p.label, origin, idx, rng, out, sources);
        break;
      case PrimitiveKind::kBuilding: {
        const double c = std::cos(p.yaw), s = std::sin(p.yaw);
        const Vec3 ax(c, s, 0.0), ay(-s, c, 0.0);
        // Four walls: (normal axis, half extent along normal, tangent axis, tangent half extent).
        const struct { Vec3 n; double hn; Vec3 t; double ht; } walls[4] = {
            {ax, p.half_x, ay, p.half_y}, {-ax, p.half_x, ay, p.half_y},
            {ay, p.half_y, ax, p.half_x}, {-ay, p.half_y, ax, p.half_x}};
        for (const auto& w : walls) {
          const std::size_t n = sample_count(2.0 * w.ht * p.height, density);
          for (std::size_t i = 0; i < n; ++i) {
            const double u = rng.uniform(-w.ht, w.ht);
            const double z = rng.uniform(0.0, p.height);
            out.push_back(origin + p.center + w.n * w.hn + w.t * u + Vec3(0.0, 0.0, z), p.label);
            if (sources) sources->push_back(idx);
          }
        }
        sample_rect(p.center + Vec3(0.0, 0.0, p.height), p.yaw, p.half_x, p.half_y, density, p.label, origin, idx,
                    rng, out, sources);
        break;
      }
      case PrimitiveKind::kTree:
      case PrimitiveKind::kPole: {
        const std::size_t side = sample_count(2.0 * M_PI * p.radius * p.height, density);
        for (std::size_t i = 0; i < side; ++i) {
          const double az = rng.uniform(-M_PI, M_PI);
          const double z = rng.uniform(0.0, p.height);
          out.push_back(origin + p.center + Vec3(p.radius * std::cos(az), p.radius * std::sin(az), z), p.label);
          if (sources) sources->push_back(idx);
        }
        const std::size_t cap = sample_count(M_PI * p.radius * p.radius, density);
        for (std::size_t i = 0; i < cap; ++i) {
          // Uniform on the disk via sqrt of a uniform radius.
          const double r = p.radius * std::sqrt(rng.uniform());
          const double az = rng.uniform(-M_PI, M_PI);
          out.push_back(origin + p.center + Vec3(r * std::cos(az), r * std::sin(az), p.height), p.label);
          if (sources) sources->push_back(idx);
        }
        break;
      }
    }
  }
  return out;
}

LabeledPointCloud place_cloud(const SyntheticWorld& world, std::uint32_t place_id) {
  Rng rng = Rng(world.place(place_id).scene_seed).split(0x434c4f5544ULL);
  return sample_cloud(world, place_id, world.density, rng);
}

Pose anchor_pose(const SyntheticWorld& world, std::uint32_t place_id) {
  return Pose{Mat3::Identity(), world.place(place_id).position + Vec3(0.0, 0.0, world.sensor_height)};
}

Vec3 class_color(std::uint8_t label) {
  static const Vec3 kPalette[] = {
      {0.0, 0.0, 0.0},   {0.5, 0.2, -0.4},  {-0.6, -0.6, -0.6}, {0.8, -0.5, 0.3},
      {-0.4, 0.8, -0.3}, {0.2, 0.1, 0.9},   {-0.8, 0.3, 0.6},   {0.4, -0.8, -0.9},
  };
  constexpr std::size_t n = sizeof(kPalette) / sizeof(kPalette[0]);
  if (label < n) return kPalette[label];
  // Beyond the palette: deterministic pseudo-random colors.
  const std::uint64_t h = splitmix64(label);
  return Vec3(((h & 0xffff) / 65535.0) * 2.0 - 1.0, (((h >> 16) & 0xffff) / 65535.0) * 2.0 - 1.0,
              (((h >> 32) & 0xffff) / 65535.0) * 2.0 - 1.0);
}

SyntheticQuery make_query_from_cloud(const LabeledPointCloud& cloud, const Pose& anchor, std::uint32_t place_id,
                                     double heading, double noise_level, Rng& rng, const Config& cfg) {
  SyntheticQuery q;
  q.place_id = place_id;
  q.heading = heading;
  q.gt_position = anchor.translation;

  const Pose pose{yaw_rotation(heading) * anchor.rotation, anchor.translation};
  const ViewRender render = render_viewpoint(cloud, pose, cfg);
  const ColumnWindow window = frustum_window(cfg);
  const RangeImage range = crop_columns(render.range, window);
  const SemanticImage sem = crop_columns(render.semantics, window);

  QueryObservation& obs = q.obs;
  obs.rows = range.rows();
  obs.cols = range.cols();
  obs.in_channels = kQueryInputChannels;
  obs.raw.assign(range.depth.size() * kQueryInputChannels, 0.0);
  obs.valid.assign(range.depth.size(), 0);
  obs.gt_labels = sem;
  for (std::size_t i = 0; i < range.depth.size(); ++i) {
    const double depth = range.depth.data[i];
    if (depth <= 0.0) continue;
    obs.valid[i] = 1;
    double* x = obs.raw.data() + i * kQueryInputChannels;
    x[0] = normalized_depth(depth, cfg);
    const Vec3& n = range.normals.data[i];
    x[1] = n.x();
    x[2] = n.y();
    x[3] = n.z();
    const Vec3 color = class_color(sem.data[i]);
    for (int k = 0; k < 3; ++k) x[4 + k] = color[k] + noise_level * rng.normal();
  }
  return q;
}

SyntheticQuery make_query(const SyntheticWorld& world, std::uint32_t place_id, double heading, double noise_level,
                          Rng& rng, const Config& cfg) {
  return make_query_from_cloud(place_cloud(world, place_id), anchor_pose(world, place_id), place_id, heading,
                               noise_level, rng, cfg);
}

}  // namespace xpr
