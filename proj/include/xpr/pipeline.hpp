// End-to-end orchestration: render map viewpoints, build the index, describe
// and match queries, evaluate recall, and assemble training data.
#pragma once

#include "xpr/losses.hpp"
#include "xpr/matching.hpp"
#include "xpr/model.hpp"
#include "xpr/synth.hpp"
#include "xpr/viewpoints.hpp"

#include <span>

namespace xpr {

/// One map scan: a labeled cloud in world coordinates and its anchor pose.
struct PlaceScan {
  std::uint32_t place_id = 0;
  Pose anchor;
  LabeledPointCloud cloud;
};

struct RenderedPlace {
  std::uint32_t place_id = 0;
  Pose anchor;
  std::vector<Pose> poses;
  std::vector<ViewRender> views;
};

struct QueryRecord {
  std::uint32_t query_id = 0;
  std::uint32_t place_id = 0;
  double heading = 0.0;  // relative to the place anchor
  Vec3 gt_position = Vec3::Zero();
  QueryObservation obs;
};

std::vector<PlaceScan> scans_from_world(const SyntheticWorld& world);

/// Renders every place from its N_V viewpoints (independent per place).
std::vector<RenderedPlace> render_places(std::span<const PlaceScan> scans, const Config& cfg);

/// Descriptors are rounded to float32, the precision of the index file.
MapIndex build_index(std::span<const RenderedPlace> places, const ModelParams& params, const Config& cfg);

/// Describes each query with the index's mean histogram as context and matches it.
std::vector<MatchResult> match_queries(std::span<const QueryRecord> queries, const MapIndex& index,
                                       const ModelParams& params, const Config& cfg);

std::vector<GroundTruth> ground_truth(std::span<const QueryRecord> queries);

/// Seeded queries: `per_place` random headings per place at the given noise level.
std::vector<QueryRecord> synth_queries(std::span<const PlaceScan> scans, int per_place, double noise_level, Rng& rng,
                                       const Config& cfg);

TrainingSet make_training_set(std::span<const RenderedPlace> places, std::span<const QueryRecord> queries,
                              const Config& cfg);

}  // namespace xpr
