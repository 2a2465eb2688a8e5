#include "xpr/pipeline.hpp"

#include "xpr/parallel.hpp"

#include <cmath>
#include <unordered_map>

namespace xpr {

std::vector<PlaceScan> scans_from_world(const SyntheticWorld& world) {
  std::vector<PlaceScan> scans(world.places.size());
  parallel_for(scans.size(), [&](std::size_t i) {
    const std::uint32_t id = world.places[i].id;
    scans[i] = PlaceScan{id, anchor_pose(world, id), place_cloud(world, id)};
  });
  return scans;
}

std::vector<RenderedPlace> render_places(std::span<const PlaceScan> scans, const Config& cfg) {
  std::vector<RenderedPlace> out(scans.size());
  parallel_for(scans.size(), [&](std::size_t i) {
    const PlaceScan& scan = scans[i];
    RenderedPlace& rp = out[i];
    rp.place_id = scan.place_id;
    rp.anchor = scan.anchor;
    rp.poses = make_viewpoints(scan.anchor, cfg).poses;
    rp.views.reserve(rp.poses.size());
    for (const Pose& pose : rp.poses) rp.views.push_back(render_viewpoint(scan.cloud, pose, cfg));
  });
  return out;
}

MapIndex build_index(std::span<const RenderedPlace> places, const ModelParams& params, const Config& cfg) {
  MapIndex index;
  index.config = cfg;
  std::vector<std::vector<MapEntry>> per_place(places.size());
  parallel_for(places.size(), [&](std::size_t i) {
    const RenderedPlace& rp = places[i];
    for (std::size_t k = 0; k < rp.views.size(); ++k) {
      MapEntry e;
      e.place_id = rp.place_id;
      e.viewpoint = static_cast<std::uint32_t>(k);
      e.pose = rp.poses[k];
      e.descriptor = describe_viewpoint(rp.views[k].range, rp.views[k].semantics, params.vlad, cfg);
      // Stored precision; the index file round-trips exactly.
      for (double& v : e.descriptor.values) v = static_cast<double>(static_cast<float>(v));
      e.semantics = rp.views[k].semantics;
      e.histogram = semantic_histogram(e.semantics, cfg);
      per_place[i].push_back(std::move(e));
    }
  });
  for (std::size_t i = 0; i < places.size(); ++i) {
    index.places.push_back(Place{places[i].place_id, places[i].anchor.translation});
    for (MapEntry& e : per_place[i]) index.entries.push_back(std::move(e));
  }
  return index;
}

std::vector<MatchResult> match_queries(std::span<const QueryRecord> queries, const MapIndex& index,
                                       const ModelParams& params, const Config& cfg) {
  const std::vector<double> context = index.mean_histogram();
  std::vector<MatchResult> results(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) {
    const auto [desc, sem] = describe_query(queries[i].obs, params.enc, params.att, params.vlad, context);
    results[i] = match_query(desc, sem, index, cfg, queries[i].query_id);
  });
  return results;
}

std::vector<GroundTruth> ground_truth(std::span<const QueryRecord> queries) {
  std::vector<GroundTruth> gt;
  gt.reserve(queries.size());
  for (const QueryRecord& q : queries) gt.push_back({q.query_id, q.gt_position});
  return gt;
}

std::vector<QueryRecord> synth_queries(std::span<const PlaceScan> scans, int per_place, double noise_level, Rng& rng,
                                       const Config& cfg) {
  std::vector<QueryRecord> out;
  std::uint32_t next_id = 0;
  for (const PlaceScan& scan : scans) {
    for (int j = 0; j < per_place; ++j) {
      const double heading = rng.uniform(0.0, 2.0 * M_PI);
      SyntheticQuery q = make_query_from_cloud(scan.cloud, scan.anchor, scan.place_id, heading, noise_level, rng, cfg);
      out.push_back(QueryRecord{next_id++, scan.place_id, heading, q.gt_position, std::move(q.obs)});
    }
  }
  return out;
}

TrainingSet make_training_set(std::span<const RenderedPlace> places, std::span<const QueryRecord> queries,
                              const Config& cfg) {
  TrainingSet set;
  std::unordered_map<std::uint32_t, std::size_t> slot;
  set.places.resize(places.size());
  parallel_for(places.size(), [&](std::size_t i) {
    TrainingPlace& tp = set.places[i];
    tp.place_id = places[i].place_id;
    tp.position = places[i].anchor.translation;
    for (const ViewRender& v : places[i].views) tp.views.push_back(make_map_view(v, cfg));
  });
  set.context = mean_view_histogram(set.places, cfg.n_classes);
  for (std::size_t i = 0; i < places.size(); ++i) slot.emplace(places[i].place_id, i);
  for (const QueryRecord& q : queries) {
    auto it = slot.find(q.place_id);
    if (it == slot.end()) throw DataError("training query references unknown place " + std::to_string(q.place_id));
    set.queries.push_back(TrainingQuery{q.obs, it->second, q.heading});
  }
  return set;
}

}  // namespace xpr
