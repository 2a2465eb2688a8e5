// Hybrid geometric + semantic similarity, multi-view matching and Recall@K.
#pragma once

#include "xpr/aggregation.hpp"
#include "xpr/core.hpp"

#include <span>

namespace xpr {

struct Place {
  std::uint32_t id = 0;
  Vec3 position = Vec3::Zero();

  friend bool operator==(const Place&, const Place&) = default;
};

struct MapEntry {
  std::uint32_t place_id = 0;
  std::uint32_t viewpoint = 0;
  Pose pose;
  GlobalDescriptor descriptor;
  SemanticImage semantics;
  std::vector<double> histogram;

  friend bool operator==(const MapEntry&, const MapEntry&) = default;
};

struct MapIndex {
  Config config;
  std::vector<Place> places;
  std::vector<MapEntry> entries;

  /// Throws DataError when an entry references an unknown place or a place does
  /// not have exactly n_viewpoints entries.
  void validate() const;
  const Place* find_place(std::uint32_t id) const;
  /// Mean class histogram over all entries; the query-time semantic context.
  std::vector<double> mean_histogram() const;

  friend bool operator==(const MapIndex&, const MapIndex&) = default;
};

struct RankedPlace {
  std::uint32_t place_id = 0;
  std::uint32_t viewpoint = 0;
  double score = 0.0;
  double phi = 0.0;
  double psi = 0.0;
};

struct MatchResult {
  std::uint32_t query_id = 0;
  std::uint32_t best_place_id = 0;
  std::uint32_t best_viewpoint = 0;
  double score = 0.0;
  double phi = 0.0;
  double psi = 0.0;
  std::vector<RankedPlace> ranked;  // descending score; ties by place id
};

struct Similarity {
  double sim = 0.0;
  double phi = 0.0;
  double psi = 0.0;
};

/// Cosine similarity; throws DataError if either descriptor is flagged empty.
double geometric_similarity(const GlobalDescriptor& a, const GlobalDescriptor& b);

/// Mean per-class IoU (classes 1..N_S-1 present in either image) inside the
/// query's column window of the candidate. A narrower image is compared against
/// the forward-centered window of the wider one; equal widths compare whole images.
double semantic_overlap(const SemanticImage& query_sem, const SemanticImage& cand_sem, const Config& cfg);

Similarity hybrid_similarity(const GlobalDescriptor& q_desc, const SemanticImage& q_sem, const MapEntry& entry,
                             const Config& cfg);

/// Scores every place by its best viewpoint and ranks places. Throws on an empty index.
MatchResult match_query(const GlobalDescriptor& q_desc, const SemanticImage& q_sem, const MapIndex& index,
                        const Config& cfg, std::uint32_t query_id = 0);

struct GroundTruth {
  std::uint32_t query_id = 0;
  Vec3 position = Vec3::Zero();
};

/// Percentage of queries with a top-k place within match_threshold_m (horizontal).
double recall_at_k(std::span<const MatchResult> results, std::span<const Place> places,
                   std::span<const GroundTruth> gt, int k, const Config& cfg);

/// 1-based rank of the first ranked place within the threshold of `truth`; 0 if none.
int rank_of_truth(const MatchResult& result, std::span<const Place> places, const Vec3& truth, const Config& cfg);

}  // namespace xpr
