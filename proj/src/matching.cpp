#include "xpr/matching.hpp"

#include "xpr/projection.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace xpr {

void MapIndex::validate() const {
  std::map<std::uint32_t, int> per_place;
  for (const Place& p : places) {
    if (!per_place.emplace(p.id, 0).second) throw DataError("map index: duplicate place id " + std::to_string(p.id));
  }
  for (const MapEntry& e : entries) {
    auto it = per_place.find(e.place_id);
    if (it == per_place.end()) throw DataError("map index: entry references unknown place " + std::to_string(e.place_id));
    ++it->second;
  }
  for (const auto& [id, n] : per_place) {
    if (n != config.n_viewpoints) {
      throw DataError("map index: place " + std::to_string(id) + " has " + std::to_string(n) + " entries, expected " +
                      std::to_string(config.n_viewpoints));
    }
  }
}

const Place* MapIndex::find_place(std::uint32_t id) const {
  auto it = std::find_if(places.begin(), places.end(), [id](const Place& p) { return p.id == id; });
  return it == places.end() ? nullptr : &*it;
}

std::vector<double> MapIndex::mean_histogram() const {
  std::vector<double> mean(static_cast<std::size_t>(config.n_classes), 0.0);
  if (entries.empty()) {
    for (int c = 1; c < config.n_classes; ++c) mean[c] = 1.0 / (config.n_classes - 1);
    return mean;
  }
  for (const MapEntry& e : entries) {
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += e.histogram[c];
  }
  for (double& m : mean) m /= static_cast<double>(entries.size());
  return mean;
}

double geometric_similarity(const GlobalDescriptor& a, const GlobalDescriptor& b) {
  if (a.empty || b.empty) throw DataError("geometric_similarity: empty descriptor");
  if (a.values.size() != b.values.size()) throw DataError("geometric_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na <= 0.0 || nb <= 0.0) throw DataError("geometric_similarity: zero descriptor");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double semantic_overlap(const SemanticImage& query_sem, const SemanticImage& cand_sem, const Config& cfg) {
  const SemanticImage& narrow = query_sem.cols <= cand_sem.cols ? query_sem : cand_sem;
  const SemanticImage& wide = query_sem.cols <= cand_sem.cols ? cand_sem : query_sem;
  const int rows = std::min(narrow.rows, wide.rows);
  if (rows <= 0 || narrow.cols <= 0) return 0.0;
  const ColumnWindow window = centered_window(wide.cols, narrow.cols);

  const auto n = static_cast<std::size_t>(cfg.n_classes);
  std::vector<int> inter(n, 0), uni(n, 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < window.width; ++c) {
      const std::uint8_t a = narrow(r, c);
      const std::uint8_t b = wide(r, (window.start + c) % wide.cols);
      if (a >= n || b >= n) throw DataError("semantic_overlap: label exceeds n_classes");
      if (a == b) {
        if (a != 0) {
          ++inter[a];
          ++uni[a];
        }
        continue;
      }
      if (a != 0) ++uni[a];
      if (b != 0) ++uni[b];
    }
  }
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 1; c < n; ++c) {
    if (uni[c] == 0) continue;
    sum += static_cast<double>(inter[c]) / uni[c];
    ++present;
  }
  return present == 0 ? 0.0 : sum / present;
}

Similarity hybrid_similarity(const GlobalDescriptor& q_desc, const SemanticImage& q_sem, const MapEntry& entry,
                             const Config& cfg) {
  Similarity s;
  s.phi = geometric_similarity(q_desc, entry.descriptor);
  s.psi = semantic_overlap(q_sem, entry.semantics, cfg);
  s.sim = cfg.alpha * s.phi + cfg.beta * s.psi;
  return s;
}

MatchResult match_query(const GlobalDescriptor& q_desc, const SemanticImage& q_sem, const MapIndex& index,
                        const Config& cfg, std::uint32_t query_id) {
  if (index.entries.empty()) throw DataError("match_query: empty map index");
  std::unordered_map<std::uint32_t, std::size_t> slot;
  std::vector<RankedPlace> best;
  for (const MapEntry& e : index.entries) {
    const Similarity s = hybrid_similarity(q_desc, q_sem, e, cfg);
    const RankedPlace cand{e.place_id, e.viewpoint, s.sim, s.phi, s.psi};
    auto [it, inserted] = slot.emplace(e.place_id, best.size());
    if (inserted) {
      best.push_back(cand);
      continue;
    }
    RankedPlace& cur = best[it->second];
    if (cand.score > cur.score || (cand.score == cur.score && cand.viewpoint < cur.viewpoint)) cur = cand;
  }
  std::sort(best.begin(), best.end(), [](const RankedPlace& a, const RankedPlace& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.place_id != b.place_id) return a.place_id < b.place_id;
    return a.viewpoint < b.viewpoint;
  });
  MatchResult result;
  result.query_id = query_id;
  result.best_place_id = best.front().place_id;
  result.best_viewpoint = best.front().viewpoint;
  result.score = best.front().score;
  result.phi = best.front().phi;
  result.psi = best.front().psi;
  result.ranked = std::move(best);
  return result;
}

namespace {

bool within_threshold(const Vec3& a, const Vec3& b, const Config& cfg) {
  return std::hypot(a.x() - b.x(), a.y() - b.y()) <= cfg.match_threshold_m;
}

}  // namespace

int rank_of_truth(const MatchResult& result, std::span<const Place> places, const Vec3& truth, const Config& cfg) {
  std::unordered_map<std::uint32_t, Vec3> pos;
  for (const Place& p : places) pos.emplace(p.id, p.position);
  for (std::size_t i = 0; i < result.ranked.size(); ++i) {
    auto it = pos.find(result.ranked[i].place_id);
    if (it != pos.end() && within_threshold(it->second, truth, cfg)) return static_cast<int>(i) + 1;
  }
  return 0;
}

double recall_at_k(std::span<const MatchResult> results, std::span<const Place> places,
                   std::span<const GroundTruth> gt, int k, const Config& cfg) {
  if (results.empty()) return 0.0;
  std::unordered_map<std::uint32_t, Vec3> truth;
  for (const GroundTruth& g : gt) truth.emplace(g.query_id, g.position);
  std::size_t correct = 0;
  for (const MatchResult& r : results) {
    auto it = truth.find(r.query_id);
    if (it == truth.end()) throw DataError("recall_at_k: no ground truth for query " + std::to_string(r.query_id));
    const int rank = rank_of_truth(r, places, it->second, cfg);
    if (rank >= 1 && rank <= k) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(results.size());
}

}  // namespace xpr
