// Training objective: contrastive + lambda * semantic consistency + segmentation,
// with analytic gradients, and a deterministic gradient-descent trainer.
#pragma once

#include "xpr/aggregation.hpp"
#include "xpr/model.hpp"
#include "xpr/projection.hpp"
#include "xpr/viewpoints.hpp"

#include <span>

namespace xpr {

struct ContrastiveResult {
  double loss = 0.0;
  std::vector<double> d_anchor;
  std::vector<std::vector<double>> d_positives;
  std::vector<std::vector<double>> d_negatives;
};

/// Triplet: mean over (p, n) of max(0, margin - phi(a,p) + phi(a,n)).
/// InfoNCE: mean over positives of -log softmax_tau of phi(a,p) against {p} + negatives.
/// phi is the dot product of unit descriptors. Throws if either set is empty.
ContrastiveResult contrastive_loss(const GlobalDescriptor& anchor, std::span<const GlobalDescriptor> positives,
                                   std::span<const GlobalDescriptor> negatives, const Config& cfg);

/// Per-class mean feature over valid cells of that class.
struct SemanticFeatureSet {
  int n_classes = 0;
  int channels = 0;
  std::vector<double> means;       // n_classes x channels
  std::vector<int> counts;         // cells contributing to each mean
  std::vector<std::uint8_t> present;

  const double* mean(int c) const { return means.data() + static_cast<std::size_t>(c) * channels; }
};

SemanticFeatureSet semantic_features(const LocalFeatureMap& feat, const SemanticImage& labels, int n_classes);

struct SemanticLossResult {
  double loss = 0.0;
  std::vector<double> d_rgb;    // n_classes x channels
  std::vector<double> d_lidar;  // n_classes x channels
  int shared_classes = 0;
};

/// Squared Euclidean distance between class means, summed over classes >= 1
/// present in both sets and divided by their number. No shared class gives 0.
SemanticLossResult semantic_consistency_loss(const SemanticFeatureSet& rgb, const SemanticFeatureSet& lidar,
                                             const Config& cfg);

struct SegmentationResult {
  double loss = 0.0;
  std::vector<double> d_logits;
  std::size_t cells = 0;
};

/// Mean softmax cross-entropy over cells whose ground-truth label is not void.
SegmentationResult segmentation_loss(std::span<const double> logits, const SemanticImage& gt, int n_classes);

/// Map-side training view: fixed hybrid features of one viewpoint render.
struct MapView {
  LocalFeatureMap features;
  SemanticImage semantics;
  LocalFeatureMap window_features;  // query-frustum columns
  SemanticImage window_semantics;
  std::vector<double> histogram;
};

MapView make_map_view(const ViewRender& render, const Config& cfg);

struct TrainSample {
  const QueryObservation* anchor = nullptr;  // carries the ground-truth labels
  std::vector<const MapView*> positives;
  std::vector<const MapView*> negatives;
  std::vector<double> context;  // semantic context for the attention gate
};

using TrainBatch = std::vector<TrainSample>;

struct LossReport {
  double l_contrastive = 0.0;
  double l_sem = 0.0;
  double l_seg = 0.0;
  double l_total = 0.0;
  ModelParams grads;
};

/// Batch mean of every term and the gradient of l_total w.r.t. all trainable parameters.
LossReport total_loss(const TrainBatch& batch, const ModelParams& params, const Config& cfg);

struct TrainingPlace {
  std::uint32_t place_id = 0;
  Vec3 position = Vec3::Zero();
  std::vector<MapView> views;  // one per viewpoint, anchor-relative yaw k * 2pi / N_V
};

struct TrainingQuery {
  QueryObservation obs;
  std::size_t place = 0;  // index into TrainingSet::places
  double heading = 0.0;   // relative to the place anchor
};

struct TrainingSet {
  std::vector<TrainingPlace> places;
  std::vector<TrainingQuery> queries;
  std::vector<double> context;  // database-average histogram, the same context used at query time
};

/// Mean of every view histogram, in place then viewpoint order.
std::vector<double> mean_view_histogram(const std::vector<TrainingPlace>& places, int n_classes);

struct EpochRecord {
  int epoch = 0;
  double l_contrastive = 0.0;
  double l_sem = 0.0;
  double l_seg = 0.0;
  double l_total = 0.0;
};

struct TrainOptions {
  int epochs = 10;
  double lr = 1e-2;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(int epoch)
      : Error("training diverged: non-finite loss in epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Seeded mini-batch gradient descent; batches are drawn from cfg.seed, one
/// positive (nearest viewpoint) and cfg.negatives_per_anchor negatives per anchor.
TrainResult train(const TrainingSet& data, const ModelParams& init, const Config& cfg, const TrainOptions& options);

/// Assembles a batch from the training set, as the trainer does.
TrainBatch make_batch(const TrainingSet& data, std::span<const std::size_t> query_ids, const Config& cfg, Rng& rng);

}  // namespace xpr
