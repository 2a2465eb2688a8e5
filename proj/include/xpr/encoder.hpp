// Local feature maps for both modalities.
//
// Query branch: a single affine + tanh layer stands in for the image backbone,
// followed by a two-branch multi-task head (descriptor projection and per-cell
// segmentation logits). Map branch: depth, normal and one-hot semantic channels
// concatenated per range-image cell.
#pragma once

#include "xpr/core.hpp"
#include "xpr/projection.hpp"

namespace xpr {

struct LocalFeatureMap {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  std::vector<double> values;       // rows * cols * channels, cell-major
  std::vector<std::uint8_t> mask;   // rows * cols, 1 = observed

  LocalFeatureMap() = default;
  LocalFeatureMap(int r, int c, int ch)
      : rows(r), cols(c), channels(ch),
        values(static_cast<std::size_t>(r) * c * ch, 0.0),
        mask(static_cast<std::size_t>(r) * c, 0) {}

  std::size_t cells() const noexcept { return mask.size(); }
  double* cell(std::size_t i) { return values.data() + i * channels; }
  const double* cell(std::size_t i) const { return values.data() + i * channels; }
  std::size_t valid_cells() const;

  friend bool operator==(const LocalFeatureMap&, const LocalFeatureMap&) = default;
};

/// Camera-like query observation: raw channels are normalized depth, normal (3)
/// and three appearance channels.
struct QueryObservation {
  int rows = 0;
  int cols = 0;
  int in_channels = kQueryInputChannels;
  std::vector<double> raw;          // rows * cols * in_channels
  std::vector<std::uint8_t> valid;  // rows * cols
  SemanticImage gt_labels;          // supervision only

  void validate(const Config& cfg) const;
  friend bool operator==(const QueryObservation&, const QueryObservation&) = default;
};

struct EncoderParams {
  int in_channels = 0;
  int channels = 0;
  int n_classes = 0;
  std::vector<double> rgb_proj;   // in_channels x channels
  std::vector<double> rgb_bias;   // channels
  std::vector<double> seg_head;   // channels x n_classes
  std::vector<double> seg_bias;   // n_classes
  std::vector<double> desc_proj;  // channels x channels

  static EncoderParams zeros(int in_channels, int channels, int n_classes);
  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

struct QueryEncoding {
  LocalFeatureMap hidden;    // tanh activations shared by both heads
  LocalFeatureMap features;  // descriptor-branch output
  std::vector<double> logits;  // rows * cols * n_classes; zero on masked cells
  SemanticImage predicted;     // per-cell argmax, lowest id on ties
};

/// Throws DataError on non-finite input or inconsistent shapes.
QueryEncoding encode_query(const QueryObservation& obs, const EncoderParams& params);

/// Backpropagates gradients on features and logits into encoder parameters.
void encode_query_backward(const QueryObservation& obs, const EncoderParams& params, const QueryEncoding& enc,
                           const std::vector<double>& d_features, const std::vector<double>* d_logits,
                           EncoderParams& grads);

/// Per-cell [depth / max_range (clamped), normal, one-hot label]; empty cells masked.
LocalFeatureMap encode_lidar_local(const RangeImage& range, const SemanticImage& sem, const Config& cfg);

double normalized_depth(double depth, const Config& cfg);

}  // namespace xpr
