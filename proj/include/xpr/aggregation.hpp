// NetVLAD aggregation and the semantic attention gate applied to query features.
#pragma once

#include "xpr/core.hpp"
#include "xpr/encoder.hpp"

#include <utility>

namespace xpr {

struct GlobalDescriptor {
  std::vector<double> values;
  bool empty = false;  // set when the input held nothing to aggregate; values are all zero

  friend bool operator==(const GlobalDescriptor&, const GlobalDescriptor&) = default;
};

struct NetVladParams {
  int clusters = 0;
  int channels = 0;
  int out_dim = 0;
  std::vector<double> centroids;   // clusters x channels
  std::vector<double> assign_w;    // clusters x channels
  std::vector<double> assign_b;    // clusters
  std::vector<double> projection;  // out_dim x (clusters * channels), fixed

  friend bool operator==(const NetVladParams&, const NetVladParams&) = default;
};

struct AttentionParams {
  int channels = 0;
  int n_classes = 0;
  std::vector<double> bilinear;  // channels x n_classes
  double gain = 1.0;

  friend bool operator==(const AttentionParams&, const AttentionParams&) = default;
};

/// Intermediate values of a NetVLAD forward pass, kept for the backward pass.
struct NetVladTrace {
  std::vector<double> assignment;  // cells x clusters (zero on masked cells)
  std::vector<double> residual;    // clusters x channels, before intra-normalization
  std::vector<double> residual_norm;
  std::vector<double> normalized;  // clusters x channels
  std::vector<double> projected;   // out_dim, before the final normalization
  double projected_norm = 0.0;
};

/// Soft-assignment residual pooling; intra-normalizes each cluster, projects to
/// out_dim and L2-normalizes. Empty masks give an all-zero descriptor marked empty.
GlobalDescriptor netvlad(const LocalFeatureMap& feat, const NetVladParams& params, NetVladTrace* trace = nullptr);

/// Gradient of a loss w.r.t. the features and the trainable NetVLAD parameters,
/// given its gradient w.r.t. the descriptor. `d_features` may be null.
void netvlad_backward(const LocalFeatureMap& feat, const NetVladParams& params, const NetVladTrace& trace,
                      const std::vector<double>& d_descriptor, std::vector<double>* d_features,
                      NetVladParams& grads);

/// Per-cell sigmoid gate from the bilinear score of the cell feature against the
/// class-probability context. Throws DataError unless the context sums to 1.
LocalFeatureMap semantic_attention(const LocalFeatureMap& feat, const std::vector<double>& context,
                                   const AttentionParams& params, std::vector<double>* weights = nullptr);

void semantic_attention_backward(const LocalFeatureMap& feat, const std::vector<double>& context,
                                 const AttentionParams& params, const std::vector<double>& weights,
                                 const std::vector<double>& d_output, std::vector<double>& d_features,
                                 AttentionParams& grads);

/// encode_query -> semantic_attention -> netvlad; also returns the predicted labels.
std::pair<GlobalDescriptor, SemanticImage> describe_query(const QueryObservation& obs, const EncoderParams& enc,
                                                          const AttentionParams& att, const NetVladParams& vlad,
                                                          const std::vector<double>& context);

/// encode_lidar_local -> netvlad. Map descriptors are not attended.
GlobalDescriptor describe_viewpoint(const RangeImage& range, const SemanticImage& sem, const NetVladParams& vlad,
                                    const Config& cfg);

}  // namespace xpr
