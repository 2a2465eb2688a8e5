#include "xpr/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace xpr {

std::size_t LocalFeatureMap::valid_cells() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void QueryObservation::validate(const Config& cfg) const {
  const auto cells = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  if (rows <= 0 || cols <= 0 || in_channels <= 0) throw DataError("query observation: empty shape");
  if (raw.size() != cells * static_cast<std::size_t>(in_channels)) {
    throw DataError("query observation: raw buffer does not match rows x cols x channels");
  }
  if (valid.size() != cells) throw DataError("query observation: validity mask has wrong size");
  if (!gt_labels.data.empty()) {
    if (!gt_labels.same_shape(rows, cols)) throw DataError("query observation: label grid shape mismatch");
    for (std::uint8_t l : gt_labels.data) {
      if (l >= cfg.n_classes) throw DataError("query observation: label exceeds n_classes");
    }
  }
}

EncoderParams EncoderParams::zeros(int in_channels, int channels, int n_classes) {
  EncoderParams p;
  p.in_channels = in_channels;
  p.channels = channels;
  p.n_classes = n_classes;
  p.rgb_proj.assign(static_cast<std::size_t>(in_channels) * channels, 0.0);
  p.rgb_bias.assign(static_cast<std::size_t>(channels), 0.0);
  p.seg_head.assign(static_cast<std::size_t>(channels) * n_classes, 0.0);
  p.seg_bias.assign(static_cast<std::size_t>(n_classes), 0.0);
  p.desc_proj.assign(static_cast<std::size_t>(channels) * channels, 0.0);
  return p;
}

QueryEncoding encode_query(const QueryObservation& obs, const EncoderParams& params) {
  if (obs.in_channels != params.in_channels) throw DataError("encode_query: input channel count mismatch");
  const auto cells = static_cast<std::size_t>(obs.rows) * static_cast<std::size_t>(obs.cols);
  if (obs.raw.size() != cells * obs.in_channels || obs.valid.size() != cells) {
    throw DataError("encode_query: observation buffers do not match its shape");
  }
  for (std::size_t i = 0; i < obs.raw.size(); ++i) {
    if (!std::isfinite(obs.raw[i])) throw DataError("encode_query: non-finite input at element " + std::to_string(i));
  }

  const int cin = params.in_channels;
  const int ch = params.channels;
  const int ns = params.n_classes;
  QueryEncoding enc;
  enc.hidden = LocalFeatureMap(obs.rows, obs.cols, ch);
  enc.features = LocalFeatureMap(obs.rows, obs.cols, ch);
  enc.logits.assign(cells * ns, 0.0);
  enc.predicted = SemanticImage(obs.rows, obs.cols, 0);

  for (std::size_t i = 0; i < cells; ++i) {
    if (!obs.valid[i]) continue;
    enc.hidden.mask[i] = 1;
    enc.features.mask[i] = 1;
    const double* x = obs.raw.data() + i * cin;
    double* h = enc.hidden.cell(i);
    for (int c = 0; c < ch; ++c) {
      double z = params.rgb_bias[c];
      for (int k = 0; k < cin; ++k) z += x[k] * params.rgb_proj[k * ch + c];
      h[c] = std::tanh(z);
    }
    double* f = enc.features.cell(i);
    for (int c = 0; c < ch; ++c) {
      double v = 0.0;
      for (int k = 0; k < ch; ++k) v += h[k] * params.desc_proj[k * ch + c];
      f[c] = v;
    }
    double* logit = enc.logits.data() + i * ns;
    int best = 0;
    for (int s = 0; s < ns; ++s) {
      double v = params.seg_bias[s];
      for (int k = 0; k < ch; ++k) v += h[k] * params.seg_head[k * ns + s];
      logit[s] = v;
      if (v > logit[best]) best = s;
    }
    enc.predicted.data[i] = static_cast<std::uint8_t>(best);
  }
  return enc;
}

void encode_query_backward(const QueryObservation& obs, const EncoderParams& params, const QueryEncoding& enc,
                           const std::vector<double>& d_features, const std::vector<double>* d_logits,
                           EncoderParams& grads) {
  const int cin = params.in_channels;
  const int ch = params.channels;
  const int ns = params.n_classes;
  std::vector<double> dh(static_cast<std::size_t>(ch));
  for (std::size_t i = 0; i < enc.hidden.cells(); ++i) {
    if (!enc.hidden.mask[i]) continue;
    const double* h = enc.hidden.cell(i);
    const double* df = d_features.data() + i * ch;
    std::fill(dh.begin(), dh.end(), 0.0);
    for (int k = 0; k < ch; ++k) {
      for (int c = 0; c < ch; ++c) {
        grads.desc_proj[k * ch + c] += h[k] * df[c];
        dh[k] += params.desc_proj[k * ch + c] * df[c];
      }
    }
    if (d_logits != nullptr) {
      const double* dl = d_logits->data() + i * ns;
      for (int s = 0; s < ns; ++s) {
        if (dl[s] == 0.0) continue;
        grads.seg_bias[s] += dl[s];
        for (int k = 0; k < ch; ++k) {
          grads.seg_head[k * ns + s] += h[k] * dl[s];
          dh[k] += params.seg_head[k * ns + s] * dl[s];
        }
      }
    }
    const double* x = obs.raw.data() + i * cin;
    for (int c = 0; c < ch; ++c) {
      const double dz = dh[c] * (1.0 - h[c] * h[c]);
      grads.rgb_bias[c] += dz;
      for (int k = 0; k < cin; ++k) grads.rgb_proj[k * ch + c] += x[k] * dz;
    }
  }
}

double normalized_depth(double depth, const Config& cfg) {
  return std::clamp(depth / cfg.max_range_m, 0.0, 1.0);
}

LocalFeatureMap encode_lidar_local(const RangeImage& range, const SemanticImage& sem, const Config& cfg) {
  if (!sem.same_shape(range.rows(), range.cols())) throw DataError("encode_lidar_local: image shapes differ");
  LocalFeatureMap out(range.rows(), range.cols(), feature_channels(cfg));
  for (std::size_t i = 0; i < out.cells(); ++i) {
    const double depth = range.depth.data[i];
    if (depth <= 0.0) continue;
    const std::uint8_t label = sem.data[i];
    if (label >= cfg.n_classes) throw DataError("encode_lidar_local: label exceeds n_classes");
    out.mask[i] = 1;
    double* f = out.cell(i);
    f[0] = normalized_depth(depth, cfg);
    const Vec3& n = range.normals.data[i];
    f[1] = n.x();
    f[2] = n.y();
    f[3] = n.z();
    f[4 + label] = 1.0;
  }
  return out;
}

}  // namespace xpr
