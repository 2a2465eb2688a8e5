#include "xpr/aggregation.hpp"

#include <algorithm>
#include <cmath>

namespace xpr {

namespace {

constexpr double kNormEpsilon = 1e-12;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> context_projection(const AttentionParams& params, const std::vector<double>& context) {
  std::vector<double> q(static_cast<std::size_t>(params.channels), 0.0);
  for (int c = 0; c < params.channels; ++c) {
    for (int s = 0; s < params.n_classes; ++s) q[c] += params.bilinear[c * params.n_classes + s] * context[s];
  }
  return q;
}

}  // namespace

GlobalDescriptor netvlad(const LocalFeatureMap& feat, const NetVladParams& params, NetVladTrace* trace) {
  if (feat.channels != params.channels) throw DataError("netvlad: feature channel count does not match parameters");
  const int kc = params.clusters;
  const int ch = params.channels;
  const std::size_t cells = feat.cells();

  NetVladTrace local;
  NetVladTrace& t = trace != nullptr ? *trace : local;
  t.assignment.assign(cells * kc, 0.0);
  t.residual.assign(static_cast<std::size_t>(kc) * ch, 0.0);
  t.residual_norm.assign(static_cast<std::size_t>(kc), 0.0);
  t.normalized.assign(static_cast<std::size_t>(kc) * ch, 0.0);
  t.projected.assign(static_cast<std::size_t>(params.out_dim), 0.0);
  t.projected_norm = 0.0;

  GlobalDescriptor out;
  out.values.assign(static_cast<std::size_t>(params.out_dim), 0.0);

  std::vector<double> mass(static_cast<std::size_t>(kc), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!feat.mask[i]) continue;
    any = true;
    const double* x = feat.cell(i);
    double* a = t.assignment.data() + i * kc;
    double top = -INFINITY;
    for (int k = 0; k < kc; ++k) {
      double s = params.assign_b[k];
      for (int c = 0; c < ch; ++c) s += params.assign_w[k * ch + c] * x[c];
      a[k] = s;
      top = std::max(top, s);
    }
    double z = 0.0;
    for (int k = 0; k < kc; ++k) {
      a[k] = std::exp(a[k] - top);
      z += a[k];
    }
    for (int k = 0; k < kc; ++k) {
      a[k] /= z;
      mass[k] += a[k];
      double* v = t.residual.data() + k * ch;
      for (int c = 0; c < ch; ++c) v[c] += a[k] * x[c];
    }
  }
  if (!any) {
    out.empty = true;
    return out;
  }
  // Sum of a_k(x) (x - c_k) = sum a_k(x) x - (sum a_k(x)) c_k.
  for (int k = 0; k < kc; ++k) {
    double* v = t.residual.data() + k * ch;
    double sq = 0.0;
    for (int c = 0; c < ch; ++c) {
      v[c] -= mass[k] * params.centroids[k * ch + c];
      sq += v[c] * v[c];
    }
    t.residual_norm[k] = std::sqrt(sq);
    if (t.residual_norm[k] > kNormEpsilon) {
      for (int c = 0; c < ch; ++c) t.normalized[k * ch + c] = v[c] / t.residual_norm[k];
    }
  }
  const std::size_t flat = static_cast<std::size_t>(kc) * ch;
  double sq = 0.0;
  for (int d = 0; d < params.out_dim; ++d) {
    const double* row = params.projection.data() + d * flat;
    double y = 0.0;
    for (std::size_t j = 0; j < flat; ++j) y += row[j] * t.normalized[j];
    t.projected[d] = y;
    sq += y * y;
  }
  t.projected_norm = std::sqrt(sq);
  if (t.projected_norm <= kNormEpsilon) {
    out.empty = true;
    return out;
  }
  for (int d = 0; d < params.out_dim; ++d) out.values[d] = t.projected[d] / t.projected_norm;
  return out;
}

void netvlad_backward(const LocalFeatureMap& feat, const NetVladParams& params, const NetVladTrace& trace,
                      const std::vector<double>& d_descriptor, std::vector<double>* d_features,
                      NetVladParams& grads) {
  const int kc = params.clusters;
  const int ch = params.channels;
  const std::size_t flat = static_cast<std::size_t>(kc) * ch;
  if (d_features != nullptr) d_features->assign(feat.values.size(), 0.0);
  if (trace.projected_norm <= kNormEpsilon) return;

  // Final L2 normalization: dy = (g - D (D . g)) / |y|.
  std::vector<double> dy(static_cast<std::size_t>(params.out_dim));
  double dot = 0.0;
  for (int d = 0; d < params.out_dim; ++d) dot += trace.projected[d] * d_descriptor[d];
  dot /= trace.projected_norm;
  for (int d = 0; d < params.out_dim; ++d) {
    dy[d] = (d_descriptor[d] - trace.projected[d] / trace.projected_norm * dot) / trace.projected_norm;
  }
  std::vector<double> du(flat, 0.0);
  for (int d = 0; d < params.out_dim; ++d) {
    const double* row = params.projection.data() + d * flat;
    for (std::size_t j = 0; j < flat; ++j) du[j] += row[j] * dy[d];
  }
  // Intra-normalization.
  std::vector<double> dv(flat, 0.0);
  for (int k = 0; k < kc; ++k) {
    const double norm = trace.residual_norm[k];
    if (norm <= kNormEpsilon) continue;
    const double* u = trace.normalized.data() + k * ch;
    double proj = 0.0;
    for (int c = 0; c < ch; ++c) proj += u[c] * du[k * ch + c];
    for (int c = 0; c < ch; ++c) dv[k * ch + c] = (du[k * ch + c] - u[c] * proj) / norm;
  }

  std::vector<double> mass(static_cast<std::size_t>(kc), 0.0);
  std::vector<double> da(static_cast<std::size_t>(kc));
  for (std::size_t i = 0; i < feat.cells(); ++i) {
    if (!feat.mask[i]) continue;
    const double* x = feat.cell(i);
    const double* a = trace.assignment.data() + i * kc;
    double weighted = 0.0;
    for (int k = 0; k < kc; ++k) {
      mass[k] += a[k];
      double s = 0.0;
      for (int c = 0; c < ch; ++c) s += dv[k * ch + c] * (x[c] - params.centroids[k * ch + c]);
      da[k] = s;
      weighted += a[k] * s;
    }
    double* dx = d_features != nullptr ? d_features->data() + i * ch : nullptr;
    for (int k = 0; k < kc; ++k) {
      const double dlogit = a[k] * (da[k] - weighted);
      grads.assign_b[k] += dlogit;
      for (int c = 0; c < ch; ++c) {
        grads.assign_w[k * ch + c] += dlogit * x[c];
        if (dx != nullptr) dx[c] += a[k] * dv[k * ch + c] + dlogit * params.assign_w[k * ch + c];
      }
    }
  }
  for (int k = 0; k < kc; ++k) {
    for (int c = 0; c < ch; ++c) grads.centroids[k * ch + c] -= mass[k] * dv[k * ch + c];
  }
}

LocalFeatureMap semantic_attention(const LocalFeatureMap& feat, const std::vector<double>& context,
                                   const AttentionParams& params, std::vector<double>* weights) {
  if (static_cast<int>(context.size()) != params.n_classes) {
    throw DataError("semantic_attention: context length does not match n_classes");
  }
  if (feat.channels != params.channels) throw DataError("semantic_attention: channel count mismatch");
  double total = 0.0;
  for (double p : context) total += p;
  if (std::abs(total - 1.0) > 1e-6) throw DataError("semantic_attention: context is not normalized");

  const std::vector<double> q = context_projection(params, context);
  LocalFeatureMap out = feat;
  if (weights != nullptr) weights->assign(feat.cells(), 0.0);
  for (std::size_t i = 0; i < feat.cells(); ++i) {
    if (!feat.mask[i]) continue;
    const double* f = feat.cell(i);
    double s = 0.0;
    for (int c = 0; c < feat.channels; ++c) s += f[c] * q[c];
    const double a = sigmoid(params.gain * s);
    if (weights != nullptr) (*weights)[i] = a;
    double* o = out.cell(i);
    for (int c = 0; c < feat.channels; ++c) o[c] = a * f[c];
  }
  return out;
}

void semantic_attention_backward(const LocalFeatureMap& feat, const std::vector<double>& context,
                                 const AttentionParams& params, const std::vector<double>& weights,
                                 const std::vector<double>& d_output, std::vector<double>& d_features,
                                 AttentionParams& grads) {
  const int ch = feat.channels;
  const std::vector<double> q = context_projection(params, context);
  std::vector<double> dq(static_cast<std::size_t>(ch), 0.0);
  d_features.assign(feat.values.size(), 0.0);
  for (std::size_t i = 0; i < feat.cells(); ++i) {
    if (!feat.mask[i]) continue;
    const double* f = feat.cell(i);
    const double* g = d_output.data() + i * ch;
    const double a = weights[i];
    double da = 0.0;
    double s = 0.0;
    for (int c = 0; c < ch; ++c) {
      da += g[c] * f[c];
      s += f[c] * q[c];
    }
    const double dscore = da * a * (1.0 - a);
    grads.gain += dscore * s;
    double* df = d_features.data() + i * ch;
    for (int c = 0; c < ch; ++c) {
      df[c] = a * g[c] + dscore * params.gain * q[c];
      dq[c] += dscore * params.gain * f[c];
    }
  }
  for (int c = 0; c < ch; ++c) {
    for (int s = 0; s < params.n_classes; ++s) grads.bilinear[c * params.n_classes + s] += dq[c] * context[s];
  }
}

std::pair<GlobalDescriptor, SemanticImage> describe_query(const QueryObservation& obs, const EncoderParams& enc,
                                                          const AttentionParams& att, const NetVladParams& vlad,
                                                          const std::vector<double>& context) {
  QueryEncoding encoded = encode_query(obs, enc);
  const LocalFeatureMap attended = semantic_attention(encoded.features, context, att);
  return {netvlad(attended, vlad), std::move(encoded.predicted)};
}

GlobalDescriptor describe_viewpoint(const RangeImage& range, const SemanticImage& sem, const NetVladParams& vlad,
                                    const Config& cfg) {
  return netvlad(encode_lidar_local(range, sem, cfg), vlad);
}

}  // namespace xpr
