#include "xpr/losses.hpp"

#include "xpr/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xpr {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void add_scaled(std::vector<double>& out, double scale, const std::vector<double>& v) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * v[i];
}

LocalFeatureMap crop_columns(const LocalFeatureMap& feat, ColumnWindow window) {
  LocalFeatureMap out(feat.rows, window.width, feat.channels);
  for (int r = 0; r < feat.rows; ++r) {
    for (int c = 0; c < window.width; ++c) {
      const std::size_t src = static_cast<std::size_t>(r) * feat.cols + (window.start + c) % feat.cols;
      const std::size_t dst = static_cast<std::size_t>(r) * window.width + c;
      out.mask[dst] = feat.mask[src];
      std::copy_n(feat.cell(src), feat.channels, out.cell(dst));
    }
  }
  return out;
}

}  // namespace

ContrastiveResult contrastive_loss(const GlobalDescriptor& anchor, std::span<const GlobalDescriptor> positives,
                                   std::span<const GlobalDescriptor> negatives, const Config& cfg) {
  if (positives.empty() || negatives.empty()) {
    throw DataError("contrastive_loss: need at least one positive and one negative");
  }
  const std::size_t dim = anchor.values.size();
  ContrastiveResult out;
  out.d_anchor.assign(dim, 0.0);
  out.d_positives.assign(positives.size(), std::vector<double>(dim, 0.0));
  out.d_negatives.assign(negatives.size(), std::vector<double>(dim, 0.0));

  std::vector<double> phi_neg(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) phi_neg[j] = dot(anchor.values, negatives[j].values);

  if (cfg.loss_kind == LossKind::kTriplet) {
    const double w = 1.0 / static_cast<double>(positives.size() * negatives.size());
    for (std::size_t i = 0; i < positives.size(); ++i) {
      const double phi_pos = dot(anchor.values, positives[i].values);
      for (std::size_t j = 0; j < negatives.size(); ++j) {
        const double hinge = cfg.margin - phi_pos + phi_neg[j];
        if (hinge <= 0.0) continue;
        out.loss += w * hinge;
        add_scaled(out.d_anchor, -w, positives[i].values);
        add_scaled(out.d_anchor, w, negatives[j].values);
        add_scaled(out.d_positives[i], -w, anchor.values);
        add_scaled(out.d_negatives[j], w, anchor.values);
      }
    }
    return out;
  }

  const double tau = cfg.temperature;
  const double w = 1.0 / static_cast<double>(positives.size());
  std::vector<double> logits(negatives.size() + 1);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const double phi_pos = dot(anchor.values, positives[i].values);
    logits[0] = phi_pos / tau;
    for (std::size_t j = 0; j < negatives.size(); ++j) logits[j + 1] = phi_neg[j] / tau;
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    const double lse = top + std::log(z);
    out.loss += w * (lse - logits[0]);
    // d/dphi_x = (softmax_x - [x == p]) / tau.
    const double g_pos = w * (std::exp(logits[0] - lse) - 1.0) / tau;
    add_scaled(out.d_anchor, g_pos, positives[i].values);
    add_scaled(out.d_positives[i], g_pos, anchor.values);
    for (std::size_t j = 0; j < negatives.size(); ++j) {
      const double g = w * std::exp(logits[j + 1] - lse) / tau;
      add_scaled(out.d_anchor, g, negatives[j].values);
      add_scaled(out.d_negatives[j], g, anchor.values);
    }
  }
  return out;
}

SemanticFeatureSet semantic_features(const LocalFeatureMap& feat, const SemanticImage& labels, int n_classes) {
  if (!labels.same_shape(feat.rows, feat.cols)) throw DataError("semantic_features: label grid shape mismatch");
  SemanticFeatureSet set;
  set.n_classes = n_classes;
  set.channels = feat.channels;
  set.means.assign(static_cast<std::size_t>(n_classes) * feat.channels, 0.0);
  set.counts.assign(static_cast<std::size_t>(n_classes), 0);
  set.present.assign(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < feat.cells(); ++i) {
    if (!feat.mask[i]) continue;
    const int c = labels.data[i];
    if (c >= n_classes) throw DataError("semantic_features: label exceeds n_classes");
    ++set.counts[c];
    const double* x = feat.cell(i);
    double* m = set.means.data() + static_cast<std::size_t>(c) * feat.channels;
    for (int k = 0; k < feat.channels; ++k) m[k] += x[k];
  }
  for (int c = 0; c < n_classes; ++c) {
    if (set.counts[c] == 0) continue;
    set.present[c] = 1;
    double* m = set.means.data() + static_cast<std::size_t>(c) * feat.channels;
    for (int k = 0; k < feat.channels; ++k) m[k] /= set.counts[c];
  }
  return set;
}

SemanticLossResult semantic_consistency_loss(const SemanticFeatureSet& rgb, const SemanticFeatureSet& lidar,
                                             const Config& cfg) {
  if (rgb.n_classes != cfg.n_classes || lidar.n_classes != cfg.n_classes || rgb.channels != lidar.channels) {
    throw DataError("semantic_consistency_loss: feature sets disagree in shape");
  }
  SemanticLossResult out;
  out.d_rgb.assign(rgb.means.size(), 0.0);
  out.d_lidar.assign(lidar.means.size(), 0.0);
  for (int c = 1; c < cfg.n_classes; ++c) {
    if (rgb.present[c] && lidar.present[c]) ++out.shared_classes;
  }
  if (out.shared_classes == 0) return out;
  const double w = 1.0 / out.shared_classes;
  const int ch = rgb.channels;
  for (int c = 1; c < cfg.n_classes; ++c) {
    if (!(rgb.present[c] && lidar.present[c])) continue;
    const double* a = rgb.mean(c);
    const double* b = lidar.mean(c);
    for (int k = 0; k < ch; ++k) {
      const double diff = a[k] - b[k];
      out.loss += w * diff * diff;
      out.d_rgb[c * ch + k] = 2.0 * w * diff;
      out.d_lidar[c * ch + k] = -2.0 * w * diff;
    }
  }
  return out;
}

SegmentationResult segmentation_loss(std::span<const double> logits, const SemanticImage& gt, int n_classes) {
  if (logits.size() != gt.size() * static_cast<std::size_t>(n_classes)) {
    throw DataError("segmentation_loss: logit grid does not match label grid");
  }
  SegmentationResult out;
  out.d_logits.assign(logits.size(), 0.0);
  for (std::uint8_t l : gt.data) out.cells += l != 0 ? 1 : 0;
  if (out.cells == 0) return out;
  const double w = 1.0 / static_cast<double>(out.cells);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int label = gt.data[i];
    if (label == 0) continue;
    if (label >= n_classes) throw DataError("segmentation_loss: label exceeds n_classes");
    const double* l = logits.data() + i * n_classes;
    const double top = *std::max_element(l, l + n_classes);
    double z = 0.0;
    for (int s = 0; s < n_classes; ++s) z += std::exp(l[s] - top);
    const double lse = top + std::log(z);
    out.loss += w * (lse - l[label]);
    double* d = out.d_logits.data() + i * n_classes;
    for (int s = 0; s < n_classes; ++s) d[s] = w * (std::exp(l[s] - lse) - (s == label ? 1.0 : 0.0));
  }
  return out;
}

MapView make_map_view(const ViewRender& render, const Config& cfg) {
  MapView v;
  v.features = encode_lidar_local(render.range, render.semantics, cfg);
  v.semantics = render.semantics;
  const ColumnWindow window = frustum_window(cfg);
  v.window_features = crop_columns(v.features, window);
  v.window_semantics = crop_columns(render.semantics, window);
  v.histogram = semantic_histogram(render.semantics, cfg);
  return v;
}

namespace {

struct SampleLoss {
  double contrastive = 0.0;
  double sem = 0.0;
  double seg = 0.0;
  ModelParams grads;
};

SampleLoss sample_loss(const TrainSample& sample, const ModelParams& params, const Config& cfg) {
  if (sample.anchor == nullptr) throw DataError("total_loss: sample without anchor");
  const QueryObservation& obs = *sample.anchor;
  SampleLoss out;
  out.grads = zero_grads(params);

  // Query forward.
  const QueryEncoding enc = encode_query(obs, params.enc);
  std::vector<double> gate;
  const LocalFeatureMap attended = semantic_attention(enc.features, sample.context, params.att, &gate);
  NetVladTrace q_trace;
  const GlobalDescriptor q_desc = netvlad(attended, params.vlad, &q_trace);
  if (q_desc.empty) throw DataError("total_loss: query produced an empty descriptor");

  // Map forward.
  const auto describe = [&](const std::vector<const MapView*>& views, std::vector<GlobalDescriptor>& descs,
                            std::vector<NetVladTrace>& traces) {
    descs.resize(views.size());
    traces.resize(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
      descs[i] = netvlad(views[i]->features, params.vlad, &traces[i]);
      if (descs[i].empty) throw DataError("total_loss: map view produced an empty descriptor");
    }
  };
  std::vector<GlobalDescriptor> pos_desc, neg_desc;
  std::vector<NetVladTrace> pos_trace, neg_trace;
  describe(sample.positives, pos_desc, pos_trace);
  describe(sample.negatives, neg_desc, neg_trace);

  const ContrastiveResult con = contrastive_loss(q_desc, pos_desc, neg_desc, cfg);
  out.contrastive = con.loss;

  // Map backward: features are fixed, only NetVLAD parameters receive gradient.
  for (std::size_t i = 0; i < pos_desc.size(); ++i) {
    netvlad_backward(sample.positives[i]->features, params.vlad, pos_trace[i], con.d_positives[i], nullptr,
                     out.grads.vlad);
  }
  for (std::size_t i = 0; i < neg_desc.size(); ++i) {
    netvlad_backward(sample.negatives[i]->features, params.vlad, neg_trace[i], con.d_negatives[i], nullptr,
                     out.grads.vlad);
  }

  // Query backward through NetVLAD and the attention gate.
  std::vector<double> d_attended;
  netvlad_backward(attended, params.vlad, q_trace, con.d_anchor, &d_attended, out.grads.vlad);
  std::vector<double> d_features;
  semantic_attention_backward(enc.features, sample.context, params.att, gate, d_attended, d_features,
                              out.grads.att);

  // Semantic consistency between pre-attention query features and the positive's visible window.
  if (!sample.positives.empty()) {
    const MapView& pos = *sample.positives.front();
    const SemanticFeatureSet rgb = semantic_features(enc.features, obs.gt_labels, cfg.n_classes);
    const SemanticFeatureSet lidar = semantic_features(pos.window_features, pos.window_semantics, cfg.n_classes);
    const SemanticLossResult sem = semantic_consistency_loss(rgb, lidar, cfg);
    out.sem = sem.loss;
    const int ch = enc.features.channels;
    for (std::size_t i = 0; i < enc.features.cells(); ++i) {
      if (!enc.features.mask[i]) continue;
      const int c = obs.gt_labels.data[i];
      if (!rgb.present[c]) continue;
      const double scale = cfg.lambda_sem / rgb.counts[c];
      for (int k = 0; k < ch; ++k) d_features[i * ch + k] += scale * sem.d_rgb[c * ch + k];
    }
  }

  const SegmentationResult seg = segmentation_loss(enc.logits, obs.gt_labels, params.enc.n_classes);
  out.seg = seg.loss;
  encode_query_backward(obs, params.enc, enc, d_features, &seg.d_logits, out.grads.enc);
  return out;
}

}  // namespace

LossReport total_loss(const TrainBatch& batch, const ModelParams& params, const Config& cfg) {
  if (batch.empty()) throw DataError("total_loss: empty batch");
  std::vector<SampleLoss> per_sample(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { per_sample[i] = sample_loss(batch[i], params, cfg); });

  LossReport report;
  report.grads = zero_grads(params);
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const SampleLoss& s : per_sample) {
    report.l_contrastive += w * s.contrastive;
    report.l_sem += w * s.sem;
    report.l_seg += w * s.seg;
    axpy(report.grads, w, s.grads);
  }
  report.l_total = report.l_contrastive + cfg.lambda_sem * report.l_sem + report.l_seg;
  return report;
}

std::vector<double> mean_view_histogram(const std::vector<TrainingPlace>& places, int n_classes) {
  std::vector<double> mean(static_cast<std::size_t>(n_classes), 0.0);
  std::size_t views = 0;
  for (const TrainingPlace& p : places) {
    for (const MapView& v : p.views) {
      for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += v.histogram[c];
      ++views;
    }
  }
  if (views == 0) return mean;
  for (double& m : mean) m /= static_cast<double>(views);
  return mean;
}

TrainBatch make_batch(const TrainingSet& data, std::span<const std::size_t> query_ids, const Config& cfg, Rng& rng) {
  TrainBatch batch;
  batch.reserve(query_ids.size());
  for (std::size_t qi : query_ids) {
    const TrainingQuery& q = data.queries.at(qi);
    const TrainingPlace& home = data.places.at(q.place);
    TrainSample s;
    s.anchor = &q.obs;
    const MapView* pos = &home.views.at(static_cast<std::size_t>(nearest_viewpoint(q.heading, cfg)));
    s.positives.push_back(pos);
    s.context = data.context;

    std::vector<std::size_t> far;
    for (std::size_t p = 0; p < data.places.size(); ++p) {
      const Vec3 d = data.places[p].position - home.position;
      if (std::hypot(d.x(), d.y()) > cfg.match_threshold_m) far.push_back(p);
    }
    if (far.empty()) throw DataError("make_batch: no place is far enough from the anchor to serve as a negative");
    for (int n = 0; n < cfg.negatives_per_anchor; ++n) {
      const TrainingPlace& other = data.places[far[rng.index(far.size())]];
      s.negatives.push_back(&other.views[rng.index(other.views.size())]);
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

TrainResult train(const TrainingSet& data, const ModelParams& init, const Config& cfg, const TrainOptions& options) {
  if (data.places.size() < 2) throw DataError("train: need at least two places");
  if (data.queries.empty()) throw DataError("train: no training queries");
  TrainResult result;
  result.params = init;
  const Rng root = Rng(cfg.seed).split(0x545241494eULL);
  std::vector<std::size_t> order(data.queries.size());

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    Rng rng = root.split(static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const TrainBatch batch =
          make_batch(data, std::span<const std::size_t>(order.data() + start, end - start), cfg, rng);
      const LossReport report = total_loss(batch, result.params, cfg);
      if (!std::isfinite(report.l_total)) throw TrainingDiverged(epoch);
      if (options.lr != 0.0) {
        axpy(result.params, -options.lr, report.grads);
        round_to_float(result.params);
      }
      rec.l_contrastive += report.l_contrastive;
      rec.l_sem += report.l_sem;
      rec.l_seg += report.l_seg;
      ++batches;
    }
    rec.l_contrastive /= static_cast<double>(batches);
    rec.l_sem /= static_cast<double>(batches);
    rec.l_seg /= static_cast<double>(batches);
    rec.l_total = rec.l_contrastive + cfg.lambda_sem * rec.l_sem + rec.l_seg;
    result.history.push_back(rec);
  }
  return result;
}

}  // namespace xpr
