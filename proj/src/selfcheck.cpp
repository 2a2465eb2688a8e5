#include "xpr/selfcheck.hpp"

#include "xpr/losses.hpp"
#include "xpr/matching.hpp"
#include "xpr/model.hpp"
#include "xpr/projection.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

namespace xpr {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::vector<double> random_unit(Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double sq = 0.0;
  for (double& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  for (double& x : v) x /= std::sqrt(sq);
  return v;
}

double corrupt(double analytic, const SelfCheckOptions& options) {
  return options.corrupt_gradients ? analytic * 1.05 + 1e-3 : analytic;
}

// Compares `analytic` against central differences of `f` over `x`, restoring x.
double fd_max_error(std::vector<double>& x, const std::vector<double>& analytic, const std::function<double()>& f,
                    const SelfCheckOptions& options) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + kFiniteDifferenceStep;
    const double up = f();
    x[i] = saved - kFiniteDifferenceStep;
    const double down = f();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * kFiniteDifferenceStep);
    worst = std::max(worst, gradient_relative_error(corrupt(analytic[i], options), numeric));
  }
  return worst;
}

CheckResult finish(std::string name, double error, double tolerance, Clock::time_point start) {
  CheckResult r;
  r.name = std::move(name);
  r.max_error = error;
  r.tolerance = tolerance;
  r.passed = std::isfinite(error) && error < tolerance;
  r.seconds = elapsed(start);
  return r;
}

Config toy_config(LossKind kind) {
  Config cfg;
  cfg.n_classes = 4;
  cfg.descriptor_dim = 8;
  cfg.netvlad_clusters = 3;
  cfg.range_rows = 3;
  cfg.range_cols = 8;
  cfg.n_viewpoints = 2;
  cfg.lambda_sem = 0.5;
  cfg.temperature = 0.5;
  cfg.loss_kind = kind;
  // Every hinge stays active because |phi| <= 1 for unit descriptors.
  cfg.margin = kind == LossKind::kTriplet ? 2.5 : cfg.margin;
  cfg.negatives_per_anchor = 2;
  return cfg;
}

CheckResult check_contrastive(const SelfCheckOptions& options, LossKind kind) {
  const auto start = Clock::now();
  const Config cfg = toy_config(kind);
  Rng rng = Rng(options.seed).split(kind == LossKind::kTriplet ? 11 : 12);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    GlobalDescriptor anchor{random_unit(rng, 6)};
    std::vector<GlobalDescriptor> pos{{random_unit(rng, 6)}, {random_unit(rng, 6)}};
    std::vector<GlobalDescriptor> neg{{random_unit(rng, 6)}, {random_unit(rng, 6)}, {random_unit(rng, 6)}};
    const ContrastiveResult res = contrastive_loss(anchor, pos, neg, cfg);
    const auto f = [&] { return contrastive_loss(anchor, pos, neg, cfg).loss; };
    worst = std::max(worst, fd_max_error(anchor.values, res.d_anchor, f, options));
    for (std::size_t i = 0; i < pos.size(); ++i) {
      worst = std::max(worst, fd_max_error(pos[i].values, res.d_positives[i], f, options));
    }
    for (std::size_t j = 0; j < neg.size(); ++j) {
      worst = std::max(worst, fd_max_error(neg[j].values, res.d_negatives[j], f, options));
    }
  }
  return finish(kind == LossKind::kTriplet ? "grad.contrastive_triplet" : "grad.contrastive_infonce", worst,
                kGradientTolerance, start);
}

LocalFeatureMap random_features(Rng& rng, int rows, int cols, int channels, double valid_fraction) {
  LocalFeatureMap f(rows, cols, channels);
  for (std::size_t i = 0; i < f.cells(); ++i) {
    if (i != 0 && rng.uniform() >= valid_fraction) continue;
    f.mask[i] = 1;
    for (int c = 0; c < channels; ++c) f.cell(i)[c] = rng.normal();
  }
  return f;
}

SemanticImage random_labels(Rng& rng, int rows, int cols, int n_classes) {
  SemanticImage s(rows, cols);
  for (auto& l : s.data) l = static_cast<std::uint8_t>(rng.index(static_cast<std::size_t>(n_classes)));
  return s;
}

CheckResult check_semantic(const SelfCheckOptions& options) {
  const auto start = Clock::now();
  const Config cfg = toy_config(LossKind::kInfoNce);
  Rng rng = Rng(options.seed).split(13);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    SemanticFeatureSet a = semantic_features(random_features(rng, 3, 4, 5, 0.8), random_labels(rng, 3, 4, 4), 4);
    SemanticFeatureSet b = semantic_features(random_features(rng, 3, 4, 5, 0.8), random_labels(rng, 3, 4, 4), 4);
    const SemanticLossResult res = semantic_consistency_loss(a, b, cfg);
    const auto f = [&] { return semantic_consistency_loss(a, b, cfg).loss; };
    worst = std::max(worst, fd_max_error(a.means, res.d_rgb, f, options));
    worst = std::max(worst, fd_max_error(b.means, res.d_lidar, f, options));
  }
  return finish("grad.semantic_consistency", worst, kGradientTolerance, start);
}

CheckResult check_segmentation(const SelfCheckOptions& options) {
  const auto start = Clock::now();
  Rng rng = Rng(options.seed).split(14);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const SemanticImage gt = random_labels(rng, 3, 4, 5);
    std::vector<double> logits(gt.size() * 5);
    for (double& l : logits) l = 2.0 * rng.normal();
    const SegmentationResult res = segmentation_loss(logits, gt, 5);
    const auto f = [&] { return segmentation_loss(logits, gt, 5).loss; };
    worst = std::max(worst, fd_max_error(logits, res.d_logits, f, options));
  }
  return finish("grad.segmentation", worst, kGradientTolerance, start);
}

// A toy map view built from a random range image, so its features follow the
// real hybrid layout.
MapView toy_view(Rng& rng, const Config& cfg) {
  ViewRender render;
  render.range = make_empty_range_image(cfg);
  render.semantics = SemanticImage(cfg.range_rows, cfg.range_cols);
  for (std::size_t i = 0; i < render.range.depth.size(); ++i) {
    if (rng.uniform() < 0.15) continue;
    render.range.depth.data[i] = rng.uniform(2.0, 60.0);
    Vec3 n(rng.normal(), rng.normal(), rng.normal());
    render.range.normals.data[i] = n.normalized();
    render.semantics.data[i] = static_cast<std::uint8_t>(1 + rng.index(static_cast<std::size_t>(cfg.n_classes - 1)));
  }
  return make_map_view(render, cfg);
}

QueryObservation toy_query(Rng& rng, const Config& cfg) {
  QueryObservation obs;
  obs.rows = 3;
  obs.cols = 4;
  obs.in_channels = kQueryInputChannels;
  obs.raw.assign(12 * kQueryInputChannels, 0.0);
  obs.valid.assign(12, 0);
  obs.gt_labels = SemanticImage(3, 4);
  for (std::size_t i = 0; i < 12; ++i) {
    if (i != 0 && rng.uniform() < 0.2) continue;
    obs.valid[i] = 1;
    for (int k = 0; k < kQueryInputChannels; ++k) obs.raw[i * kQueryInputChannels + k] = rng.normal();
    obs.gt_labels.data[i] = static_cast<std::uint8_t>(rng.index(static_cast<std::size_t>(cfg.n_classes)));
  }
  return obs;
}

CheckResult check_total(const SelfCheckOptions& options, LossKind kind) {
  const auto start = Clock::now();
  Config cfg = toy_config(kind);
  cfg.seed = options.seed;
  Rng rng = Rng(options.seed).split(kind == LossKind::kTriplet ? 15 : 16);
  ModelParams params = init_model(cfg);
  // Move away from the identity-like initialization so every path carries gradient.
  for_each_trainable(params, [&](std::string_view, std::span<double> t) {
    for (double& v : t) v += 0.3 * rng.normal();
  });

  std::vector<QueryObservation> queries;
  std::vector<MapView> views;
  for (int i = 0; i < 2; ++i) queries.push_back(toy_query(rng, cfg));
  for (int i = 0; i < 6; ++i) views.push_back(toy_view(rng, cfg));
  std::vector<double> context(static_cast<std::size_t>(cfg.n_classes), 0.0);
  for (int c = 1; c < cfg.n_classes; ++c) context[c] = 1.0 / (cfg.n_classes - 1);

  TrainBatch batch(2);
  for (int i = 0; i < 2; ++i) {
    batch[i].anchor = &queries[i];
    batch[i].positives = {&views[3 * i]};
    batch[i].negatives = {&views[3 * i + 1], &views[3 * i + 2]};
    batch[i].context = context;
  }

  const LossReport report = total_loss(batch, params, cfg);
  std::vector<double> analytic;
  for_each_trainable(report.grads, [&](std::string_view, std::span<const double> t) {
    analytic.insert(analytic.end(), t.begin(), t.end());
  });
  std::vector<double*> slots;
  for_each_trainable(params, [&](std::string_view, std::span<double> t) {
    for (double& v : t) slots.push_back(&v);
  });

  double worst = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double saved = *slots[i];
    *slots[i] = saved + kFiniteDifferenceStep;
    const double up = total_loss(batch, params, cfg).l_total;
    *slots[i] = saved - kFiniteDifferenceStep;
    const double down = total_loss(batch, params, cfg).l_total;
    *slots[i] = saved;
    const double numeric = (up - down) / (2.0 * kFiniteDifferenceStep);
    worst = std::max(worst, gradient_relative_error(corrupt(analytic[i], options), numeric));
  }
  return finish(kind == LossKind::kTriplet ? "grad.total_triplet" : "grad.total_infonce", worst, kGradientTolerance,
                start);
}

// Independent NetVLAD reference: straight loops, no shared helpers.
std::vector<double> netvlad_reference(const LocalFeatureMap& f, const NetVladParams& p) {
  const int K = p.clusters, C = p.channels;
  std::vector<std::vector<double>> V(K, std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < f.cells(); ++i) {
    if (!f.mask[i]) continue;
    std::vector<double> e(K);
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
      double s = p.assign_b[k];
      for (int c = 0; c < C; ++c) s += p.assign_w[k * C + c] * f.values[i * C + c];
      e[k] = std::exp(s);
      z += e[k];
    }
    for (int k = 0; k < K; ++k) {
      for (int c = 0; c < C; ++c) V[k][c] += e[k] / z * (f.values[i * C + c] - p.centroids[k * C + c]);
    }
  }
  std::vector<double> flat;
  for (int k = 0; k < K; ++k) {
    double n = 0.0;
    for (int c = 0; c < C; ++c) n += V[k][c] * V[k][c];
    n = std::sqrt(n);
    for (int c = 0; c < C; ++c) flat.push_back(n > 1e-12 ? V[k][c] / n : 0.0);
  }
  std::vector<double> y(static_cast<std::size_t>(p.out_dim), 0.0);
  double n = 0.0;
  for (int d = 0; d < p.out_dim; ++d) {
    for (std::size_t j = 0; j < flat.size(); ++j) y[d] += p.projection[d * flat.size() + j] * flat[j];
    n += y[d] * y[d];
  }
  n = std::sqrt(n);
  for (double& v : y) v /= n;
  return y;
}

}  // namespace

double gradient_relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

std::vector<CheckResult> check_gradients(const SelfCheckOptions& options) {
  return {check_contrastive(options, LossKind::kTriplet),
          check_contrastive(options, LossKind::kInfoNce),
          check_semantic(options),
          check_segmentation(options),
          check_total(options, LossKind::kTriplet),
          check_total(options, LossKind::kInfoNce)};
}

CheckResult check_netvlad_reference(const SelfCheckOptions& options, int instances) {
  const auto start = Clock::now();
  Rng rng = Rng(options.seed).split(21);
  double worst = 0.0;
  double worst_norm = 0.0;
  for (int t = 0; t < instances; ++t) {
    NetVladParams p;
    p.clusters = 1 + static_cast<int>(rng.index(4));
    p.channels = 1 + static_cast<int>(rng.index(8));
    p.out_dim = 1 + static_cast<int>(rng.index(8));
    const int rows = 1 + static_cast<int>(rng.index(4));
    const int cols = 1 + static_cast<int>(rng.index(4));
    const auto fill = [&](std::vector<double>& v, std::size_t n) {
      v.resize(n);
      for (double& x : v) x = rng.normal();
    };
    fill(p.centroids, static_cast<std::size_t>(p.clusters) * p.channels);
    fill(p.assign_w, static_cast<std::size_t>(p.clusters) * p.channels);
    fill(p.assign_b, static_cast<std::size_t>(p.clusters));
    fill(p.projection, static_cast<std::size_t>(p.out_dim) * p.clusters * p.channels);
    const LocalFeatureMap f = random_features(rng, rows, cols, p.channels, 0.7);
    const GlobalDescriptor d = netvlad(f, p);
    if (d.empty) {
      worst = INFINITY;
      continue;
    }
    const std::vector<double> ref = netvlad_reference(f, p);
    double sq = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(d.values[i] - ref[i]));
      sq += d.values[i] * d.values[i];
    }
    worst_norm = std::max(worst_norm, std::abs(std::sqrt(sq) - 1.0));
  }
  CheckResult r = finish("netvlad.reference", worst, 1e-10, start);
  r.passed = r.passed && worst_norm < 1e-6;
  return r;
}

CheckResult check_projection_shift(const SelfCheckOptions& options, int scenes) {
  const auto start = Clock::now();
  const Config cfg;
  Rng rng = Rng(options.seed).split(31);
  const RangeImage grid = make_empty_range_image(cfg);
  double worst = 0.0;
  for (int s = 0; s < scenes; ++s) {
    // Points on cell-center rays keep half a cell of clearance from every boundary.
    LabeledPointCloud cloud;
    const Vec3 origin(rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(0.0, 3.0));
    for (int n = 0; n < 400; ++n) {
      const int r = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.range_rows)));
      const int c = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.range_cols)));
      cloud.push_back(origin + rng.uniform(2.0, 70.0) * grid.cell_direction(r, c),
                      static_cast<std::uint8_t>(1 + rng.index(static_cast<std::size_t>(cfg.n_classes - 1))));
    }
    const int shift = static_cast<int>(rng.index(static_cast<std::size_t>(cfg.range_cols)));
    const Pose base{Mat3::Identity(), origin};
    const Pose turned{yaw_rotation(2.0 * M_PI * shift / cfg.range_cols), origin};
    const auto [r0, s0] = project_spherical(cloud, base, cfg);
    const auto [r1, s1] = project_spherical(cloud, turned, cfg);
    for (int r = 0; r < cfg.range_rows; ++r) {
      for (int c = 0; c < cfg.range_cols; ++c) {
        const int src = (c + shift) % cfg.range_cols;
        worst = std::max(worst, std::abs(r1.depth(r, c) - r0.depth(r, src)));
        if (s1(r, c) != s0(r, src)) worst = std::max(worst, 1.0);
      }
    }
  }
  CheckResult r = finish("projection.yaw_shift", worst, 0.0, start);
  r.passed = worst == 0.0;
  return r;
}

CheckResult check_sphere_normals(const SelfCheckOptions& options) {
  const auto start = Clock::now();
  Config cfg;
  cfg.range_rows = 64;
  cfg.range_cols = 360;
  Rng rng = Rng(options.seed).split(41);
  // The sensor sits inside a sphere, so every ray hits its inner surface once.
  const Vec3 center(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-1.0, 1.0));
  const double radius = 25.0;
  const RangeImage grid = make_empty_range_image(cfg);
  LabeledPointCloud cloud;
  for (int r = 0; r < cfg.range_rows; ++r) {
    for (int c = 0; c < cfg.range_cols; ++c) {
      const Vec3 u = grid.cell_direction(r, c);
      const double b = u.dot(center);
      const double t = b + std::sqrt(b * b - center.squaredNorm() + radius * radius);
      cloud.push_back(t * u, 1);
    }
  }
  const RangeImage img = estimate_normals(project_spherical(cloud, Pose::identity(), cfg).first);
  double worst = 0.0;
  // The last row has no lower neighbor and uses the radial fallback.
  for (int r = 0; r + 1 < cfg.range_rows; ++r) {
    for (int c = 0; c < cfg.range_cols; ++c) {
      const Vec3 p = img.cell_point(r, c);
      const Vec3 truth = (center - p).normalized();
      const double cosang = std::clamp(truth.dot(img.normals(r, c)), -1.0, 1.0);
      worst = std::max(worst, std::acos(cosang) * 180.0 / M_PI);
    }
  }
  return finish("projection.sphere_normals", worst, 2.0, start);
}

CheckResult check_overlap_oracle(const SelfCheckOptions& options) {
  const auto start = Clock::now();
  const Config cfg;
  Rng rng = Rng(options.seed).split(51);
  double worst = 0.0;

  SemanticImage left(8, 8), top(8, 8);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      left(r, c) = c < 4 ? 1 : 0;
      top(r, c) = r < 4 ? 1 : 0;
    }
  }
  worst = std::abs(semantic_overlap(left, top, cfg) - 1.0 / 3.0);

  const ColumnWindow window = frustum_window(cfg);
  for (int t = 0; t < 50; ++t) {
    const SemanticImage q = random_labels(rng, cfg.range_rows, window.width, cfg.n_classes);
    const SemanticImage m = random_labels(rng, cfg.range_rows, cfg.range_cols, cfg.n_classes);
    double sum = 0.0;
    int present = 0;
    for (int cls = 1; cls < cfg.n_classes; ++cls) {
      int inter = 0, uni = 0;
      for (int r = 0; r < cfg.range_rows; ++r) {
        for (int c = 0; c < window.width; ++c) {
          const bool a = q(r, c) == cls;
          const bool b = m(r, window.start + c) == cls;
          inter += a && b;
          uni += a || b;
        }
      }
      if (uni == 0) continue;
      sum += static_cast<double>(inter) / uni;
      ++present;
    }
    const double expected = present == 0 ? 0.0 : sum / present;
    worst = std::max(worst, std::abs(semantic_overlap(q, m, cfg) - expected));
  }
  return finish("matching.overlap_oracle", worst, 1e-12, start);
}

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options) {
  std::vector<CheckResult> out = check_gradients(options);
  out.push_back(check_netvlad_reference(options));
  out.push_back(check_projection_shift(options));
  out.push_back(check_sphere_normals(options));
  out.push_back(check_overlap_oracle(options));
  return out;
}

}  // namespace xpr
