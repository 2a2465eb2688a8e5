// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "xpr/cli.hpp"
#include "xpr/io.hpp"
#include "xpr/pipeline.hpp"
#include "xpr/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

using namespace xpr;

#ifndef XPR_CLI_PATH
#error "XPR_CLI_PATH must name the xpr executable"
#endif

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool passed = false;
  std::string detail;
};

char buf_fmt[512];

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(buf_fmt, sizeof buf_fmt, f, args...);
  return buf_fmt;
}

// ---------------------------------------------------------------------------
// Tolerances and budgets

constexpr double kGradTol = 1e-3;
constexpr double kVladTol = 1e-10;
constexpr double kUnitNormTol = 1e-6;
constexpr double kSphereNormalDeg = 2.0;
constexpr double kMinRecall = 80.0;
constexpr double kMinGain = 20.0;
constexpr double kMinMargin = 2.0;
constexpr double kPoseTol = 1e-9;

constexpr double kBudget1 = 60, kBudget2 = 10, kBudget3 = 30, kBudget4 = 10, kBudget5 = 600, kBudget6 = 900,
                 kBudget7 = 900, kBudget8 = 300, kBudget9 = 30;

// Fixture sizes and training schedule shared by the learning criteria.
constexpr int kPlaces = 16;
constexpr int kTrainPerPlace = 32;
constexpr int kTestPerPlace = 16;
constexpr int kEpochs = 100;
constexpr double kLearningRate = 1e-2;

// ---------------------------------------------------------------------------
// Criterion 1

Outcome criterion1() {
  std::ostringstream out, err;
  const char* argv[] = {"xpr", "selfcheck", "--seed", "42"};
  const int code = run_cli(4, argv, out, err);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  double worst_grad = 0.0;
  int grads = 0;
  bool all_pass = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) continue;
    all_pass = all_pass && cells[3] == "pass";
    if (cells[0].rfind("grad.", 0) == 0) {
      worst_grad = std::max(worst_grad, std::stod(cells[1]));
      ++grads;
    }
  }
  // Both contrastive kinds, the semantic and segmentation terms, and l_total for both kinds.
  const bool ok = code == kExitOk && all_pass && grads >= 6 && worst_grad < kGradTol;
  return {ok, fmt("exit %d, %d gradient checks, max rel error %.3g (< %.0e)", code, grads, worst_grad, kGradTol)};
}

// ---------------------------------------------------------------------------
// Criterion 2

std::vector<double> brute_force_netvlad(const LocalFeatureMap& f, const NetVladParams& p) {
  const int K = p.clusters;
  const int C = p.channels;
  std::vector<double> v(static_cast<std::size_t>(K) * C, 0.0);
  for (std::size_t i = 0; i < f.cells(); ++i) {
    if (!f.mask[i]) continue;
    std::vector<double> w(K);
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
      double s = p.assign_b[k];
      for (int c = 0; c < C; ++c) s += p.assign_w[k * C + c] * f.values[i * C + c];
      w[k] = std::exp(s);
      z += w[k];
    }
    for (int k = 0; k < K; ++k) {
      for (int c = 0; c < C; ++c) v[k * C + c] += w[k] / z * (f.values[i * C + c] - p.centroids[k * C + c]);
    }
  }
  for (int k = 0; k < K; ++k) {
    double n = 0.0;
    for (int c = 0; c < C; ++c) n += v[k * C + c] * v[k * C + c];
    n = std::sqrt(n);
    for (int c = 0; c < C; ++c) v[k * C + c] = n > 0.0 ? v[k * C + c] / n : 0.0;
  }
  std::vector<double> y(p.out_dim, 0.0);
  double n = 0.0;
  for (int d = 0; d < p.out_dim; ++d) {
    for (int j = 0; j < K * C; ++j) y[d] += p.projection[static_cast<std::size_t>(d) * K * C + j] * v[j];
    n += y[d] * y[d];
  }
  for (double& x : y) x /= std::sqrt(n);
  return y;
}

Outcome criterion2() {
  Rng rng(2002);
  double worst = 0.0;
  double worst_norm = 0.0;
  for (int t = 0; t < 100; ++t) {
    NetVladParams p;
    p.clusters = 1 + static_cast<int>(rng.index(4));
    p.channels = 1 + static_cast<int>(rng.index(8));
    p.out_dim = 2 + static_cast<int>(rng.index(15));
    const auto fill = [&](std::vector<double>& v, std::size_t n) {
      v.resize(n);
      for (double& x : v) x = rng.normal();
    };
    fill(p.centroids, static_cast<std::size_t>(p.clusters) * p.channels);
    fill(p.assign_w, static_cast<std::size_t>(p.clusters) * p.channels);
    fill(p.assign_b, static_cast<std::size_t>(p.clusters));
    fill(p.projection, static_cast<std::size_t>(p.out_dim) * p.clusters * p.channels);
    const int cells = 1 + static_cast<int>(rng.index(16));
    LocalFeatureMap f(1, cells, p.channels);
    for (int i = 0; i < cells; ++i) {
      f.mask[i] = i == 0 || rng.uniform() < 0.8;
      if (!f.mask[i]) continue;
      for (int c = 0; c < p.channels; ++c) f.cell(i)[c] = rng.normal();
    }
    const GlobalDescriptor d = netvlad(f, p);
    const std::vector<double> ref = brute_force_netvlad(f, p);
    double sq = 0.0;
    for (int i = 0; i < p.out_dim; ++i) {
      worst = std::max(worst, std::abs(d.values[i] - ref[i]));
      sq += d.values[i] * d.values[i];
    }
    worst_norm = std::max(worst_norm, std::abs(std::sqrt(sq) - 1.0));
    if (d.empty) worst = INFINITY;
  }
  const bool ok = worst < kVladTol && worst_norm < kUnitNormTol;
  return {ok, fmt("100 instances, max abs diff %.3g (< %.0e), max |norm-1| %.3g", worst, kVladTol, worst_norm)};
}

// ---------------------------------------------------------------------------
// Criterion 3

Outcome criterion3() {
  const Config cfg;
  Rng rng(3003);
  const double col_step = 2.0 * M_PI / cfg.range_cols;
  const RangeImage rays = make_empty_range_image(cfg);
  int mismatched_cells = 0;
  for (int s = 0; s < 20; ++s) {
    // Shift-safe: every point lies on a cell-center ray, half a cell away from every boundary.
    const Vec3 origin(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(0, 2));
    LabeledPointCloud cloud;
    for (int n = 0; n < 500; ++n) {
      const int r = static_cast<int>(rng.index(cfg.range_rows));
      const int c = static_cast<int>(rng.index(cfg.range_cols));
      const Vec3 dir = rays.cell_direction(r, c);
      cloud.push_back(origin + rng.uniform(1.0, 75.0) * dir, static_cast<std::uint8_t>(1 + rng.index(7)));
    }
    const int shift = 1 + static_cast<int>(rng.index(cfg.range_cols - 1));
    const auto [r0, s0] = project_spherical(cloud, Pose{Mat3::Identity(), origin}, cfg);
    const auto [r1, s1] = project_spherical(cloud, Pose{yaw_rotation(shift * col_step), origin}, cfg);
    for (int r = 0; r < cfg.range_rows; ++r) {
      for (int c = 0; c < cfg.range_cols; ++c) {
        const int src = (c + shift) % cfg.range_cols;
        if (r1.depth(r, c) != r0.depth(r, src) || s1(r, c) != s0(r, src)) ++mismatched_cells;
      }
    }
  }

  Config hi;
  hi.range_rows = 64;
  hi.range_cols = 360;
  const RangeImage grid = make_empty_range_image(hi);
  const double radius = 10.0;
  LabeledPointCloud sphere;
  for (int r = 0; r < hi.range_rows; ++r) {
    for (int c = 0; c < hi.range_cols; ++c) sphere.push_back(radius * grid.cell_direction(r, c), 1);
  }
  const RangeImage img = estimate_normals(project_spherical(sphere, Pose::identity(), hi).first);
  double worst_deg = 0.0;
  for (int r = 0; r < hi.range_rows; ++r) {
    for (int c = 0; c < hi.range_cols; ++c) {
      const Vec3 truth = -img.cell_point(r, c).normalized();
      const double cosang = std::clamp(truth.dot(img.normals(r, c)), -1.0, 1.0);
      worst_deg = std::max(worst_deg, std::acos(cosang) * 180.0 / M_PI);
    }
  }
  const bool ok = mismatched_cells == 0 && worst_deg < kSphereNormalDeg;
  return {ok, fmt("20 scenes, %d shifted cells differ; sphere normal max error %.3f deg (< %.0f)", mismatched_cells,
                  worst_deg, kSphereNormalDeg)};
}

// ---------------------------------------------------------------------------
// Criterion 4

Outcome criterion4() {
  Rng rng(4004);
  int mismatches = 0;
  int forced_ties = 0;
  for (int inst = 0; inst < 50; ++inst) {
    Config cfg;
    cfg.n_viewpoints = 4;
    cfg.range_rows = 4;
    cfg.range_cols = 8;
    MapIndex index;
    index.config = cfg;
    const auto random_desc = [&] {
      GlobalDescriptor d;
      d.values.resize(32);
      double n = 0.0;
      for (double& v : d.values) {
        v = rng.normal();
        n += v * v;
      }
      for (double& v : d.values) v /= std::sqrt(n);
      return d;
    };
    const auto random_sem = [&] {
      SemanticImage s(4, 8);
      for (auto& l : s.data) l = static_cast<std::uint8_t>(rng.index(cfg.n_classes));
      return s;
    };
    std::vector<std::uint32_t> ids(20);
    for (int p = 0; p < 20; ++p) ids[p] = static_cast<std::uint32_t>(p * 7 % 20 + 1);
    for (int p = 0; p < 20; ++p) {
      index.places.push_back({ids[p], Vec3(20.0 * p, 0.0, 0.0)});
      for (std::uint32_t k = 0; k < 4; ++k) index.entries.push_back({ids[p], k, Pose{}, random_desc(), random_sem(), {}});
    }
    GlobalDescriptor q = random_desc();
    SemanticImage qs = random_sem();
    if (inst % 2 == 0) {
      // Exact ties: copies of one entry across places and viewpoints, and the query matches it.
      const MapEntry seed_entry = index.entries[static_cast<std::size_t>(rng.index(80))];
      for (int c = 0; c < 6; ++c) {
        MapEntry& e = index.entries[static_cast<std::size_t>(rng.index(80))];
        e.descriptor = seed_entry.descriptor;
        e.semantics = seed_entry.semantics;
      }
      q = seed_entry.descriptor;
      qs = seed_entry.semantics;
      ++forced_ties;
    }
    const MatchResult r = match_query(q, qs, index, cfg);

    struct Row {
      std::uint32_t place, k;
      double score;
    };
    std::vector<Row> oracle;
    for (const Place& p : index.places) {
      Row best{p.id, 0, -INFINITY};
      for (const MapEntry& e : index.entries) {
        if (e.place_id != p.id) continue;
        const Similarity s = hybrid_similarity(q, qs, e, cfg);
        if (s.sim > best.score || (s.sim == best.score && e.viewpoint < best.k)) best = {p.id, e.viewpoint, s.sim};
      }
      oracle.push_back(best);
    }
    std::stable_sort(oracle.begin(), oracle.end(), [](const Row& a, const Row& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.place < b.place;
    });
    bool same = r.ranked.size() == oracle.size();
    for (std::size_t i = 0; same && i < oracle.size(); ++i) {
      same = r.ranked[i].place_id == oracle[i].place && r.ranked[i].viewpoint == oracle[i].k &&
             r.ranked[i].score == oracle[i].score;
    }
    same = same && r.best_place_id == oracle[0].place && r.best_viewpoint == oracle[0].k;
    mismatches += !same;
  }
  return {mismatches == 0, fmt("50 instances (%d with forced ties), %d rankings differ", forced_ties, mismatches)};
}

// ---------------------------------------------------------------------------
// Learning fixtures (criteria 5-7)

struct Fixture {
  Config cfg;
  std::vector<PlaceScan> scans;
  std::vector<RenderedPlace> rendered;
  std::vector<QueryRecord> train_queries;
  Rng rng{0};
};

Fixture make_fixture(const Config& cfg, bool aliased, double train_noise) {
  Fixture f;
  f.cfg = cfg;
  f.rng = Rng(cfg.seed);
  WorldOptions opt;
  opt.aliased_pairs = aliased;
  const SyntheticWorld world = generate_world(kPlaces, f.rng, cfg, opt);
  f.scans = scans_from_world(world);
  f.rendered = render_places(f.scans, cfg);
  Rng train_rng = f.rng.split(0x54524e51);
  f.train_queries = synth_queries(f.scans, kTrainPerPlace, train_noise, train_rng, cfg);
  return f;
}

std::vector<QueryRecord> test_queries(const Fixture& f, double noise) {
  Rng rng = f.rng.split(0x51455259);
  return synth_queries(f.scans, kTestPerPlace, noise, rng, f.cfg);
}

ModelParams train_model(const Fixture& f, const Config& cfg) {
  const TrainingSet data = make_training_set(f.rendered, f.train_queries, cfg);
  return train(data, init_model(cfg), cfg, {kEpochs, kLearningRate}).params;
}

double recall1(const Fixture& f, const ModelParams& params, const Config& cfg, const std::vector<QueryRecord>& qs) {
  const MapIndex index = build_index(f.rendered, params, cfg);
  const auto results = match_queries(qs, index, params, cfg);
  return recall_at_k(results, index.places, ground_truth(qs), 1, cfg);
}

Config with(Config cfg, double beta, double lambda) {
  cfg.beta = beta;
  cfg.lambda_sem = lambda;
  return cfg;
}

// Criterion 5's fixture and recall double as the noise 0.3 point of criterion 7.
struct Shared {
  std::unique_ptr<Fixture> fixture;
  double full_recall = 0.0;
};

Outcome criterion5(Shared& shared) {
  const Config cfg;
  shared.fixture = std::make_unique<Fixture>(make_fixture(cfg, false, 0.3));
  const Fixture& f = *shared.fixture;
  const auto test = test_queries(f, 0.3);
  const double before = recall1(f, init_model(cfg), cfg, test);
  const ModelParams full = train_model(f, cfg);
  const double after = recall1(f, full, cfg, test);
  shared.full_recall = after;
  const bool ok = after >= kMinRecall && after - before >= kMinGain;
  return {ok, fmt("R@1 untrained %.2f -> trained %.2f after %d epochs (need >= %.2f and +%.0f pp)", before, after,
                  kEpochs, kMinRecall, kMinGain)};
}

Outcome criterion6() {
  const Config cfg;
  const Fixture f = make_fixture(cfg, true, 0.3);
  const auto test = test_queries(f, 0.3);
  const ModelParams full = train_model(f, cfg);
  const ModelParams no_sem = train_model(f, with(cfg, cfg.beta, 0.0));
  const double r_full = recall1(f, full, cfg, test);
  const double r_beta0 = recall1(f, full, with(cfg, 0.0, cfg.lambda_sem), test);
  const double r_lambda0 = recall1(f, no_sem, cfg, test);
  const bool ok = r_full - r_beta0 >= kMinMargin && r_full - r_lambda0 >= kMinMargin;
  return {ok, fmt("aliased pairs: full %.2f, beta=0 %.2f, lambda=0 %.2f (margins >= %.0f pp)", r_full, r_beta0,
                  r_lambda0, kMinMargin)};
}

// Each noise level is its own dataset: training and test queries share it.
Outcome criterion7(const Shared& shared) {
  const Config& cfg = shared.fixture->cfg;
  std::vector<double> full;
  double r_plain = 0.0;
  for (double noise : {0.0, 0.3, 0.6}) {
    if (noise == 0.3) {
      full.push_back(shared.full_recall);
      continue;
    }
    const Fixture f = make_fixture(cfg, false, noise);
    const auto test = test_queries(f, noise);
    full.push_back(recall1(f, train_model(f, cfg), cfg, test));
    if (noise == 0.6) r_plain = recall1(f, train_model(f, with(cfg, cfg.beta, 0.0)), with(cfg, 0.0, 0.0), test);
  }
  const bool ok = full[0] >= full[1] && full[1] >= full[2] && full[2] - r_plain >= kMinMargin;
  return {ok, fmt("full R@1 at noise 0/0.3/0.6: %.2f/%.2f/%.2f; beta=0,lambda=0 at 0.6: %.2f", full[0], full[1],
                  full[2], r_plain)};
}

// ---------------------------------------------------------------------------
// Criterion 8

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

int shell(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + XPR_CLI_PATH + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

Outcome criterion8(const fs::path& work) {
  const fs::path log = work / "cli.log";
  std::vector<std::string> differing;
  int failures = 0;
  const auto run_twice = [&](const std::string& name, const std::function<std::string(const std::string&)>& args,
                             const std::function<bool(const std::string&, const std::string&)>& same) {
    const std::string a = (work / (name + "_a")).string();
    const std::string b = (work / (name + "_b")).string();
    failures += shell(args(a), log) != 0;
    failures += shell(args(b), log) != 0;
    if (!same(a, b)) differing.push_back(name);
  };
  const auto same_file = [](const std::string& a, const std::string& b) {
    return fs::exists(a) && slurp(a) == slurp(b);
  };
  run_twice(
      "synth",
      [](const std::string& out) {
        return "synth --places 4 --seed 7 --queries-per-place 4 --train-queries-per-place 4 --out \"" + out + "\"";
      },
      [](const std::string& a, const std::string& b) { return fs::exists(a) && tree(a) == tree(b); });
  const std::string data = (work / "synth_a").string();
  run_twice(
      "index", [&](const std::string& out) { return "build-map --data \"" + data + "\" --out \"" + out + "\""; },
      same_file);
  run_twice(
      "ckpt",
      [&](const std::string& out) { return "train --data \"" + data + "\" --epochs 3 --out \"" + out + "\""; },
      [&](const std::string& a, const std::string& b) {
        return same_file(a, b) && same_file(a + ".loss.csv", b + ".loss.csv");
      });
  const std::string ckpt = (work / "ckpt_a").string();
  const std::string trained_index = (work / "trained.idx").string();
  failures += shell("build-map --data \"" + data + "\" --ckpt \"" + ckpt + "\" --out \"" + trained_index + "\"", log) != 0;
  run_twice(
      "results",
      [&](const std::string& out) {
        return "match --index \"" + trained_index + "\" --queries \"" + data + "/queries\" --ckpt \"" + ckpt +
               "\" --out \"" + out + "\"";
      },
      same_file);
  std::string diff;
  for (const auto& d : differing) diff += " " + d;
  const bool ok = failures == 0 && differing.empty();
  return {ok, fmt("synth, build-map, train, match re-run: %d command failures, differing:%s", failures,
                  differing.empty() ? " none" : diff.c_str())};
}

// ---------------------------------------------------------------------------
// Criterion 9

Outcome criterion9(const fs::path& work) {
  Rng rng(9009);
  const ClassMap map = synthetic_class_map();
  std::map<std::string, int> failures{{"cloud", 0}, {"label", 0}, {"pose", 0}, {"index", 0}, {"checkpoint", 0}};
  const auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  for (int t = 0; t < 200; ++t) {
    LabeledPointCloud cloud;
    const std::size_t n = rng.index(400);
    for (std::size_t i = 0; i < n; ++i) {
      const float x = static_cast<float>(rng.uniform(-90, 90));
      const float y = static_cast<float>(rng.uniform(-90, 90));
      const float z = static_cast<float>(rng.uniform(-5, 30));
      cloud.push_back(Vec3(x, y, z), static_cast<std::uint8_t>(rng.index(6)));
      cloud.intensities.push_back(f32(rng.uniform()));
    }
    write_cloud_bin(work / "c.bin", cloud);
    write_labels(work / "c.label", cloud, map);
    const LabeledPointCloud geo = load_cloud_bin(work / "c.bin");
    failures["cloud"] += !(geo.points == cloud.points && geo.intensities == cloud.intensities);
    failures["label"] += load_labels(work / "c.label", geo, map).labels != cloud.labels;

    std::vector<Pose> poses;
    for (std::size_t i = 0; i < 1 + rng.index(20); ++i) {
      const Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      poses.push_back({q.normalized().toRotationMatrix(), Vec3(rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3), rng.normal())});
    }
    write_poses(work / "p.txt", poses);
    const PoseFile back = load_poses(work / "p.txt");
    bool poses_ok = back.poses.size() == poses.size() && back.reorthonormalized_lines.empty();
    for (std::size_t i = 0; poses_ok && i < poses.size(); ++i) {
      poses_ok = (back.poses[i].rotation - poses[i].rotation).cwiseAbs().maxCoeff() <= kPoseTol &&
                 (back.poses[i].translation - poses[i].translation).cwiseAbs().maxCoeff() <= kPoseTol;
    }
    failures["pose"] += !poses_ok;

    Config cfg;
    cfg.seed = rng.next_u64();
    cfg.range_rows = 2 + static_cast<int>(rng.index(6));
    cfg.range_cols = 8 + static_cast<int>(rng.index(40));
    cfg.descriptor_dim = 4 + static_cast<int>(rng.index(60));
    cfg.n_viewpoints = 1 + static_cast<int>(rng.index(4));
    cfg.netvlad_clusters = 1 + static_cast<int>(rng.index(6));
    MapIndex index;
    index.config = cfg;
    for (std::uint32_t p = 0; p < 1 + rng.index(3); ++p) {
      index.places.push_back({p, Vec3(rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3), rng.normal())});
      for (int k = 0; k < cfg.n_viewpoints; ++k) {
        MapEntry e;
        e.place_id = p;
        e.viewpoint = k;
        e.pose = Pose{yaw_rotation(rng.uniform(0, 6.28)), index.places.back().position};
        e.descriptor.values.resize(cfg.descriptor_dim);
        for (double& v : e.descriptor.values) v = f32(rng.normal());
        e.semantics = SemanticImage(cfg.range_rows, cfg.range_cols);
        for (auto& l : e.semantics.data) l = static_cast<std::uint8_t>(rng.index(cfg.n_classes));
        e.histogram = semantic_histogram(e.semantics, cfg);
        index.entries.push_back(e);
      }
    }
    save_index(work / "i.idx", index);
    failures["index"] += !(load_index(work / "i.idx") == index);

    ModelParams params = init_model(cfg);
    for_each_trainable(params, [&](std::string_view, std::span<double> values) {
      for (double& v : values) v = f32(v + 0.1 * rng.normal());
    });
    save_checkpoint(work / "m.ckpt", params, cfg);
    const Checkpoint ck = load_checkpoint(work / "m.ckpt");
    failures["checkpoint"] += !(ck.params == params && ck.config == cfg);
  }
  int total = 0;
  std::string detail = "200 payloads, failures:";
  for (const auto& [name, count] : failures) {
    total += count;
    detail += fmt(" %s=%d", name.c_str(), count);
  }
  return {total == 0, detail};
}

// ---------------------------------------------------------------------------
// Criterion 10

Outcome criterion10(const fs::path& work) {
  const fs::path log = work / "cli.log";
  const fs::path data = work / "bench100";
  const fs::path index = work / "bench100.idx";
  const fs::path csv = work / "bench.csv";
  int failures = 0;
  failures += shell("synth --places 100 --queries-per-place 1 --train-queries-per-place 1 --out \"" + data.string() + "\"",
                    log) != 0;
  failures += shell("build-map --data \"" + data.string() + "\" --out \"" + index.string() + "\"", log) != 0;
  failures += shell("bench --index \"" + index.string() + "\" --queries \"" + (data / "queries").string() +
                        "\" --repeat 100 --out \"" + csv.string() + "\"",
                    log) != 0;
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  std::map<std::string, double> mean_ms;
  std::string line;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    mean_ms[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  const bool ok = failures == 0 && header == "stage,mean_ms,median_ms,p95_ms" && mean_ms.count("query_encode") &&
                  mean_ms.count("viewpoint_describe") && mean_ms.count("match") && mean_ms.count("total");
  std::string detail = fmt("100-place index, %d command failures; mean ms:", failures);
  for (const auto& [stage, ms] : mean_ms) detail += fmt(" %s=%.3f", stage.c_str(), ms);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number; none runs all.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const fs::path work = fs::temp_directory_path() / "xpr_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  Shared shared;
  struct Criterion {
    int id;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, kBudget1, criterion1},
      {2, kBudget2, criterion2},
      {3, kBudget3, criterion3},
      {4, kBudget4, criterion4},
      {5, kBudget5, [&] { return criterion5(shared); }},
      {6, kBudget6, criterion6},
      {7, kBudget7, [&] { return criterion7(shared); }},
      {8, kBudget8, [&] { return criterion8(work); }},
      {9, kBudget9, [&] { return criterion9(work); }},
      {10, 0.0, [&] { return criterion10(work); }},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(start);
    // Criterion 10 has no time budget.
    const bool in_budget = c.budget_s <= 0.0 || secs < c.budget_s;
    const bool passed = o.passed && in_budget;
    failed += !passed;
    std::string budget = c.budget_s > 0.0 ? fmt(" (%.1f s, budget %.0f s)", secs, c.budget_s) : fmt(" (%.1f s)", secs);
    std::cout << "criterion " << c.id << ": " << (passed ? "PASS" : "FAIL") << "  " << o.detail << budget << std::endl;
  }
  fs::remove_all(work);
  std::cout << (failed == 0 ? "all criteria passed" : fmt("%d criteria failed", failed)) << std::endl;
  return failed == 0 ? 0 : 1;
}
