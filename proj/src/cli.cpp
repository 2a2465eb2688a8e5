#include "xpr/cli.hpp"

#include "xpr/config_json.hpp"
#include "xpr/io.hpp"
#include "xpr/pipeline.hpp"
#include "xpr/selfcheck.hpp"

#include <CLI11.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

namespace xpr {

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

class CheckFailed : public Error {
 public:
  using Error::Error;
};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Times `fn` into manifest.timings_ms[stage].
template <typename Fn>
auto timed(RunManifest& manifest, const std::string& stage, Fn&& fn) {
  const auto t0 = Clock::now();
  if constexpr (std::is_void_v<std::invoke_result_t<Fn>>) {
    fn();
    manifest.timings_ms[stage] += ms_since(t0);
  } else {
    auto result = fn();
    manifest.timings_ms[stage] += ms_since(t0);
    return result;
  }
}

fs::path strip_trailing_separator(fs::path p) {
  while (!p.has_filename() && p.has_parent_path() && p != p.root_path()) p = p.parent_path();
  return p;
}

/// Holds an exclusive flock on "<out>.lock" for the lifetime of a command.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& out) : path_(strip_trailing_separator(out).string() + ".lock") {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) throw DataError("cannot create lock file " + path_.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw DataError("another xpr process is writing " + out.string() + " (" + path_.string() + ")");
    }
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
    ::close(fd_);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

void write_manifest(const fs::path& out, const RunManifest& manifest) {
  std::ofstream f(manifest_path(out), std::ios::trunc);
  if (!f) throw DataError("cannot write " + manifest_path(out).string());
  f << manifest.to_json().dump(2) << '\n';
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ModelParams params_for(const Config& cfg, const std::string& ckpt, RunManifest& manifest, std::string_view what) {
  if (ckpt.empty()) return init_model(cfg);
  manifest.inputs["checkpoint"] = ckpt;
  const Checkpoint ck = load_checkpoint(ckpt);
  check_compatible(cfg, ck.config, what);
  return ck.params;
}

void check_query_shapes(std::span<const QueryRecord> queries, const Config& cfg) {
  const int width = frustum_window(cfg).width;
  for (const QueryRecord& q : queries) {
    if (q.obs.rows != cfg.range_rows || q.obs.cols != width) {
      throw DataError("query " + std::to_string(q.query_id) + ": observation is " + std::to_string(q.obs.rows) + "x" +
                      std::to_string(q.obs.cols) + ", index configuration expects " +
                      std::to_string(cfg.range_rows) + "x" + std::to_string(width));
    }
    q.obs.validate(cfg);
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int places = 0;
  double density = 6.0;
  std::string out;
  std::uint64_t seed = 42;
  std::string config;
  int queries_per_place = 8;
  int train_queries_per_place = 32;
  double noise = 0.3;
  double spacing = 200.0;
  bool aliased = false;
  bool force = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.places < 1) throw UsageError("--places must be at least 1");
  if (!(a.density > 0.0)) throw UsageError("--density must be positive");
  if (a.queries_per_place < 0 || a.train_queries_per_place < 0) throw UsageError("query counts must be >= 0");
  if (!(a.noise >= 0.0)) throw UsageError("--noise must be >= 0");
  const fs::path root = strip_trailing_separator(a.out);
  OutputLock lock(root);
  if (fs::exists(root)) {
    if (!fs::is_directory(root)) throw UsageError(root.string() + " exists and is not a directory");
    if (!fs::is_empty(root)) {
      if (!a.force) throw UsageError(root.string() + " is not empty (use --force to replace it)");
      fs::remove_all(root);
    }
  }

  RunManifest m;
  m.command = "synth";
  Config cfg = a.config.empty() ? Config{} : load_config(a.config);
  if (!a.config.empty()) m.inputs["config"] = a.config;
  cfg.seed = a.seed;
  m.config = validate_config(cfg);
  m.flags = {{"places", a.places},       {"density", a.density},
             {"queries_per_place", a.queries_per_place}, {"train_queries_per_place", a.train_queries_per_place},
             {"noise", a.noise},         {"spacing", a.spacing},
             {"aliased", a.aliased}};

  WorldOptions opts;
  opts.density = a.density;
  opts.spacing_m = a.spacing;
  opts.aliased_pairs = a.aliased;
  Dataset ds;
  timed(m, "generate", [&] {
    Rng rng(cfg.seed);
    const SyntheticWorld world = generate_world(a.places, rng, cfg, opts);
    ds.scans = scans_from_world(world);
  });
  ds.meta.config = cfg;
  ds.meta.class_map = synthetic_class_map();
  for (const PlaceScan& s : ds.scans) ds.meta.places.push_back(Place{s.place_id, s.anchor.translation});
  std::ostringstream prov;
  prov << "synthetic world: seed " << cfg.seed << ", " << a.places << " places, density " << a.density
       << " pts/m^2, spacing " << a.spacing << " m, aliased pairs " << (a.aliased ? "yes" : "no") << "; query noise "
       << a.noise;
  ds.meta.provenance = prov.str();
  timed(m, "write", [&] { write_dataset(root, ds); });

  // Queries are rendered from the stored clouds so they match what loaders see.
  timed(m, "queries", [&] {
    const Dataset stored = load_dataset(root);
    const Rng base(cfg.seed);
    Rng test_rng = base.split(0x51455259ULL);
    Rng train_rng = base.split(0x54524e51ULL);
    const auto test = synth_queries(stored.scans, a.queries_per_place, a.noise, test_rng, cfg);
    const auto train = synth_queries(stored.scans, a.train_queries_per_place, a.noise, train_rng, cfg);
    save_queries(root / "queries", test);
    save_queries(root / "queries_train", train);
  });
  m.outputs["dataset"] = root.string();
  write_manifest(root, m);
  out << "wrote " << a.places << " places to " << root.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_build_map(const std::string& data, const std::string& ckpt, const std::string& out_path, std::ostream& out) {
  OutputLock lock(out_path);
  RunManifest m;
  m.command = "build-map";
  m.inputs["data"] = data;
  const Dataset ds = timed(m, "load", [&] { return load_dataset(data); });
  const Config& cfg = ds.meta.config;
  m.config = cfg;
  const ModelParams params = params_for(cfg, ckpt, m, "checkpoint vs dataset");
  const auto rendered = timed(m, "render", [&] { return render_places(ds.scans, cfg); });
  const MapIndex index = timed(m, "describe", [&] { return build_index(rendered, params, cfg); });
  timed(m, "save", [&] { save_index(out_path, index); });
  m.outputs["index"] = out_path;
  write_manifest(out_path, m);
  out << "indexed " << index.places.size() << " places, " << index.entries.size() << " entries\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_match(const std::string& index_path, const std::string& queries_dir, const std::string& ckpt,
              const std::string& out_path, std::ostream& out) {
  OutputLock lock(out_path);
  RunManifest m;
  m.command = "match";
  m.inputs["index"] = index_path;
  m.inputs["queries"] = queries_dir;
  const MapIndex index = timed(m, "load", [&] { return load_index(index_path); });
  const Config& cfg = index.config;
  m.config = cfg;
  const ModelParams params = params_for(cfg, ckpt, m, "checkpoint vs index");
  const auto queries = timed(m, "load", [&] { return load_queries(queries_dir); });
  check_query_shapes(queries, cfg);
  const auto results = timed(m, "match", [&] { return match_queries(queries, index, params, cfg); });
  std::vector<ResultRow> rows;
  rows.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const MatchResult& r = results[i];
    ResultRow row{r.query_id, r.best_place_id, r.best_viewpoint, r.score, r.phi, r.psi,
                  rank_of_truth(r, index.places, queries[i].gt_position, cfg), {}};
    for (const RankedPlace& p : r.ranked) row.ranked.push_back(p.place_id);
    rows.push_back(std::move(row));
  }
  timed(m, "write", [&] {
    std::ofstream f = open_output(out_path);
    write_results_csv(f, rows);
  });
  m.outputs["results"] = out_path;
  write_manifest(out_path, m);
  out << "matched " << rows.size() << " queries\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& data, const std::string& queries_arg, int epochs, double lr,
              const std::string& out_path, std::ostream& out) {
  if (epochs < 0) throw UsageError("--epochs must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("--lr must be a finite value >= 0");
  OutputLock lock(out_path);
  RunManifest m;
  m.command = "train";
  const fs::path queries_dir = queries_arg.empty() ? fs::path(data) / "queries_train" : fs::path(queries_arg);
  m.inputs["data"] = data;
  m.inputs["queries"] = queries_dir.string();
  m.flags = {{"epochs", epochs}, {"lr", lr}};
  const Dataset ds = timed(m, "load", [&] { return load_dataset(data); });
  const Config& cfg = ds.meta.config;
  m.config = cfg;
  const auto queries = timed(m, "load", [&] { return load_queries(queries_dir); });
  check_query_shapes(queries, cfg);
  const TrainingSet set = timed(m, "prepare", [&] {
    const auto rendered = render_places(ds.scans, cfg);
    return make_training_set(rendered, queries, cfg);
  });
  const TrainResult result =
      timed(m, "train", [&] { return train(set, init_model(cfg), cfg, TrainOptions{epochs, lr}); });
  const fs::path history_path = fs::path(out_path).string() + ".loss.csv";
  timed(m, "write", [&] {
    save_checkpoint(out_path, result.params, cfg);
    std::ofstream f = open_output(history_path);
    f << "epoch,l_contrastive,l_sem,l_seg,l_total\n";
    for (const EpochRecord& e : result.history) {
      f << e.epoch << ',' << fmt_double(e.l_contrastive) << ',' << fmt_double(e.l_sem) << ','
        << fmt_double(e.l_seg) << ',' << fmt_double(e.l_total) << '\n';
    }
  });
  m.outputs["checkpoint"] = out_path;
  m.outputs["loss_history"] = history_path.string();
  write_manifest(out_path, m);
  if (!result.history.empty()) {
    out << "epoch " << result.history.back().epoch << " l_total " << result.history.back().l_total << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_eval(const std::string& results_path, const std::string& data, const std::string& queries_arg,
             std::vector<int> ks, const std::string& out_arg, std::ostream& out) {
  if (ks.empty()) throw UsageError("--k needs at least one value");
  for (int k : ks) {
    if (k < 1) throw UsageError("--k values must be >= 1");
  }
  const fs::path out_path = out_arg.empty() ? fs::path(results_path).replace_extension(".recall.csv") : fs::path(out_arg);
  OutputLock lock(out_path);
  RunManifest m;
  m.command = "eval";
  const fs::path queries_dir = queries_arg.empty() ? fs::path(data) / "queries" : fs::path(queries_arg);
  m.inputs["results"] = results_path;
  m.inputs["data"] = data;
  m.inputs["queries"] = queries_dir.string();
  m.flags = {{"k", ks}};
  const DatasetMeta meta = load_meta(data);
  m.config = meta.config;
  std::ifstream in(results_path);
  if (!in) throw DataError("cannot open " + results_path);
  const std::vector<ResultRow> rows = read_results_csv(in, results_path);
  const auto queries = load_queries(queries_dir);
  std::vector<GroundTruth> gt = ground_truth(queries);
  std::vector<MatchResult> results;
  for (const ResultRow& row : rows) {
    MatchResult r;
    r.query_id = row.query_id;
    for (std::uint32_t id : row.ranked) r.ranked.push_back(RankedPlace{id, 0, 0.0, 0.0, 0.0});
    results.push_back(std::move(r));
  }
  std::ofstream f = open_output(out_path);
  f << "metric,recall\n";
  for (int k : ks) {
    const double recall = recall_at_k(results, meta.places, gt, k, meta.config);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", recall);
    f << "R@" << k << ',' << buf << '\n';
    out << format_recall_line(k, recall) << '\n';
  }
  m.outputs["recall"] = out_path.string();
  write_manifest(out_path, m);
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_selfcheck(std::uint64_t seed, bool corrupt, const std::string& out_path, std::ostream& out) {
  std::optional<OutputLock> lock;
  if (!out_path.empty()) lock.emplace(out_path);
  RunManifest m;
  m.command = "selfcheck";
  m.config.seed = seed;
  m.flags = {{"corrupt_gradients", corrupt}};
  SelfCheckOptions opts;
  opts.seed = seed;
  opts.corrupt_gradients = corrupt;
  const auto results = timed(m, "checks", [&] { return run_selfcheck(opts); });
  std::ostringstream table;
  table << "check,max_error,tolerance,status\n";
  bool ok = true;
  for (const CheckResult& r : results) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s,%.3e,%.1e,%s\n", r.name.c_str(), r.max_error, r.tolerance,
                  r.passed ? "pass" : "FAIL");
    table << buf;
    m.timings_ms[r.name] = 1000.0 * r.seconds;
    ok = ok && r.passed;
  }
  out << table.str();
  if (!out_path.empty()) {
    std::ofstream f = open_output(out_path);
    f << table.str();
    m.outputs["report"] = out_path;
    write_manifest(out_path, m);
  }
  if (!ok) throw CheckFailed("selfcheck failed");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct StageStats {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
};

StageStats stats(std::vector<double> v) {
  StageStats s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95 = v[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

int cmd_bench(const std::string& index_path, const std::string& queries_dir, int repeat, const std::string& ckpt,
              const std::string& out_path, std::ostream& out) {
  if (repeat < 1) throw UsageError("--repeat must be at least 1");
  std::optional<OutputLock> lock;
  if (!out_path.empty()) lock.emplace(out_path);
  RunManifest m;
  m.command = "bench";
  m.inputs["index"] = index_path;
  m.inputs["queries"] = queries_dir;
  m.flags = {{"repeat", repeat}};
  const MapIndex index = load_index(index_path);
  const Config& cfg = index.config;
  m.config = cfg;
  const ModelParams params = params_for(cfg, ckpt, m, "checkpoint vs index");
  const auto queries = load_queries(queries_dir);
  if (queries.empty()) throw DataError("bench: no queries in " + queries_dir);
  check_query_shapes(queries, cfg);
  const std::vector<double> context = index.mean_histogram();

  // Map-side stage: one seeded synthetic place rendered from each viewpoint in turn.
  Rng rng(cfg.seed);
  const SyntheticWorld world = generate_world(1, rng, cfg);
  const LabeledPointCloud cloud = place_cloud(world, 0);
  const ViewpointSet vps = make_viewpoints(anchor_pose(world, 0), cfg);

  std::vector<double> t_encode, t_view, t_match, t_total;
  for (int i = 0; i < repeat; ++i) {
    const QueryRecord& q = queries[static_cast<std::size_t>(i) % queries.size()];
    const auto t0 = Clock::now();
    const auto [desc, sem] = describe_query(q.obs, params.enc, params.att, params.vlad, context);
    const auto t1 = Clock::now();
    const ViewRender view = render_viewpoint(cloud, vps.poses[static_cast<std::size_t>(i) % vps.poses.size()], cfg);
    const GlobalDescriptor vd = describe_viewpoint(view.range, view.semantics, params.vlad, cfg);
    const auto t2 = Clock::now();
    const MatchResult r = match_query(desc, sem, index, cfg, q.query_id);
    const auto t3 = Clock::now();
    const auto ms = [](auto a, auto b) { return std::chrono::duration<double, std::milli>(b - a).count(); };
    t_encode.push_back(ms(t0, t1));
    t_view.push_back(ms(t1, t2));
    t_match.push_back(ms(t2, t3));
    t_total.push_back(ms(t0, t3));
    if (vd.values.empty() || r.ranked.empty()) throw DataError("bench: empty pipeline output");
  }
  std::ostringstream csv;
  csv << "stage,mean_ms,median_ms,p95_ms\n";
  const auto row = [&](const char* name, const std::vector<double>& v) {
    const StageStats s = stats(v);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f\n", name, s.mean, s.median, s.p95);
    csv << buf;
    m.timings_ms[name] = s.mean;
  };
  row("query_encode", t_encode);
  row("viewpoint_describe", t_view);
  row("match", t_match);
  row("total", t_total);
  out << csv.str();
  if (!out_path.empty()) {
    std::ofstream f = open_output(out_path);
    f << csv.str();
    m.outputs["timings"] = out_path;
    write_manifest(out_path, m);
  }
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

nlohmann::json RunManifest::to_json() const {
  return nlohmann::json{{"command", command},
                        {"version", std::string(kVersion)},
                        {"config", config_to_json(config)},
                        {"seed", config.seed},
                        {"flags", flags},
                        {"inputs", inputs},
                        {"outputs", outputs},
                        {"timings_ms", timings_ms}};
}

fs::path manifest_path(const fs::path& out) {
  return strip_trailing_separator(out).string() + ".manifest.json";
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultsHeader << '\n';
  for (const ResultRow& r : rows) {
    out << r.query_id << ',' << r.best_place << ',' << r.best_k << ',' << fmt_double(r.sim) << ','
        << fmt_double(r.phi) << ',' << fmt_double(r.psi) << ',' << r.rank_of_truth << ',';
    for (std::size_t i = 0; i < r.ranked.size(); ++i) out << (i ? " " : "") << r.ranked[i];
    out << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in, const std::string& source) {
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line)) throw DataError(source + ": line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsHeader) throw DataError(source + ": line 1: unexpected header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fail = [&](const std::string& what) -> DataError {
      return DataError(source + ": line " + std::to_string(line_no) + ": " + what);
    };
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 8) throw fail("expected 8 fields, found " + std::to_string(fields.size()));
    const auto num = [&](const std::string& s, auto& v) {
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) throw fail("bad number '" + s + "'");
    };
    ResultRow r;
    num(fields[0], r.query_id);
    num(fields[1], r.best_place);
    num(fields[2], r.best_k);
    num(fields[3], r.sim);
    num(fields[4], r.phi);
    num(fields[5], r.psi);
    num(fields[6], r.rank_of_truth);
    std::stringstream ids(fields[7]);
    std::string id;
    while (ids >> id) {
      std::uint32_t v = 0;
      num(id, v);
      r.ranked.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string format_recall_line(int k, double recall) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "R@%d, %.2f", k, recall);
  return buf;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-modal place recognition: synthetic data, map indexing, matching, training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::function<int()> action;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  s->add_option("--places", synth.places, "Number of places")->required();
  s->add_option("--density", synth.density, "Surface samples per square meter")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Seed")->capture_default_str();
  s->add_option("--config", synth.config, "Config JSON (defaults otherwise)");
  s->add_option("--queries-per-place", synth.queries_per_place, "Evaluation queries per place")->capture_default_str();
  s->add_option("--train-queries-per-place", synth.train_queries_per_place, "Training queries per place")
      ->capture_default_str();
  s->add_option("--noise", synth.noise, "Query appearance noise level")->capture_default_str();
  s->add_option("--spacing", synth.spacing, "Place grid spacing in meters")->capture_default_str();
  s->add_flag("--aliased", synth.aliased, "Geometry-aliased place pairs with swapped labels");
  s->add_flag("--force", synth.force, "Replace a non-empty output directory");
  s->callback([&] { action = [&] { return cmd_synth(synth, out); }; });

  std::string data, ckpt, out_path, index_path, queries_dir, results_path;
  auto* b = app.add_subcommand("build-map", "Render viewpoints and build the map index");
  b->add_option("--data", data, "Dataset directory")->required();
  b->add_option("--ckpt", ckpt, "Checkpoint (seeded initialization otherwise)");
  b->add_option("--out", out_path, "Index file")->required();
  b->callback([&] { action = [&] { return cmd_build_map(data, ckpt, out_path, out); }; });

  auto* mt = app.add_subcommand("match", "Match queries against an index");
  mt->add_option("--index", index_path, "Index file")->required();
  mt->add_option("--queries", queries_dir, "Query directory")->required();
  mt->add_option("--ckpt", ckpt, "Checkpoint (seeded initialization otherwise)");
  mt->add_option("--out", out_path, "Results CSV")->required();
  mt->callback([&] { action = [&] { return cmd_match(index_path, queries_dir, ckpt, out_path, out); }; });

  int epochs = 10;
  double lr = 1e-2;
  auto* t = app.add_subcommand("train", "Train encoder, attention and NetVLAD parameters");
  t->add_option("--data", data, "Dataset directory")->required();
  t->add_option("--queries", queries_dir, "Training query directory (default DATA/queries_train)");
  t->add_option("--epochs", epochs, "Epochs")->capture_default_str();
  t->add_option("--lr", lr, "Learning rate")->capture_default_str();
  t->add_option("--out", out_path, "Checkpoint file")->required();
  t->callback([&] { action = [&] { return cmd_train(data, queries_dir, epochs, lr, out_path, out); }; });

  std::vector<int> ks{1, 5};
  auto* e = app.add_subcommand("eval", "Recall@k of a results file");
  e->add_option("--results", results_path, "Results CSV from match")->required();
  e->add_option("--data", data, "Dataset directory")->required();
  e->add_option("--queries", queries_dir, "Query directory (default DATA/queries)");
  e->add_option("--k", ks, "Comma-separated k values")->delimiter(',')->capture_default_str();
  e->add_option("--out", out_path, "Recall CSV (default RESULTS with .recall.csv)");
  e->callback([&] { action = [&] { return cmd_eval(results_path, data, queries_dir, ks, out_path, out); }; });

  std::uint64_t check_seed = 42;
  bool corrupt = false;
  auto* c = app.add_subcommand("selfcheck", "Gradient, NetVLAD, projection and overlap checks");
  c->add_option("--seed", check_seed, "Seed")->capture_default_str();
  c->add_flag("--debug-corrupt-gradients", corrupt, "Perturb analytic gradients (negative control)");
  c->add_option("--out", out_path, "Report CSV");
  c->callback([&] { action = [&] { return cmd_selfcheck(check_seed, corrupt, out_path, out); }; });

  int repeat = 1000;
  auto* be = app.add_subcommand("bench", "Per-stage latency");
  be->add_option("--index", index_path, "Index file")->required();
  be->add_option("--queries", queries_dir, "Query directory")->required();
  be->add_option("--repeat", repeat, "Iterations")->capture_default_str();
  be->add_option("--ckpt", ckpt, "Checkpoint (seeded initialization otherwise)");
  be->add_option("--out", out_path, "Timing CSV");
  be->callback([&] { action = [&] { return cmd_bench(index_path, queries_dir, repeat, ckpt, out_path, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    return action();
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const CheckFailed& ex) {
    err << ex.what() << '\n';
    return kExitCheck;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitData;
  }
}

}  // namespace xpr
