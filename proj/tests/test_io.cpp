#include "xpr/io.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

using namespace xpr;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("xpr_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& leaf) const { return path_ / leaf; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t u) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

LabeledPointCloud random_cloud(std::size_t n, Rng& rng) {
  LabeledPointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.emplace_back(f32(rng.uniform(-80, 80)), f32(rng.uniform(-80, 80)), f32(rng.uniform(-3, 20)));
    c.intensities.push_back(f32(rng.uniform()));
    c.labels.push_back(0);
  }
  return c;
}

Pose random_pose(Rng& rng) {
  const Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return Pose{q.normalized().toRotationMatrix(), Vec3(rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3), rng.normal())};
}

Config small_index_config() {
  Config cfg;
  cfg.range_rows = 4;
  cfg.range_cols = 12;
  cfg.descriptor_dim = 16;
  cfg.n_viewpoints = 2;
  return cfg;
}

MapIndex random_index(const Config& cfg, int places, Rng& rng) {
  MapIndex index;
  index.config = cfg;
  for (int p = 0; p < places; ++p) {
    index.places.push_back({static_cast<std::uint32_t>(p * 3), Vec3(rng.uniform(-500, 500), rng.uniform(-500, 500), 0)});
    for (int k = 0; k < cfg.n_viewpoints; ++k) {
      MapEntry e;
      e.place_id = p * 3;
      e.viewpoint = k;
      e.pose = random_pose(rng);
      e.descriptor.values.resize(cfg.descriptor_dim);
      for (double& v : e.descriptor.values) v = f32(rng.normal());
      e.semantics = SemanticImage(cfg.range_rows, cfg.range_cols);
      for (auto& l : e.semantics.data) l = static_cast<std::uint8_t>(rng.index(cfg.n_classes));
      e.histogram = semantic_histogram(e.semantics, cfg);
      index.entries.push_back(e);
    }
  }
  if (places > 0) {
    index.entries[0].descriptor.values.assign(cfg.descriptor_dim, 0.0);
    index.entries[0].descriptor.empty = true;
  }
  return index;
}

}  // namespace

TEST_CASE("cloud files") {
  TempDir dir("cloud");
  std::vector<std::uint8_t> one;
  for (float v : {1.0f, 2.0f, 3.0f, 0.5f}) append_f32(one, v);
  write_bytes(dir / "one.bin", one);
  const LabeledPointCloud c = load_cloud_bin(dir / "one.bin");
  REQUIRE(c.count() == 1);
  CHECK(c.points[0] == Vec3(1, 2, 3));
  CHECK(c.intensities[0] == 0.5);
  CHECK(c.labels[0] == 0);

  write_bytes(dir / "empty.bin", {});
  CHECK(load_cloud_bin(dir / "empty.bin").empty());

  std::vector<std::uint8_t> truncated = one;
  truncated.insert(truncated.end(), one.begin(), one.begin() + 6);
  write_bytes(dir / "trunc.bin", truncated);
  CHECK(error_of([&] { load_cloud_bin(dir / "trunc.bin"); }).find("byte 16") != std::string::npos);

  std::vector<std::uint8_t> nan = one;
  append_f32(nan, 1.0f);
  append_f32(nan, std::nanf(""));
  append_f32(nan, 1.0f);
  append_f32(nan, 1.0f);
  write_bytes(dir / "nan.bin", nan);
  CHECK(error_of([&] { load_cloud_bin(dir / "nan.bin"); }).find("byte 20") != std::string::npos);

  CHECK_THROWS_AS(load_cloud_bin(dir / "missing.bin"), DataError);

  Rng rng(40);
  const LabeledPointCloud big = random_cloud(10000, rng);
  write_cloud_bin(dir / "big.bin", big);
  CHECK(fs::file_size(dir / "big.bin") == 160000);
  const LabeledPointCloud back = load_cloud_bin(dir / "big.bin");
  CHECK(back.points == big.points);
  CHECK(back.intensities == big.intensities);
}

TEST_CASE("label files") {
  TempDir dir("labels");
  LabeledPointCloud c;
  for (int i = 0; i < 4; ++i) c.push_back(Vec3::Zero(), 0);
  std::vector<std::uint8_t> bytes;
  append_u32(bytes, 40);
  append_u32(bytes, 99);
  append_u32(bytes, (7u << 16) | 40u);  // instance bits are ignored
  append_u32(bytes, 0);
  write_bytes(dir / "a.label", bytes);
  const ClassMap map{{40, 2}, {50, 3}};
  const LabeledPointCloud l = load_labels(dir / "a.label", c, map);
  CHECK(l.labels == std::vector<std::uint8_t>{2, 0, 2, 0});

  c.push_back(Vec3::Zero(), 0);
  CHECK(error_of([&] { load_labels(dir / "a.label", c, map); }).find("byte 16") != std::string::npos);

  Rng rng(41);
  LabeledPointCloud r = random_cloud(500, rng);
  const ClassMap syn = synthetic_class_map();
  for (auto& v : r.labels) v = static_cast<std::uint8_t>(rng.index(6));
  write_labels(dir / "r.label", r, syn);
  CHECK(load_labels(dir / "r.label", r, syn).labels == r.labels);
  r.labels[3] = 7;
  CHECK_THROWS_AS(write_labels(dir / "bad.label", r, syn), DataError);
}

TEST_CASE("pose files") {
  TempDir dir("poses");
  {
    std::ofstream out(dir / "p.txt");
    out << "1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 5 0 1 0 6 0 0 1 7\n";
  }
  const PoseFile pf = load_poses(dir / "p.txt");
  REQUIRE(pf.poses.size() == 2);
  CHECK(pf.poses[0] == Pose::identity());
  CHECK(pf.poses[1].translation == Vec3(5, 6, 7));
  CHECK(pf.reorthonormalized_lines.empty());

  {
    std::ofstream out(dir / "short.txt");
    out << "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n";
  }
  CHECK(error_of([&] { load_poses(dir / "short.txt"); }).find("line 2") != std::string::npos);

  {
    std::ofstream out(dir / "drift.txt");
    out << "1 0 0 0 0 1 0 0 0 0 1 0\n1.001 0 0 0 0 1 0 0 0 0 1 0\n";
  }
  const PoseFile drift = load_poses(dir / "drift.txt");
  CHECK(drift.reorthonormalized_lines == std::vector<int>{2});
  CHECK(drift.poses[1].is_valid(1e-12));

  {
    std::ofstream out(dir / "mirror.txt");
    out << "-1 0 0 0 0 1 0 0 0 0 1 0\n";
  }
  CHECK(error_of([&] { load_poses(dir / "mirror.txt"); }).find("line 1") != std::string::npos);

  Rng rng(42);
  std::vector<Pose> poses;
  for (int i = 0; i < 100; ++i) poses.push_back(random_pose(rng));
  write_poses(dir / "rt.txt", poses);
  const PoseFile back = load_poses(dir / "rt.txt");
  REQUIRE(back.poses.size() == 100);
  for (int i = 0; i < 100; ++i) {
    CHECK((back.poses[i].rotation - poses[i].rotation).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((back.poses[i].translation - poses[i].translation).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("index files") {
  TempDir dir("index");
  const Config cfg = small_index_config();
  Rng rng(43);
  const MapIndex index = random_index(cfg, 3, rng);
  save_index(dir / "a.idx", index);
  const MapIndex back = load_index(dir / "a.idx");
  CHECK(back == index);

  std::vector<std::uint8_t> bytes(fs::file_size(dir / "a.idx"));
  {
    std::ifstream in(dir / "a.idx", std::ios::binary);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::vector<std::uint8_t> bad = bytes;
  std::memcpy(bad.data(), "XXXX", 4);
  write_bytes(dir / "bad.idx", bad);
  const std::string magic_error = error_of([&] { load_index(dir / "bad.idx"); });
  CHECK(magic_error.find("magic") != std::string::npos);
  CHECK(magic_error.find("byte 0") != std::string::npos);

  bad = bytes;
  bad[8] = 9;
  write_bytes(dir / "ver.idx", bad);
  CHECK(error_of([&] { load_index(dir / "ver.idx"); }).find("version") != std::string::npos);

  bad = bytes;
  bad.pop_back();
  write_bytes(dir / "short.idx", bad);
  CHECK_THROWS_AS(load_index(dir / "short.idx"), DataError);
}

TEST_CASE("index file size closed form") {
  TempDir dir("index_size");
  Config cfg;
  Rng rng(44);
  const MapIndex index = random_index(cfg, 50, rng);
  save_index(dir / "big.idx", index);
  // magic + version + counts + config echo, then places and entries.
  const std::uint64_t header = 8 + 2 + 4 + 4 + kConfigEchoBytes;
  const std::uint64_t per_place = 4 + 3 * 8;
  const std::uint64_t per_entry = 4 + 4 + 9 * 8 + 3 * 8 + 1 + 4 * 128 + 16 * 180;
  const std::uint64_t expected = header + 50 * per_place + 400 * per_entry;
  CHECK(fs::file_size(dir / "big.idx") == expected);
  CHECK(index_file_size(cfg, 50, 400) == expected);
  CHECK(encode_config(cfg).size() == kConfigEchoBytes);
}

TEST_CASE("checkpoint files") {
  TempDir dir("ckpt");
  Config cfg;
  cfg.seed = 77;
  ModelParams m = init_model(cfg);
  Rng rng(45);
  for_each_trainable(m, [&](std::string_view, std::span<double> t) {
    for (double& v : t) v += 0.01 * rng.normal();
  });
  round_to_float(m);
  save_checkpoint(dir / "m.ckpt", m, cfg);
  const Checkpoint c = load_checkpoint(dir / "m.ckpt");
  CHECK(c.config == cfg);
  CHECK(c.params == m);

  write_bytes(dir / "bad.ckpt", {'X', 'P', 'R', 'I', 'D', 'X', '0', '1'});
  CHECK(error_of([&] { load_checkpoint(dir / "bad.ckpt"); }).find("magic") != std::string::npos);
}

TEST_CASE("query files") {
  TempDir dir("query");
  const Config cfg;
  Rng rng(46);
  QueryRecord q;
  q.query_id = 12;
  q.place_id = 3;
  q.heading = 1.25;
  q.gt_position = Vec3(1.5, -2.25, 1.73);
  q.obs.rows = cfg.range_rows;
  q.obs.cols = frustum_window(cfg).width;
  const std::size_t cells = static_cast<std::size_t>(q.obs.rows) * q.obs.cols;
  q.obs.raw.resize(cells * kQueryInputChannels);
  for (double& v : q.obs.raw) v = rng.normal();
  q.obs.valid.resize(cells);
  for (auto& v : q.obs.valid) v = static_cast<std::uint8_t>(rng.index(2));
  q.obs.gt_labels = SemanticImage(q.obs.rows, q.obs.cols, 4);
  save_query(dir / "q.qry", q);
  const QueryRecord back = load_query(dir / "q.qry");
  CHECK(back.query_id == 12);
  CHECK(back.place_id == 3);
  CHECK(back.heading == 1.25);
  CHECK(back.gt_position == q.gt_position);
  CHECK(back.obs == q.obs);

  fs::create_directories(dir / "many");
  std::vector<QueryRecord> qs{q, q};
  qs[0].query_id = 5;
  qs[1].query_id = 2;
  save_queries(dir / "many", qs);
  const auto loaded = load_queries(dir / "many");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].query_id == 2);
  CHECK(loaded[1].query_id == 5);
}

TEST_CASE("dataset layout") {
  TempDir dir("dataset");
  Config cfg;
  Rng rng(47);
  const SyntheticWorld world = generate_world(3, rng, cfg);
  Dataset ds;
  ds.meta.config = cfg;
  ds.meta.class_map = synthetic_class_map();
  ds.meta.provenance = "unit test";
  ds.scans = scans_from_world(world);
  for (const PlaceScan& s : ds.scans) ds.meta.places.push_back({s.place_id, s.anchor.translation});
  write_dataset(dir.path(), ds);
  CHECK(fs::exists(dir / "velodyne/000002.bin"));
  CHECK(fs::exists(dir / "labels/000002.label"));
  CHECK(fs::exists(dir / "poses.txt"));
  CHECK(fs::exists(dir / "meta.json"));

  const Dataset back = load_dataset(dir.path());
  CHECK(back.meta.config == cfg);
  CHECK(back.meta.class_map == ds.meta.class_map);
  CHECK(back.meta.places == ds.meta.places);
  CHECK(back.meta.provenance == "unit test");
  REQUIRE(back.scans.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& a = ds.scans[i].cloud;
    const auto& b = back.scans[i].cloud;
    REQUIRE(a.count() == b.count());
    CHECK(a.labels == b.labels);
    double worst = 0.0;
    for (std::size_t j = 0; j < a.count(); ++j) worst = std::max(worst, (a.points[j] - b.points[j]).norm());
    CHECK(worst < 1e-4);  // sensor-frame float32 storage
  }

  fs::remove(dir / "labels/000001.label");
  CHECK_THROWS_AS(load_dataset(dir.path()), DataError);
}

TEST_CASE("configuration compatibility") {
  Config a;
  Config b = a;
  b.seed = 9;
  b.alpha = 0.5;
  CHECK_NOTHROW(check_compatible(a, b, "x"));
  b.descriptor_dim = 64;
  CHECK(error_of([&] { check_compatible(a, b, "x"); }).find("descriptor_dim") != std::string::npos);
}

TEST_CASE("seeded payload round trips") {
  TempDir dir("payloads");
  Rng rng(48);
  const ClassMap map = synthetic_class_map();
  for (int t = 0; t < 20; ++t) {
    LabeledPointCloud c = random_cloud(1 + rng.index(300), rng);
    for (auto& l : c.labels) l = static_cast<std::uint8_t>(rng.index(6));
    write_cloud_bin(dir / "c.bin", c);
    write_labels(dir / "c.label", c, map);
    const LabeledPointCloud back = load_labels(dir / "c.label", load_cloud_bin(dir / "c.bin"), map);
    CHECK(back.points == c.points);
    CHECK(back.labels == c.labels);

    Config cfg = small_index_config();
    cfg.seed = rng.next_u64();
    const MapIndex index = random_index(cfg, 1 + static_cast<int>(rng.index(4)), rng);
    save_index(dir / "i.idx", index);
    CHECK(load_index(dir / "i.idx") == index);
  }
}
