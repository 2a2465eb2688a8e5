#include "xpr/io.hpp"

#include "xpr/config_json.hpp"

#include <Eigen/SVD>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace xpr {

namespace {

constexpr char kIndexMagic[] = "XPRIDX01";
constexpr char kCheckpointMagic[] = "XPRCKPT1";
constexpr char kQueryMagic[] = "XPRQRY01";
constexpr std::size_t kMagicBytes = 8;

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  template <typename T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void i32(std::int32_t v) { uint(static_cast<std::uint32_t>(v)); }
  void f32(double v) { uint(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void magic(const char* m) { raw(m, kMagicBytes); }
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what, std::size_t at) const {
    throw DataError(source_ + ": byte " + std::to_string(at) + ": " + what);
  }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) fail(std::string("truncated while reading ") + what, pos_);
  }
  template <typename T>
  T uint(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8(const char* what) { return uint<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return uint<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return uint<std::uint64_t>(what); }
  std::int32_t i32(const char* what) { return static_cast<std::int32_t>(u32(what)); }
  double f32(const char* what) {
    const std::size_t at = pos_;
    const double v = std::bit_cast<float>(u32(what));
    if (!std::isfinite(v)) fail(std::string("non-finite ") + what, at);
    return v;
  }
  double f64(const char* what) {
    const std::size_t at = pos_;
    const double v = std::bit_cast<double>(u64(what));
    if (!std::isfinite(v)) fail(std::string("non-finite ") + what, at);
    return v;
  }
  void bytes(std::uint8_t* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  void magic(const char* expected) {
    need(kMagicBytes, "magic");
    if (std::memcmp(bytes_.data(), expected, kMagicBytes) != 0) {
      fail(std::string("bad magic, expected ") + expected, 0);
    }
    pos_ += kMagicBytes;
  }
  void version() {
    const std::size_t at = pos_;
    const std::uint16_t v = u16("version");
    if (v != kFormatVersion) fail("unsupported version " + std::to_string(v), at);
  }
  void finish() const {
    if (remaining() != 0) fail(std::to_string(remaining()) + " trailing bytes", pos_);
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const Config& c) {
  w.i32(c.n_classes);
  w.i32(c.descriptor_dim);
  w.i32(c.n_viewpoints);
  w.i32(c.range_rows);
  w.i32(c.range_cols);
  w.f64(c.vfov_up);
  w.f64(c.vfov_down);
  w.f64(c.alpha);
  w.f64(c.beta);
  w.f64(c.lambda_sem);
  w.f64(c.margin);
  w.f64(c.temperature);
  w.u8(c.loss_kind == LossKind::kTriplet ? 0 : 1);
  w.f64(c.match_threshold_m);
  w.u64(c.seed);
  w.f64(c.max_range_m);
  w.f64(c.query_fov_deg);
  w.i32(c.netvlad_clusters);
  w.i32(c.negatives_per_anchor);
  w.i32(c.batch_size);
}

Config read_config(Reader& r) {
  const std::size_t at = r.offset();
  Config c;
  c.n_classes = r.i32("config");
  c.descriptor_dim = r.i32("config");
  c.n_viewpoints = r.i32("config");
  c.range_rows = r.i32("config");
  c.range_cols = r.i32("config");
  c.vfov_up = r.f64("config");
  c.vfov_down = r.f64("config");
  c.alpha = r.f64("config");
  c.beta = r.f64("config");
  c.lambda_sem = r.f64("config");
  c.margin = r.f64("config");
  c.temperature = r.f64("config");
  const std::uint8_t kind = r.u8("config");
  if (kind > 1) r.fail("bad loss kind " + std::to_string(kind), r.offset() - 1);
  c.loss_kind = kind == 0 ? LossKind::kTriplet : LossKind::kInfoNce;
  c.match_threshold_m = r.f64("config");
  c.seed = r.u64("config");
  c.max_range_m = r.f64("config");
  c.query_fov_deg = r.f64("config");
  c.netvlad_clusters = r.i32("config");
  c.negatives_per_anchor = r.i32("config");
  c.batch_size = r.i32("config");
  try {
    return validate_config(c);
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid config echo: ") + e.what(), at);
  }
}

std::string numbered(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu%s", i, ext);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Clouds and labels

LabeledPointCloud load_cloud_bin(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r(bytes, path.string());
  if (bytes.size() % 16 != 0) r.fail("truncated point record (size not a multiple of 16)", bytes.size() - bytes.size() % 16);
  const std::size_t n = bytes.size() / 16;
  LabeledPointCloud cloud;
  cloud.points.reserve(n);
  cloud.intensities.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = r.f32("x");
    const double y = r.f32("y");
    const double z = r.f32("z");
    cloud.points.emplace_back(x, y, z);
    cloud.intensities.push_back(r.f32("intensity"));
  }
  cloud.labels.assign(n, 0);
  return cloud;
}

void write_cloud_bin(const fs::path& path, const LabeledPointCloud& cloud) {
  if (!cloud.intensities.empty() && cloud.intensities.size() != cloud.points.size()) {
    throw DataError("write_cloud_bin: intensity count does not match point count");
  }
  Writer w;
  w.bytes.reserve(cloud.count() * 16);
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    const Vec3& p = cloud.points[i];
    if (!p.allFinite()) throw DataError("write_cloud_bin: non-finite point " + std::to_string(i));
    w.f32(p.x());
    w.f32(p.y());
    w.f32(p.z());
    w.f32(cloud.intensities.empty() ? 0.0 : cloud.intensities[i]);
  }
  write_file(path, w.bytes);
}

LabeledPointCloud load_labels(const fs::path& path, LabeledPointCloud cloud, const ClassMap& class_map) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r(bytes, path.string());
  if (bytes.size() != 4 * cloud.count()) {
    r.fail("label file holds " + std::to_string(bytes.size()) + " bytes, expected " +
               std::to_string(4 * cloud.count()) + " for " + std::to_string(cloud.count()) + " points",
           std::min(bytes.size(), 4 * cloud.count()));
  }
  cloud.labels.resize(cloud.count());
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    const std::uint32_t raw = r.u32("label") & 0xFFFFu;
    const auto it = class_map.find(raw);
    cloud.labels[i] = it == class_map.end() ? 0 : it->second;
  }
  return cloud;
}

void write_labels(const fs::path& path, const LabeledPointCloud& cloud, const ClassMap& class_map) {
  std::map<std::uint8_t, std::uint32_t> inverse{{0, 0}};
  for (const auto& [raw, c] : class_map) {
    if (c != 0) inverse.emplace(c, raw);  // map order keeps the smallest raw id
  }
  if (const auto zero = class_map.find(0); zero != class_map.end() && zero->second != 0) {
    // raw 0 names a real class; find an unmapped raw id for void
    std::uint32_t free_id = 1;
    while (class_map.count(free_id)) ++free_id;
    inverse[0] = free_id;
  }
  Writer w;
  w.bytes.reserve(cloud.count() * 4);
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    const auto it = inverse.find(cloud.labels[i]);
    if (it == inverse.end()) {
      throw DataError("write_labels: class " + std::to_string(cloud.labels[i]) + " has no raw id in the class map");
    }
    w.u32(it->second);
  }
  write_file(path, w.bytes);
}

// ---------------------------------------------------------------------------
// Poses

bool reorthonormalize(Mat3& rotation, double tol) {
  const double drift = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (drift <= tol && rotation.determinant() > 0.0) return false;
  Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  if ((u * svd.matrixV().transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  rotation = u * svd.matrixV().transpose();
  return true;
}

PoseFile load_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  PoseFile out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    double v[12];
    int count = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      double value = 0.0;
      const auto [next, ec] = std::from_chars(p, end, value);
      if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r')) {
        throw DataError(path.string() + ": line " + std::to_string(line_no) + ": not a number");
      }
      if (count < 12) v[count] = value;
      ++count;
      p = next;
    }
    if (count != 12) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected 12 values, found " +
                      std::to_string(count));
    }
    for (double x : v) {
      if (!std::isfinite(x)) throw DataError(path.string() + ": line " + std::to_string(line_no) + ": non-finite value");
    }
    Pose pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = v[r * 4 + c];
      pose.translation[r] = v[r * 4 + 3];
    }
    if (pose.rotation.determinant() <= 0.0) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": rotation is not proper");
    }
    if (reorthonormalize(pose.rotation)) out.reorthonormalized_lines.push_back(line_no);
    out.poses.push_back(pose);
  }
  return out;
}

void write_poses(const fs::path& path, std::span<const Pose> poses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[32];
  for (const Pose& pose : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double v = c < 3 ? pose.rotation(r, c) : pose.translation[r];
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        if (r + c > 0) out << ' ';
        out.write(buf, res.ptr - buf);
      }
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Index and checkpoint

std::vector<std::uint8_t> encode_config(const Config& cfg) {
  Writer w;
  write_config(w, cfg);
  return w.bytes;
}

std::uint64_t index_file_size(const Config& cfg, std::size_t places, std::size_t entries) {
  const std::uint64_t header = kMagicBytes + 2 + 4 + 4 + kConfigEchoBytes;
  const std::uint64_t place = 4 + 3 * 8;
  const std::uint64_t entry = 4 + 4 + 12 * 8 + 1 + 4 * static_cast<std::uint64_t>(cfg.descriptor_dim) +
                              static_cast<std::uint64_t>(cfg.range_rows) * static_cast<std::uint64_t>(cfg.range_cols);
  return header + place * places + entry * entries;
}

void save_index(const fs::path& path, const MapIndex& index) {
  const Config& cfg = index.config;
  Writer w;
  w.bytes.reserve(index_file_size(cfg, index.places.size(), index.entries.size()));
  w.magic(kIndexMagic);
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(index.places.size()));
  w.u32(static_cast<std::uint32_t>(index.entries.size()));
  write_config(w, cfg);
  for (const Place& p : index.places) {
    w.u32(p.id);
    for (int i = 0; i < 3; ++i) w.f64(p.position[i]);
  }
  for (const MapEntry& e : index.entries) {
    if (static_cast<int>(e.descriptor.values.size()) != cfg.descriptor_dim) {
      throw DataError("save_index: descriptor length does not match descriptor_dim");
    }
    if (!e.semantics.same_shape(cfg.range_rows, cfg.range_cols)) {
      throw DataError("save_index: semantic image shape does not match the configuration");
    }
    w.u32(e.place_id);
    w.u32(e.viewpoint);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) w.f64(e.pose.rotation(r, c));
    for (int i = 0; i < 3; ++i) w.f64(e.pose.translation[i]);
    w.u8(e.descriptor.empty ? 1 : 0);
    for (double v : e.descriptor.values) w.f32(v);
    w.raw(e.semantics.data.data(), e.semantics.size());
  }
  write_file(path, w.bytes);
}

MapIndex load_index(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r(bytes, path.string());
  r.magic(kIndexMagic);
  r.version();
  const std::uint32_t n_places = r.u32("place count");
  const std::uint32_t n_entries = r.u32("entry count");
  MapIndex index;
  index.config = read_config(r);
  const Config& cfg = index.config;
  if (bytes.size() != index_file_size(cfg, n_places, n_entries)) {
    r.fail("file size " + std::to_string(bytes.size()) + " does not match the header (expected " +
               std::to_string(index_file_size(cfg, n_places, n_entries)) + ")",
           r.offset());
  }
  index.places.resize(n_places);
  for (Place& p : index.places) {
    p.id = r.u32("place id");
    for (int i = 0; i < 3; ++i) p.position[i] = r.f64("place position");
  }
  index.entries.resize(n_entries);
  for (MapEntry& e : index.entries) {
    e.place_id = r.u32("entry place");
    e.viewpoint = r.u32("entry viewpoint");
    for (int row = 0; row < 3; ++row)
      for (int c = 0; c < 3; ++c) e.pose.rotation(row, c) = r.f64("entry pose");
    for (int i = 0; i < 3; ++i) e.pose.translation[i] = r.f64("entry pose");
    const std::size_t flag_at = r.offset();
    const std::uint8_t flag = r.u8("entry flag");
    if (flag > 1) r.fail("bad empty flag", flag_at);
    e.descriptor.empty = flag == 1;
    e.descriptor.values.resize(static_cast<std::size_t>(cfg.descriptor_dim));
    for (double& v : e.descriptor.values) v = r.f32("descriptor");
    e.semantics = SemanticImage(cfg.range_rows, cfg.range_cols);
    const std::size_t sem_at = r.offset();
    r.bytes(e.semantics.data.data(), e.semantics.size(), "semantics");
    for (std::size_t i = 0; i < e.semantics.size(); ++i) {
      if (e.semantics.data[i] >= cfg.n_classes) r.fail("semantic label out of range", sem_at + i);
    }
    e.histogram = semantic_histogram(e.semantics, cfg);
  }
  r.finish();
  index.validate();
  return index;
}

namespace {

struct TensorSpec {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<double>* values;
};

std::vector<TensorSpec> tensor_specs(ModelParams& p) {
  const auto u = [](int v) { return static_cast<std::uint32_t>(v); };
  return {
      {"enc.rgb_proj", {u(p.enc.in_channels), u(p.enc.channels)}, &p.enc.rgb_proj},
      {"enc.rgb_bias", {u(p.enc.channels)}, &p.enc.rgb_bias},
      {"enc.seg_head", {u(p.enc.channels), u(p.enc.n_classes)}, &p.enc.seg_head},
      {"enc.seg_bias", {u(p.enc.n_classes)}, &p.enc.seg_bias},
      {"enc.desc_proj", {u(p.enc.channels), u(p.enc.channels)}, &p.enc.desc_proj},
      {"att.bilinear", {u(p.att.channels), u(p.att.n_classes)}, &p.att.bilinear},
      {"vlad.centroids", {u(p.vlad.clusters), u(p.vlad.channels)}, &p.vlad.centroids},
      {"vlad.assign_w", {u(p.vlad.clusters), u(p.vlad.channels)}, &p.vlad.assign_w},
      {"vlad.assign_b", {u(p.vlad.clusters)}, &p.vlad.assign_b},
      {"vlad.projection", {u(p.vlad.out_dim), u(p.vlad.clusters * p.vlad.channels)}, &p.vlad.projection},
  };
}

void write_tensor(Writer& w, std::string_view name, std::span<const std::uint32_t> shape,
                  std::span<const double> values) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (std::uint32_t d : shape) w.u32(d);
  for (double v : values) w.f32(v);
}

void read_tensor(Reader& r, std::string_view name, std::span<const std::uint32_t> shape, std::span<double> values) {
  const std::size_t at = r.offset();
  const std::uint16_t len = r.u16("tensor name length");
  std::string got(len, '\0');
  r.bytes(reinterpret_cast<std::uint8_t*>(got.data()), len, "tensor name");
  if (got != name) r.fail("expected tensor " + std::string(name) + ", found " + got, at);
  const std::size_t shape_at = r.offset();
  const std::uint8_t ndim = r.u8("tensor rank");
  std::vector<std::uint32_t> dims(ndim);
  for (std::uint32_t& d : dims) d = r.u32("tensor shape");
  if (!std::equal(dims.begin(), dims.end(), shape.begin(), shape.end())) {
    r.fail("tensor " + std::string(name) + " has a shape that does not match the configuration", shape_at);
  }
  for (double& v : values) v = r.f32(got.c_str());
}

}  // namespace

void save_checkpoint(const fs::path& path, const ModelParams& params, const Config& cfg) {
  check_model_shapes(params, cfg);
  ModelParams copy = params;
  const std::vector<TensorSpec> specs = tensor_specs(copy);
  Writer w;
  w.magic(kCheckpointMagic);
  w.u16(kFormatVersion);
  write_config(w, cfg);
  w.u32(static_cast<std::uint32_t>(specs.size() + 1));
  for (const TensorSpec& t : specs) write_tensor(w, t.name, t.shape, *t.values);
  const std::uint32_t one = 1;
  write_tensor(w, "att.gain", std::span<const std::uint32_t>(&one, 1), std::span<const double>(&copy.att.gain, 1));
  write_file(path, w.bytes);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r(bytes, path.string());
  r.magic(kCheckpointMagic);
  r.version();
  Checkpoint ck;
  ck.config = read_config(r);
  ck.params = init_model(ck.config);
  const std::vector<TensorSpec> specs = tensor_specs(ck.params);
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32("tensor count");
  if (count != specs.size() + 1) r.fail("unexpected tensor count " + std::to_string(count), count_at);
  for (const TensorSpec& t : specs) read_tensor(r, t.name, t.shape, *t.values);
  const std::uint32_t one = 1;
  read_tensor(r, "att.gain", std::span<const std::uint32_t>(&one, 1), std::span<double>(&ck.params.att.gain, 1));
  r.finish();
  return ck;
}

// ---------------------------------------------------------------------------
// Queries

void save_query(const fs::path& path, const QueryRecord& q) {
  const QueryObservation& o = q.obs;
  const std::size_t cells = static_cast<std::size_t>(o.rows) * o.cols;
  if (o.raw.size() != cells * o.in_channels || o.valid.size() != cells) {
    throw DataError("save_query: observation buffers do not match its shape");
  }
  const bool has_labels = o.gt_labels.size() > 0;
  if (has_labels && !o.gt_labels.same_shape(o.rows, o.cols)) {
    throw DataError("save_query: ground-truth label shape does not match the observation");
  }
  Writer w;
  w.magic(kQueryMagic);
  w.u16(kFormatVersion);
  w.u32(q.query_id);
  w.u32(q.place_id);
  w.f64(q.heading);
  for (int i = 0; i < 3; ++i) w.f64(q.gt_position[i]);
  w.u32(static_cast<std::uint32_t>(o.rows));
  w.u32(static_cast<std::uint32_t>(o.cols));
  w.u32(static_cast<std::uint32_t>(o.in_channels));
  for (double v : o.raw) w.f64(v);
  w.raw(o.valid.data(), cells);
  w.u8(has_labels ? 1 : 0);
  if (has_labels) w.raw(o.gt_labels.data.data(), cells);
  write_file(path, w.bytes);
}

QueryRecord load_query(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  Reader r(bytes, path.string());
  r.magic(kQueryMagic);
  r.version();
  QueryRecord q;
  q.query_id = r.u32("query id");
  q.place_id = r.u32("place id");
  q.heading = r.f64("heading");
  for (int i = 0; i < 3; ++i) q.gt_position[i] = r.f64("ground-truth position");
  QueryObservation& o = q.obs;
  const std::size_t shape_at = r.offset();
  const std::uint32_t rows = r.u32("rows");
  const std::uint32_t cols = r.u32("cols");
  const std::uint32_t in_ch = r.u32("channels");
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096 || in_ch != kQueryInputChannels) {
    r.fail("implausible observation shape", shape_at);
  }
  o.rows = static_cast<int>(rows);
  o.cols = static_cast<int>(cols);
  o.in_channels = static_cast<int>(in_ch);
  const std::size_t cells = static_cast<std::size_t>(rows) * cols;
  r.need(cells * in_ch * 8, "observation");
  o.raw.resize(cells * in_ch);
  for (double& v : o.raw) v = r.f64("observation");
  o.valid.resize(cells);
  r.bytes(o.valid.data(), cells, "valid mask");
  const std::size_t flag_at = r.offset();
  const std::uint8_t has_labels = r.u8("label flag");
  if (has_labels > 1) r.fail("bad label flag", flag_at);
  if (has_labels) {
    o.gt_labels = SemanticImage(o.rows, o.cols);
    r.bytes(o.gt_labels.data.data(), cells, "labels");
  }
  r.finish();
  return q;
}

std::vector<QueryRecord> load_queries(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("query directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".qry") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<QueryRecord> out;
  out.reserve(files.size());
  for (const fs::path& f : files) out.push_back(load_query(f));
  return out;
}

void save_queries(const fs::path& dir, std::span<const QueryRecord> queries) {
  fs::create_directories(dir);
  for (const QueryRecord& q : queries) save_query(dir / numbered(q.query_id, ".qry"), q);
}

// ---------------------------------------------------------------------------
// Dataset layout

nlohmann::json meta_to_json(const DatasetMeta& meta) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [raw, c] : meta.class_map) classes[std::to_string(raw)] = c;
  nlohmann::json places = nlohmann::json::array();
  for (const Place& p : meta.places) {
    places.push_back({{"id", p.id}, {"position", {p.position.x(), p.position.y(), p.position.z()}}});
  }
  return nlohmann::json{{"format", "xpr-dataset"},
                        {"version", kFormatVersion},
                        {"config", config_to_json(meta.config)},
                        {"class_map", classes},
                        {"places", places},
                        {"provenance", meta.provenance}};
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string()) != "xpr-dataset") throw DataError("meta.json: not an xpr dataset");
    if (j.at("version").get<int>() != kFormatVersion) throw DataError("meta.json: unsupported version");
    DatasetMeta meta;
    meta.config = config_from_json(j.at("config"));
    for (const auto& [key, value] : j.at("class_map").items()) {
      std::uint32_t raw = 0;
      const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), raw);
      if (ec != std::errc() || ptr != key.data() + key.size() || raw > 0xFFFFu) {
        throw DataError("meta.json: class_map key '" + key + "' is not a 16-bit id");
      }
      const int c = value.get<int>();
      if (c < 0 || c >= meta.config.n_classes) {
        throw DataError("meta.json: class_map[" + key + "] = " + std::to_string(c) + " is outside [0, n_classes)");
      }
      meta.class_map[raw] = static_cast<std::uint8_t>(c);
    }
    for (const auto& p : j.at("places")) {
      const auto pos = p.at("position").get<std::vector<double>>();
      if (pos.size() != 3) throw DataError("meta.json: place position must have 3 values");
      meta.places.push_back(Place{p.at("id").get<std::uint32_t>(), Vec3(pos[0], pos[1], pos[2])});
    }
    meta.provenance = j.value("provenance", std::string());
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("meta.json: ") + e.what());
  }
}

ClassMap synthetic_class_map() {
  return {{40, cls::kRoad}, {50, cls::kBuilding}, {70, cls::kTree}, {72, cls::kGround}, {80, cls::kPole}};
}

void write_dataset(const fs::path& root, const Dataset& ds) {
  if (ds.scans.size() != ds.meta.places.size()) throw DataError("write_dataset: scan and place counts differ");
  fs::create_directories(root / "velodyne");
  fs::create_directories(root / "labels");
  std::vector<Pose> poses;
  for (std::size_t i = 0; i < ds.scans.size(); ++i) {
    const PlaceScan& scan = ds.scans[i];
    LabeledPointCloud local = scan.cloud;
    for (Vec3& p : local.points) p = scan.anchor.to_local(p);
    write_cloud_bin(root / "velodyne" / numbered(i, ".bin"), local);
    write_labels(root / "labels" / numbered(i, ".label"), local, ds.meta.class_map);
    poses.push_back(scan.anchor);
  }
  write_poses(root / "poses.txt", poses);
  std::ofstream out(root / "meta.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (root / "meta.json").string());
  out << meta_to_json(ds.meta).dump(2) << '\n';
}

DatasetMeta load_meta(const fs::path& root) {
  const fs::path path = root / "meta.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  return meta_from_json(j);
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.meta = load_meta(root);
  const PoseFile poses = load_poses(root / "poses.txt");
  const std::size_t n = ds.meta.places.size();
  if (poses.poses.size() != n) {
    throw DataError((root / "poses.txt").string() + ": " + std::to_string(poses.poses.size()) + " poses for " +
                    std::to_string(n) + " places");
  }
  ds.scans.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path cloud_path = root / "velodyne" / numbered(i, ".bin");
    const fs::path label_path = root / "labels" / numbered(i, ".label");
    LabeledPointCloud cloud = load_labels(label_path, load_cloud_bin(cloud_path), ds.meta.class_map);
    const Pose& anchor = poses.poses[i];
    if ((anchor.translation - ds.meta.places[i].position).norm() > 1e-9) {
      throw DataError((root / "poses.txt").string() + ": line " + std::to_string(i + 1) +
                      ": pose does not match the place anchor in meta.json");
    }
    for (Vec3& p : cloud.points) p = anchor.apply(p);
    ds.scans[i] = PlaceScan{ds.meta.places[i].id, anchor, std::move(cloud)};
  }
  const fs::path velodyne = root / "velodyne";
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(velodyne)) files += entry.path().extension() == ".bin";
  if (files != n) {
    throw DataError(velodyne.string() + ": " + std::to_string(files) + " cloud files for " + std::to_string(n) +
                    " places");
  }
  return ds;
}

void check_compatible(const Config& a, const Config& b, std::string_view what) {
  const auto fail = [&](const char* field) {
    throw DataError(std::string(what) + ": configuration mismatch on " + field);
  };
  if (a.n_classes != b.n_classes) fail("n_classes");
  if (a.descriptor_dim != b.descriptor_dim) fail("descriptor_dim");
  if (a.range_rows != b.range_rows) fail("range_rows");
  if (a.range_cols != b.range_cols) fail("range_cols");
  if (a.vfov_up != b.vfov_up) fail("vfov_up");
  if (a.vfov_down != b.vfov_down) fail("vfov_down");
  if (a.max_range_m != b.max_range_m) fail("max_range_m");
  if (a.query_fov_deg != b.query_fov_deg) fail("query_fov_deg");
  if (a.netvlad_clusters != b.netvlad_clusters) fail("netvlad_clusters");
}

}  // namespace xpr
