// On-disk formats: KITTI-style clouds, labels and poses, the dataset layout,
// query observations, the map index and model checkpoints. All multi-byte
// fields are little-endian.
#pragma once

#include "xpr/matching.hpp"
#include "xpr/model.hpp"
#include "xpr/pipeline.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <span>

namespace xpr {

namespace fs = std::filesystem;

/// x, y, z, intensity as float32 records of 16 bytes. Labels come back as 0.
LabeledPointCloud load_cloud_bin(const fs::path& path);
/// Intensities are written as 0 when the cloud has none.
void write_cloud_bin(const fs::path& path, const LabeledPointCloud& cloud);

/// Raw label id (low 16 bits of a label word) to class id.
using ClassMap = std::map<std::uint32_t, std::uint8_t>;

/// Fills `cloud.labels` from u32 label words; unmapped ids become class 0.
LabeledPointCloud load_labels(const fs::path& path, LabeledPointCloud cloud, const ClassMap& class_map);
/// Writes each class as the smallest raw id mapped to it (class 0 as raw 0).
void write_labels(const fs::path& path, const LabeledPointCloud& cloud, const ClassMap& class_map);

struct PoseFile {
  std::vector<Pose> poses;
  std::vector<int> reorthonormalized_lines;  // 1-based
};

/// 12 reals per line, row-major 3x4. Rotations drifting more than 1e-6 from
/// orthonormal are projected back and their line is recorded.
PoseFile load_poses(const fs::path& path);
void write_poses(const fs::path& path, std::span<const Pose> poses);

/// Nearest rotation (SVD projection) when the drift exceeds `tol`; returns whether it changed.
bool reorthonormalize(Mat3& rotation, double tol = 1e-6);

inline constexpr std::uint16_t kFormatVersion = 1;

/// Fixed-width binary form of every Config field.
std::vector<std::uint8_t> encode_config(const Config& cfg);
inline constexpr std::size_t kConfigEchoBytes = 121;

/// Descriptors are stored as float32; build_index already rounds them, so the
/// round trip is bit-exact. Histograms are recomputed on load.
void save_index(const fs::path& path, const MapIndex& index);
MapIndex load_index(const fs::path& path);
std::uint64_t index_file_size(const Config& cfg, std::size_t places, std::size_t entries);

struct Checkpoint {
  Config config;
  ModelParams params;
};

/// Named tensors with shape headers, values as float32 (the fixed projection included).
void save_checkpoint(const fs::path& path, const ModelParams& params, const Config& cfg);
Checkpoint load_checkpoint(const fs::path& path);

void save_query(const fs::path& path, const QueryRecord& query);
QueryRecord load_query(const fs::path& path);
/// Every *.qry file in `dir`, sorted by file name.
std::vector<QueryRecord> load_queries(const fs::path& dir);
/// One NNNNNN.qry file per query, named by query id.
void save_queries(const fs::path& dir, std::span<const QueryRecord> queries);

struct DatasetMeta {
  Config config;
  ClassMap class_map;
  std::vector<Place> places;
  std::string provenance;
};

nlohmann::json meta_to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const nlohmann::json& j);

/// Map scans hold world-frame clouds in memory; files hold sensor-frame points.
struct Dataset {
  DatasetMeta meta;
  std::vector<PlaceScan> scans;
};

/// Raw ids used for synthetic data (a SemanticKITTI-like vocabulary).
ClassMap synthetic_class_map();

/// Writes velodyne/, labels/, poses.txt and meta.json under `root`.
void write_dataset(const fs::path& root, const Dataset& dataset);
Dataset load_dataset(const fs::path& root);
DatasetMeta load_meta(const fs::path& root);

/// Throws DataError naming the first field on which two configurations disagree
/// in a way that changes shapes or features.
void check_compatible(const Config& a, const Config& b, std::string_view what);

}  // namespace xpr
