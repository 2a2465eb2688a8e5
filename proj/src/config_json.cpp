#include "xpr/config_json.hpp"

#include <fstream>
#include <set>

namespace xpr {

nlohmann::json config_to_json(const Config& cfg) {
  return nlohmann::json{
      {"n_classes", cfg.n_classes},
      {"descriptor_dim", cfg.descriptor_dim},
      {"n_viewpoints", cfg.n_viewpoints},
      {"range_rows", cfg.range_rows},
      {"range_cols", cfg.range_cols},
      {"vfov_up", cfg.vfov_up},
      {"vfov_down", cfg.vfov_down},
      {"alpha", cfg.alpha},
      {"beta", cfg.beta},
      {"lambda_sem", cfg.lambda_sem},
      {"margin", cfg.margin},
      {"temperature", cfg.temperature},
      {"loss_kind", std::string(to_string(cfg.loss_kind))},
      {"match_threshold_m", cfg.match_threshold_m},
      {"seed", cfg.seed},
      {"max_range_m", cfg.max_range_m},
      {"query_fov_deg", cfg.query_fov_deg},
      {"netvlad_clusters", cfg.netvlad_clusters},
      {"negatives_per_anchor", cfg.negatives_per_anchor},
      {"batch_size", cfg.batch_size},
  };
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, std::string("wrong type: ") + e.what());
  }
}

}  // namespace

Config config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "configuration must be a JSON object");
  Config cfg;
  const std::set<std::string> known = [] {
    std::set<std::string> keys;
    const nlohmann::json defaults = config_to_json(Config{});
    for (const auto& [k, v] : defaults.items()) keys.insert(k);
    return keys;
  }();
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError(k, "unknown configuration key");
  }
  read_field(j, "n_classes", cfg.n_classes);
  read_field(j, "descriptor_dim", cfg.descriptor_dim);
  read_field(j, "n_viewpoints", cfg.n_viewpoints);
  read_field(j, "range_rows", cfg.range_rows);
  read_field(j, "range_cols", cfg.range_cols);
  read_field(j, "vfov_up", cfg.vfov_up);
  read_field(j, "vfov_down", cfg.vfov_down);
  read_field(j, "alpha", cfg.alpha);
  read_field(j, "beta", cfg.beta);
  read_field(j, "lambda_sem", cfg.lambda_sem);
  read_field(j, "margin", cfg.margin);
  read_field(j, "temperature", cfg.temperature);
  if (auto it = j.find("loss_kind"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("loss_kind", "must be a string");
    cfg.loss_kind = loss_kind_from_string(it->get<std::string>());
  }
  read_field(j, "match_threshold_m", cfg.match_threshold_m);
  read_field(j, "seed", cfg.seed);
  read_field(j, "max_range_m", cfg.max_range_m);
  read_field(j, "query_fov_deg", cfg.query_fov_deg);
  read_field(j, "netvlad_clusters", cfg.netvlad_clusters);
  read_field(j, "negatives_per_anchor", cfg.negatives_per_anchor);
  read_field(j, "batch_size", cfg.batch_size);
  return validate_config(cfg);
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const Config& cfg) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config file " + path.string());
  out << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace xpr
