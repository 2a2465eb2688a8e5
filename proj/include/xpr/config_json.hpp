// JSON text form of Config: one top-level key per field.
#pragma once

#include "xpr/core.hpp"

#include <json.hpp>

#include <filesystem>

namespace xpr {

nlohmann::json config_to_json(const Config& cfg);
/// Missing keys keep their defaults; unknown keys are rejected. The result is validated.
Config config_from_json(const nlohmann::json& j);

Config load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const Config& cfg);

}  // namespace xpr
