#pragma once

#include <filesystem>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace h2scope {

using json = nlohmann::json;

// Bumped whenever a serialized record changes shape.
inline constexpr int kSchemaVersion = 1;

// Throws Error(SchemaMismatch) unless |j| carries the current schema_version.
void check_schema(const json& j);

// One JSON document per line. Blank lines are skipped.
std::vector<json> read_ndjson(std::istream& in);
std::vector<json> read_ndjson_file(const std::filesystem::path& path);
void write_ndjson_line(std::ostream& out, const json& j);

}  // namespace h2scope
