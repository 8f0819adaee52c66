#include "h2scope/common/json_io.hpp"

#include <fstream>

#include "h2scope/common/error.hpp"

namespace h2scope {

void check_schema(const json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw Error(ErrorCode::SchemaMismatch, "record has no schema_version");
  const auto& v = j.at("schema_version");
  if (!v.is_number_integer() || v.get<int>() != kSchemaVersion)
    throw Error(ErrorCode::SchemaMismatch,
                "schema_version " + v.dump() + " != " + std::to_string(kSchemaVersion));
}

std::vector<json> read_ndjson(std::istream& in) {
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<json> read_ndjson_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_ndjson(in);
}

void write_ndjson_line(std::ostream& out, const json& j) {
  out << j.dump() << '\n';
}

}  // namespace h2scope
