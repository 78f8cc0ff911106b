// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace silab::io {

/// Shortest round-trip decimal representation of a double (%.17g trimmed).
/// All file output goes through this so artifacts are byte-stable.
std::string fmt(double x);

/// Resolve an output path: absolute paths pass through; relative paths are
/// joined onto the SILAB_OUTPUT_DIR environment variable when it is set,
/// otherwise onto the current directory. Parent directories are created.
std::filesystem::path resolve_output(const std::string& path);

/// Write a CSV file: optional "# key=value" metadata lines, a header row,
/// then data rows (already formatted).
void write_csv(const std::filesystem::path& path,
               const std::vector<std::pair<std::string, std::string>>& metadata,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// Read a CSV written by write_csv: returns (metadata, header, rows).
struct CsvContent {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvContent read_csv(const std::filesystem::path& path);

nlohmann::json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Hex digest of a canonical parameter string (FNV-1a based).
std::string digest(const std::string& canonical);

}  // namespace silab::io
