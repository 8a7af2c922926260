#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gazeswap {

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

/// Strict parsers: the whole field must be consumed. Throw ConfigError otherwise.
double parse_double(std::string_view text);
int64_t parse_int(std::string_view text);

/// Shortest representation that round-trips exactly.
std::string format_double(double v);

/// Header plus rows of a comma separated file without quoting.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column; throws ConfigError if absent.
    size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

}  // namespace gazeswap
