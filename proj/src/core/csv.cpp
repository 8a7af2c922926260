#include "gazeswap/csv.hpp"

#include <array>
#include <charconv>
#include <fstream>

#include "gazeswap/error.hpp"

namespace gazeswap {

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = text.find(sep, start);
        out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

std::string trim(std::string_view text) {
    size_t b = text.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    size_t e = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(b, e - b + 1));
}

double parse_double(std::string_view text) {
    std::string t = trim(text);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError("not a number: '" + t + "'");
    }
    return v;
}

int64_t parse_int(std::string_view text) {
    std::string t = trim(text);
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError("not an integer: '" + t + "'");
    }
    return v;
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

size_t CsvTable::column(std::string_view name) const {
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    throw ConfigError("CSV is missing column '" + std::string(name) + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) {
        throw ConfigError("empty CSV file " + path.string());
    }
    t.header = split(trim(line), ',');
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        std::string row = trim(line);
        if (row.empty()) {
            continue;
        }
        auto fields = split(row, ',');
        if (fields.size() != t.header.size()) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(t.header.size()) + " columns");
        }
        t.rows.push_back(std::move(fields));
    }
    return t;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    auto emit = [&](const std::vector<std::string>& fields) {
        for (size_t i = 0; i < fields.size(); ++i) {
            out << (i ? "," : "") << fields[i];
        }
        out << "\n";
    };
    emit(table.header);
    for (const auto& r : table.rows) {
        emit(r);
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

}  // namespace gazeswap
