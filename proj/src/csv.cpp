#include "labelflow/csv.hpp"

#include <charconv>

#include "labelflow/errors.hpp"

namespace labelflow {

namespace {

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

int CsvTable::column(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == name) return static_cast<int>(c);
    }
    return -1;
}

CsvTable read_csv(const std::filesystem::path& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    CsvTable table;
    std::string line;
    std::size_t lineno = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto trimmed = trim(line);
        if (trimmed.empty()) continue;
        auto fields = split(trimmed);
        if (has_header && table.header.empty()) {
            for (auto f : fields) table.header.emplace_back(trim(f));
            width = fields.size();
            continue;
        }
        if (width == 0) width = fields.size();
        if (fields.size() != width) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(width) + " fields, found " + std::to_string(fields.size()));
        }
        std::vector<double> values(width);
        for (std::size_t c = 0; c < width; ++c) {
            const auto f = trim(fields[c]);
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), values[c]);
            if (ec != std::errc{} || ptr != f.data() + f.size()) {
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad number '" +
                              std::string(f) + "'");
            }
        }
        table.rows.push_back(std::move(values));
    }
    if (in.bad()) throw IoError("read failed: " + path.string());
    if (has_header && table.header.empty()) throw IoError(path.string() + ": missing header row");
    return table;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, std::span<const std::string> header)
    : path_(path), out_(path), width_(header.size()) {
    if (!out_) throw IoError("cannot write " + path.string());
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c) out_ << ',';
        out_ << header[c];
    }
    out_ << '\n';
}

void CsvWriter::row(std::span<const double> values) {
    if (values.size() != width_) throw IoError("row width mismatch writing " + path_.string());
    for (std::size_t c = 0; c < values.size(); ++c) {
        if (c) out_ << ',';
        out_ << format_double(values[c]);
    }
    out_ << '\n';
    if (!out_) throw IoError("write failed: " + path_.string());
}

void CsvWriter::close() {
    out_.close();
    if (out_.fail()) throw IoError("write failed: " + path_.string());
}

}  // namespace labelflow
