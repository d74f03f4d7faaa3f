#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace labelflow {

/// Numeric CSV with a mandatory header row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    /// Column index by name, or -1.
    int column(std::string_view name) const;
};

/// Parses every data row as doubles. Throws IoError naming the line on a
/// ragged row or an unparsable field.
CsvTable read_csv(const std::filesystem::path& path, bool has_header = true);

/// Shortest round-trip decimal form of `v`.
std::string format_double(double v);

/// Line-oriented writer; throws IoError if the file cannot be opened or a
/// write fails.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, std::span<const std::string> header);
    void row(std::span<const double> values);
    void close();

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::size_t width_;
};

}  // namespace labelflow
