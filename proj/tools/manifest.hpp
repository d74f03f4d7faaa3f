#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace labelflow::cli {

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Run record written as manifest.json next to the outputs.
class Manifest {
public:
    explicit Manifest(std::string command);

    nlohmann::json& config() { return doc_["config"]; }
    nlohmann::json& metrics() { return doc_["metrics"]; }
    void set_seed(std::uint64_t seed) { doc_["seed"] = seed; }
    void add_input(const std::filesystem::path& path);
    void add_output(const std::filesystem::path& path);
    void warn(const std::string& message);
    /// Stamps wall-clock and exit status, digests outputs, writes the file.
    void write(const std::filesystem::path& dir, int exit_status);

private:
    nlohmann::json doc_;
    std::vector<std::filesystem::path> outputs_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace labelflow::cli
