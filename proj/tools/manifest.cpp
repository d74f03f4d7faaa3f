#include "manifest.hpp"

#include <array>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include <openssl/evp.h>

#include "labelflow/errors.hpp"

namespace labelflow::cli {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 unavailable");
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    if (in.bad()) throw IoError("read failed: " + path.string());
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    std::ostringstream hex;
    for (unsigned int k = 0; k < len; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << int{md[k]};
    return hex.str();
}

Manifest::Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["started_utc"] = utc_now();
    doc_["working_directory"] = std::filesystem::current_path().string();
    doc_["config"] = nlohmann::json::object();
    doc_["metrics"] = nlohmann::json::object();
    doc_["inputs"] = nlohmann::json::object();
    doc_["outputs"] = nlohmann::json::object();
    doc_["warnings"] = nlohmann::json::array();
    doc_["versions"] = {{"labelflow", kVersion},
                        {"compiler", __VERSION__},
                        {"cplusplus", __cplusplus},
                        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

void Manifest::add_input(const std::filesystem::path& path) {
    doc_["inputs"][path.string()] = sha256_file(path);
}

void Manifest::add_output(const std::filesystem::path& path) { outputs_.push_back(path); }

void Manifest::warn(const std::string& message) { doc_["warnings"].push_back(message); }

void Manifest::write(const std::filesystem::path& dir, int exit_status) {
    doc_["exit_status"] = exit_status;
    doc_["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    for (const auto& p : outputs_) {
        if (std::filesystem::exists(p)) doc_["outputs"][p.lexically_relative(dir).generic_string()] = sha256_file(p);
    }
    const auto path = dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc_.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace labelflow::cli
