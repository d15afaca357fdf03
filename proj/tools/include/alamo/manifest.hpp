#pragma once

#include <chrono>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace alamo::cli {

/// Lowercase hex SHA-256 of a file's bytes.
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);

/// Record of one command invocation; written as manifest.json.
class Manifest {
public:
    Manifest(std::string command, std::vector<std::string> argv);

    void set_config(nlohmann::json config) { doc_["resolved_config"] = std::move(config); }
    void set_seed(std::uint64_t seed) { doc_["seed"] = seed; }
    void add_input(const std::string& role, const std::filesystem::path& p);
    /// Hashes the file now; directories are hashed file by file.
    void add_output(const std::filesystem::path& p);
    void set_timing(const std::string& key, double seconds) { doc_["timing_s"][key] = seconds; }
    nlohmann::json& extra() { return doc_["details"]; }

    /// Stamps the wall-clock duration and writes the file.
    void write(const std::filesystem::path& path);
    [[nodiscard]] const nlohmann::json& json() const { return doc_; }

private:
    nlohmann::json doc_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace alamo::cli
