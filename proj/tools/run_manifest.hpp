#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace gpcl::cli {

// SHA-1 of "blob <size>\0<content>", as `git hash-object` computes it.
std::string git_blob_hash(const std::filesystem::path& path);

struct Artifact {
    std::string role;
    std::filesystem::path path;
    std::string hash;
};

// Everything needed to re-run a command: the argument vector, the working
// directory, the resolved config, seeds, and hashes of inputs and outputs.
class RunManifest {
public:
    RunManifest(std::string command, std::vector<std::string> argv);

    void set_config(nlohmann::json config) { config_ = std::move(config); }
    void add_seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
    void add_input(const std::string& role, const std::filesystem::path& path);
    void add_output(const std::string& role, const std::filesystem::path& path);
    void add_timing(const std::string& name, double seconds) { timings_[name] = seconds; }

    [[nodiscard]] nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;

private:
    std::string command_;
    std::vector<std::string> argv_;
    std::string cwd_;
    std::string started_utc_;
    std::chrono::steady_clock::time_point started_;
    nlohmann::json config_ = nlohmann::json::object();
    std::map<std::string, std::uint64_t> seeds_;
    std::vector<Artifact> inputs_;
    std::vector<Artifact> outputs_;
    std::map<std::string, double> timings_;
};

} // namespace gpcl::cli
