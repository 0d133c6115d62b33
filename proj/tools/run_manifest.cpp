#include "run_manifest.hpp"

#include <array>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "gpcl/error.hpp"

namespace gpcl::cli {

std::string git_blob_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string header = "blob " + std::to_string(body.size()) + '\0';

    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, body.data(), body.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, digest.data(), &length) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error("SHA-1 digest failed");

    std::ostringstream hex;
    for (unsigned int i = 0; i < length; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return hex.str();
}

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)), cwd_(std::filesystem::current_path().string()),
      started_(std::chrono::steady_clock::now()) {
    const std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
    started_utc_ = buf;
}

void RunManifest::add_input(const std::string& role, const std::filesystem::path& path) {
    inputs_.push_back({role, std::filesystem::absolute(path), git_blob_hash(path)});
}

void RunManifest::add_output(const std::string& role, const std::filesystem::path& path) {
    outputs_.push_back({role, std::filesystem::absolute(path), git_blob_hash(path)});
}

nlohmann::json RunManifest::to_json() const {
    using nlohmann::json;
    auto artifacts = [](const std::vector<Artifact>& list) {
        json out = json::array();
        for (const auto& a : list) out.push_back({{"role", a.role}, {"path", a.path.string()}, {"hash", a.hash}});
        return out;
    };
    json timings = timings_;
    timings["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    return {
        {"command", command_},
        {"argv", argv_},
        {"cwd", cwd_},
        {"started_utc", started_utc_},
        {"config", config_},
        {"seeds", seeds_},
        {"inputs", artifacts(inputs_)},
        {"outputs", artifacts(outputs_)},
        {"timings", timings},
    };
}

void RunManifest::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
}

} // namespace gpcl::cli
