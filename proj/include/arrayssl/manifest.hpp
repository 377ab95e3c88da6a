#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "arrayssl/common.hpp"

#include "json.hpp"

namespace arrayssl {

// 64-bit FNV-1a over a file's bytes; the manifest uses it to make runs
// auditable without storing inputs.
inline uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("fnv1a_file: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64-bit offset basis
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    return h;
}

inline std::string hex_u64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Audit record emitted once per CLI run.
struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;  // flag snapshot
    uint64_t seed = 0;
    std::map<std::string, std::string> input_hashes;  // path -> fnv1a hex
    std::vector<std::string> outputs;
    double wall_seconds = 0.0;

    void add_input(const std::string& path) { input_hashes[path] = hex_u64(fnv1a_file(path)); }
};

inline void save_manifest(const std::string& path, const RunManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["config"] = m.config;
    j["seed"] = m.seed;
    j["input_hashes"] = m.input_hashes;
    j["outputs"] = m.outputs;
    j["wall_seconds"] = m.wall_seconds;
    std::ofstream out(path);
    if (!out) throw FormatError("save_manifest: cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw FormatError("save_manifest: write failed for " + path);
}

// Simple wall-clock scope for manifest timing.
struct WallClock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace arrayssl
