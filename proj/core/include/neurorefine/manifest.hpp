#pragma once

#include <map>
#include <string>

namespace nrf {

/// SHA-256 hex digest of a byte string.
std::string sha256_hex(const std::string& bytes);

/// SHA-256 hex digest of a file's contents.
std::string sha256_file(const std::string& path);

/// Content manifest for a run directory: relative path -> sha256. Two runs
/// are byte-identical iff their manifests are equal. Timing logs are kept
/// out of the manifest on purpose.
struct Manifest {
    std::map<std::string, std::string> hashes;

    void add_file(const std::string& root, const std::string& rel_path);
    void save(const std::string& path) const;
    static Manifest load(const std::string& path);

    bool operator==(const Manifest& other) const { return hashes == other.hashes; }
};

}  // namespace nrf
