#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace nrf {

/// One named float array inside a checkpoint. Values are held as double in
/// memory; the on-disk payload is little-endian float32.
struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
};

/// Versioned named-array container.
///
/// Byte layout (documented for cross-implementation loading):
///   [0..3]   magic "NRCK"
///   [4..7]   format version, u32 little-endian (currently 1)
///   [8..15]  header byte length H, u64 little-endian
///   [16..16+H)      header: UTF-8 JSON
///                   { "meta": <free-form object>,
///                     "arrays": [ {"name", "dtype":"f32", "shape":[...],
///                                  "offset": <bytes into payload>}, ... ] }
///   [16+H..end)     payload: per array, shape-product float32 values,
///                   little-endian, row-major, at the stated offset
class Checkpoint {
public:
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json meta;

    void add(const std::string& name, std::vector<int> shape, const double* values, std::size_t n);
    const NamedArray* find(const std::string& name) const;
    const NamedArray& require(const std::string& name) const;
    const std::vector<NamedArray>& arrays() const { return arrays_; }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

private:
    std::vector<NamedArray> arrays_;
};

}  // namespace nrf
