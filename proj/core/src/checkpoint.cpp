#include "neurorefine/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nrf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

void Checkpoint::add(const std::string& name, std::vector<int> shape, const double* values, std::size_t n) {
    std::size_t expect = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("Checkpoint::add: non-positive dim in " + name);
        expect *= static_cast<std::size_t>(d);
    }
    if (shape.empty()) expect = 0;
    if (expect != n) throw std::invalid_argument("Checkpoint::add: element count mismatch for " + name);
    for (const auto& a : arrays_)
        if (a.name == name) throw std::invalid_argument("Checkpoint::add: duplicate array name " + name);
    NamedArray a;
    a.name = name;
    a.shape = std::move(shape);
    a.data.assign(values, values + n);
    arrays_.push_back(std::move(a));
}

const NamedArray* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays_)
        if (a.name == name) return &a;
    return nullptr;
}

const NamedArray& Checkpoint::require(const std::string& name) const {
    const NamedArray* a = find(name);
    if (!a) throw std::runtime_error("checkpoint: missing array " + name);
    return *a;
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::json header;
    header["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
    header["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : arrays_) {
        nlohmann::json e;
        e["name"] = a.name;
        e["dtype"] = "f32";
        e["shape"] = a.shape;
        e["offset"] = offset;
        header["arrays"].push_back(e);
        offset += 4 * a.data.size();
    }
    const std::string hdr = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("Checkpoint::save: cannot open " + path);
    f.write("NRCK", 4);
    const std::uint32_t ver = kVersion;
    f.write(reinterpret_cast<const char*>(&ver), 4);
    const std::uint64_t hlen = hdr.size();
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    std::vector<float> fbuf;
    for (const auto& a : arrays_) {
        fbuf.resize(a.data.size());
        for (std::size_t i = 0; i < a.data.size(); ++i) fbuf[i] = static_cast<float>(a.data[i]);
        f.write(reinterpret_cast<const char*>(fbuf.data()), static_cast<std::streamsize>(4 * fbuf.size()));
    }
    if (!f) throw std::runtime_error("Checkpoint::save: short write to " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Checkpoint::load: cannot open " + path);
    char magic[4];
    std::uint32_t ver = 0;
    std::uint64_t hlen = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&ver), 4);
    f.read(reinterpret_cast<char*>(&hlen), 8);
    if (!f || std::memcmp(magic, "NRCK", 4) != 0)
        throw std::runtime_error("Checkpoint::load: " + path + " is not a checkpoint (bad magic)");
    if (ver != kVersion)
        throw std::runtime_error("Checkpoint::load: unsupported version " + std::to_string(ver));
    std::string hdr(hlen, '\0');
    f.read(hdr.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw std::runtime_error("Checkpoint::load: truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(hdr, nullptr, false);
    if (header.is_discarded()) throw std::runtime_error("Checkpoint::load: malformed header JSON in " + path);

    Checkpoint ck;
    ck.meta = header.value("meta", nlohmann::json::object());
    if (!header.contains("arrays")) throw std::runtime_error("Checkpoint::load: header missing 'arrays'");

    std::string payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    for (const auto& e : header["arrays"]) {
        NamedArray a;
        a.name = e.at("name").get<std::string>();
        const std::string dtype = e.at("dtype").get<std::string>();
        if (dtype != "f32") throw std::runtime_error("Checkpoint::load: unsupported dtype " + dtype);
        a.shape = e.at("shape").get<std::vector<int>>();
        std::size_t n = a.shape.empty() ? 0 : 1;
        for (int d : a.shape) n *= static_cast<std::size_t>(d);
        const std::uint64_t off = e.at("offset").get<std::uint64_t>();
        if (off + 4 * n > payload.size())
            throw std::runtime_error("Checkpoint::load: truncated payload for array " + a.name);
        a.data.resize(n);
        const float* src = reinterpret_cast<const float*>(payload.data() + off);
        for (std::size_t i = 0; i < n; ++i) a.data[i] = static_cast<double>(src[i]);
        ck.arrays_.push_back(std::move(a));
    }
    return ck;
}

}  // namespace nrf
