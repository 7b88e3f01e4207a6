#include "neurorefine/manifest.hpp"

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace nrf {

namespace {

std::string digest_to_hex(const unsigned char* d, unsigned len) {
    static const char* hex = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned i = 0; i < len; ++i) {
        out[2 * i] = hex[d[i] >> 4];
        out[2 * i + 1] = hex[d[i] & 0xf];
    }
    return out;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
        throw std::runtime_error("sha256: digest computation failed");
    return digest_to_hex(digest, len);
}

std::string sha256_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("sha256_file: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return sha256_hex(ss.str());
}

void Manifest::add_file(const std::string& root, const std::string& rel_path) {
    hashes[rel_path] = sha256_file(root + "/" + rel_path);
}

void Manifest::save(const std::string& path) const {
    nlohmann::json j;
    for (const auto& [k, v] : hashes) j[k] = v;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("Manifest::save: cannot open " + path);
    f << j.dump(2) << "\n";
}

Manifest Manifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("Manifest::load: cannot open " + path);
    nlohmann::json j;
    f >> j;
    Manifest m;
    for (auto it = j.begin(); it != j.end(); ++it) m.hashes[it.key()] = it.value().get<std::string>();
    return m;
}

}  // namespace nrf
