#include "neurorefine/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nrf {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Waveform load_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_wav: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("load_wav: " + path + " is not a RIFF/WAVE file");

    int sample_rate = 0;
    int bits = 0;
    int channels = 0;
    std::size_t data_off = 0;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const std::uint32_t chunk_len = get_u32(buf.data() + pos + 4);
        if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
            if (pos + 8 + 16 > buf.size()) throw std::runtime_error("load_wav: truncated fmt chunk");
            const unsigned char* p = buf.data() + pos + 8;
            const int format = get_u16(p);
            channels = get_u16(p + 2);
            sample_rate = static_cast<int>(get_u32(p + 4));
            bits = get_u16(p + 14);
            if (format != 1) throw std::runtime_error("load_wav: only PCM supported");
        } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
            data_off = pos + 8;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (sample_rate == 0 || data_off == 0) throw std::runtime_error("load_wav: missing fmt/data chunk");
    if (channels != 1) throw std::runtime_error("load_wav: expected mono, got " + std::to_string(channels) + " channels");
    if (bits != 16) throw std::runtime_error("load_wav: expected 16-bit PCM, got " + std::to_string(bits) + " bits");
    if (data_off + data_len > buf.size()) throw std::runtime_error("load_wav: truncated data chunk");

    Waveform wav;
    wav.sample_rate = sample_rate;
    const std::size_t n = data_len / 2;
    wav.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t s = static_cast<std::int16_t>(get_u16(buf.data() + data_off + 2 * i));
        wav.samples[i] = static_cast<float>(s) / 32768.0f;
    }
    return wav;
}

void save_wav(const Waveform& wav, const std::string& path) {
    const std::uint32_t n = static_cast<std::uint32_t>(wav.samples.size());
    std::string out;
    out.reserve(44 + 2 * n);
    out += "RIFF";
    put_u32(out, 36 + 2 * n);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<std::uint32_t>(wav.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(wav.sample_rate * 2));
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, 2 * n);
    for (float s : wav.samples) {
        const float c = std::clamp(s, -1.0f, 1.0f);
        const auto q = static_cast<std::int16_t>(std::lrintf(c * 32767.0f));
        put_u16(out, static_cast<std::uint16_t>(q));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_wav: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_wav: short write to " + path);
}

}  // namespace nrf
