#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nrf {

/// Mono waveform, float samples nominally in [-1, 1].
struct Waveform {
    int sample_rate = 16000;
    std::vector<float> samples;

    double duration_seconds() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

/// Reads a mono 16-bit PCM WAV file. Anything else is rejected.
Waveform load_wav(const std::string& path);

/// Writes mono 16-bit PCM. Samples are clamped to [-1, 1] before quantizing.
void save_wav(const Waveform& wav, const std::string& path);

}  // namespace nrf
