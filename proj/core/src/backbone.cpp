#include "neurorefine/backbone.hpp"

#include <cmath>
#include <regex>
#include <stdexcept>

namespace nrf {

int expected_frame_count(std::size_t n_samples) {
    if (n_samples < static_cast<std::size_t>(SpeechBackbone::kSamplesPerFrame))
        throw std::invalid_argument("backbone input too short: " + std::to_string(n_samples) +
                                    " samples, need at least " + std::to_string(SpeechBackbone::kSamplesPerFrame));
    return static_cast<int>(n_samples / SpeechBackbone::kSamplesPerFrame);
}

std::vector<Matrix> extract_layer_activations(const SpeechBackbone& backbone, std::span<const float> waveform) {
    const int frames = expected_frame_count(waveform.size());
    std::vector<Matrix> acts = backbone.layer_activations(waveform);
    if (static_cast<int>(acts.size()) != backbone.num_layers() + 1)
        throw std::runtime_error("backbone returned " + std::to_string(acts.size()) + " matrices, expected " +
                                 std::to_string(backbone.num_layers() + 1));
    for (const Matrix& a : acts) {
        if (a.rows() != frames || a.cols() != backbone.dim())
            throw std::runtime_error("backbone activation shape " + std::to_string(a.rows()) + "x" +
                                     std::to_string(a.cols()) + " violates the " + std::to_string(frames) + "x" +
                                     std::to_string(backbone.dim()) + " contract");
    }
    return acts;
}

std::vector<Matrix> extract_layer_activations(const SpeechBackbone& backbone, const Waveform& waveform) {
    if (waveform.sample_rate != SpeechBackbone::kSampleRate)
        throw std::invalid_argument("backbone expects 16000 Hz input, got " + std::to_string(waveform.sample_rate));
    return extract_layer_activations(backbone, std::span<const float>(waveform.samples));
}

const ParamSnapshot::Entry* ParamSnapshot::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

ParamSnapshot snapshot_params(const ParamRegistry& registry) {
    ParamSnapshot snap;
    snap.entries.reserve(registry.size());
    for (const Param* p : registry.items())
        snap.entries.push_back({p->name, p->value.shape, p->value.data});
    return snap;
}

void restore_params(const ParamRegistry& registry, const ParamSnapshot& snapshot) {
    if (snapshot.entries.size() != registry.size())
        throw std::invalid_argument("restore_params: snapshot has " + std::to_string(snapshot.entries.size()) +
                                    " entries, registry has " + std::to_string(registry.size()));
    for (const auto& e : snapshot.entries) {
        Param* p = registry.find(e.name);
        if (!p) throw std::invalid_argument("restore_params: unknown parameter " + e.name);
        if (p->value.shape != e.shape) throw std::invalid_argument("restore_params: shape mismatch for " + e.name);
        p->value.data = e.values;
    }
}

bool snapshots_equal(const ParamSnapshot& a, const ParamSnapshot& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (const auto& ea : a.entries) {
        const auto* eb = b.find(ea.name);
        if (!eb || eb->shape != ea.shape || eb->values != ea.values) return false;
    }
    return true;
}

namespace {

ParamChange change_for(const std::string& name, const std::vector<double>& before, const std::vector<double>& after,
                       ChangeMetric metric) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const double d = after[i] - before[i];
        if (metric == ChangeMetric::RelativeL1) {
            num += std::abs(d);
            den += std::abs(before[i]);
        } else {
            num += d * d;
            den += before[i] * before[i];
        }
    }
    ParamChange c;
    c.name = name;
    if (den == 0.0) {
        c.defined = false;
        c.pct = 0.0;
        return c;
    }
    c.pct = metric == ChangeMetric::RelativeL1 ? 100.0 * num / den : 100.0 * std::sqrt(num) / std::sqrt(den);
    return c;
}

}  // namespace

std::vector<ParamChange> param_change_pct(const ParamSnapshot& before, const ParamSnapshot& after,
                                          ChangeMetric metric) {
    if (before.entries.size() != after.entries.size())
        throw std::invalid_argument("param_change_pct: snapshots have different parameter counts");
    std::vector<ParamChange> out;
    out.reserve(before.entries.size());
    for (const auto& eb : before.entries) {
        const auto* ea = after.find(eb.name);
        if (!ea) throw std::invalid_argument("param_change_pct: parameter " + eb.name + " missing from after");
        if (ea->shape != eb.shape) throw std::invalid_argument("param_change_pct: shape mismatch for " + eb.name);
        out.push_back(change_for(eb.name, eb.values, ea->values, metric));
    }
    return out;
}

std::vector<AttentionChange> attention_change_report(const ParamSnapshot& before, const ParamSnapshot& after,
                                                     ChangeMetric metric) {
    static const std::regex re(R"(encoder\.layers\.(\d+)\.attn\.([qkv])_proj\.(weight|bias)$)");
    std::vector<AttentionChange> out;
    for (const auto& eb : before.entries) {
        std::smatch m;
        if (!std::regex_search(eb.name, m, re)) continue;
        const auto* ea = after.find(eb.name);
        if (!ea) throw std::invalid_argument("attention_change_report: parameter " + eb.name + " missing from after");
        const ParamChange c = change_for(eb.name, eb.values, ea->values, metric);
        AttentionChange a;
        a.layer = std::stoi(m[1].str());
        a.param = m[2].str() == "q" ? "Q" : m[2].str() == "k" ? "K" : "V";
        a.kind = m[3].str();
        a.pct = c.pct;
        a.defined = c.defined;
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace nrf
