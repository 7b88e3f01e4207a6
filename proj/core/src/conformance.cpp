#include "neurorefine/conformance.hpp"

#include "neurorefine/rng.hpp"

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace nrf {

void run_backbone_conformance(SpeechBackbone& backbone, std::uint64_t seed, int n_length_probes) {
    if (backbone.num_layers() < 1) throw std::runtime_error("conformance: backbone must have >= 1 layer");
    if (backbone.dim() < 1) throw std::runtime_error("conformance: backbone dim must be >= 1");

    // registry names unique and snapshot/restore round-trips
    {
        std::set<std::string> names;
        for (const Param* p : backbone.params().items())
            if (!names.insert(p->name).second)
                throw std::runtime_error("conformance: duplicate parameter name " + p->name);
        const ParamSnapshot snap = snapshot_params(backbone.params());
        restore_params(backbone.params(), snap);
        if (!snapshots_equal(snap, snapshot_params(backbone.params())))
            throw std::runtime_error("conformance: snapshot/restore does not round-trip");
    }

    Rng rng(derive_seed(seed, 0xc03f04eULL));
    for (int probe = 0; probe < n_length_probes; ++probe) {
        const auto n_samples =
            static_cast<std::size_t>(SpeechBackbone::kSamplesPerFrame + rng.below(5 * 16000));
        std::vector<float> wav(n_samples);
        for (auto& s : wav) s = static_cast<float>(rng.uniform(-0.5, 0.5));

        const int frames = expected_frame_count(n_samples);
        const std::vector<Matrix> acts = backbone.layer_activations(wav);
        if (static_cast<int>(acts.size()) != backbone.num_layers() + 1)
            throw std::runtime_error("conformance: expected " + std::to_string(backbone.num_layers() + 1) +
                                     " activation matrices, got " + std::to_string(acts.size()));
        for (std::size_t l = 0; l < acts.size(); ++l) {
            if (acts[l].rows() != frames)
                throw std::runtime_error("conformance: layer " + std::to_string(l) + " has " +
                                         std::to_string(acts[l].rows()) + " frames for " +
                                         std::to_string(n_samples) + " samples, expected floor(S/320) = " +
                                         std::to_string(frames));
            if (acts[l].cols() != backbone.dim())
                throw std::runtime_error("conformance: layer " + std::to_string(l) + " has width " +
                                         std::to_string(acts[l].cols()) + ", expected " +
                                         std::to_string(backbone.dim()));
            if (!acts[l].allFinite())
                throw std::runtime_error("conformance: layer " + std::to_string(l) + " has non-finite values");
        }

        // determinism of repeated forwards
        const std::vector<Matrix> again = backbone.layer_activations(wav);
        for (std::size_t l = 0; l < acts.size(); ++l)
            if (acts[l] != again[l])
                throw std::runtime_error("conformance: repeated forward differs at layer " + std::to_string(l));
    }
}

}  // namespace nrf
