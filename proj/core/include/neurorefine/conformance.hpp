#pragma once

#include "neurorefine/backbone.hpp"

#include <cstdint>

namespace nrf {

/// Interface conformance checks any SpeechBackbone implementation must pass
/// before the downstream pipeline will accept it: frame-count law over random
/// input lengths, layer count and width consistency, determinism of repeated
/// forwards, and snapshot/restore round-tripping of the parameter registry.
/// Throws with a descriptive message on the first violation.
void run_backbone_conformance(SpeechBackbone& backbone, std::uint64_t seed = 0, int n_length_probes = 12);

}  // namespace nrf
