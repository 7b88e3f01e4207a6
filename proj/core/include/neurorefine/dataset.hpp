#pragma once

#include "neurorefine/bold.hpp"
#include "neurorefine/tensor.hpp"
#include "neurorefine/wav.hpp"

#include <vector>

namespace nrf {

/// TR-aligned training view of one session: one stimulus window and one
/// target vector per TR, plus the split.
struct WindowedDataset {
    std::vector<StimulusWindow> windows;  // index == TR
    Matrix targets;                       // n_trs x V, double
    DatasetSplit split;
    int n = 1;
    double tr_seconds = 1.5;

    int n_trs() const { return static_cast<int>(targets.rows()); }
    int n_voxels() const { return static_cast<int>(targets.cols()); }
};

/// Assembles all windows for context length `n` and pairs them with the
/// session's (typically standardized) BOLD targets.
WindowedDataset build_windowed_dataset(const BoldSession& session, const Waveform& audio, int n,
                                       DatasetSplit split);

}  // namespace nrf
