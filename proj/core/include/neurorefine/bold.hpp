#pragma once

#include "neurorefine/tensor.hpp"
#include "neurorefine/wav.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace nrf {

/// Per-TR voxel-vector time series for one scan (or a subject average).
/// `bold` is n_trs x V, float32, row-major -- exactly the bundle payload.
struct BoldSession {
    double tr_seconds = 1.5;
    std::vector<std::string> voxel_ids;
    std::vector<std::string> subject_ids;
    MatrixF bold;  // n_trs x V
    bool standardized = false;

    int n_trs() const { return static_cast<int>(bold.rows()); }
    int n_voxels() const { return static_cast<int>(bold.cols()); }

    void validate() const;
};

enum class Hemisphere { L, R };

Hemisphere hemisphere_from_string(const std::string& s);
std::string to_string(Hemisphere h);

/// Voxel id -> (hemisphere, ROI label) lookup, e.g. a Glasser-style surface
/// parcellation flattened to one row per vertex.
struct RoiAtlas {
    struct Entry {
        Hemisphere hemisphere;
        std::string roi_label;
    };
    std::map<std::string, Entry> entries;
    std::string source_name;
};

/// Atlas CSV with header `voxel_id,hemisphere,roi_label`.
RoiAtlas load_atlas_csv(const std::string& path);
void save_atlas_csv(const RoiAtlas& atlas, const std::string& path);

/// Voxels whose ROI label is in `roi_labels`, ordered hemisphere-major
/// (all L, then all R) and by voxel id ascending within a hemisphere.
/// Unknown labels and empty selections are errors.
std::vector<std::string> select_roi_voxels(const RoiAtlas& atlas, const std::set<std::string>& roi_labels);

/// The 1.5*n seconds of audio feeding the prediction of one TR.
struct StimulusWindow {
    int tr_index = 0;
    int n = 1;  // context length in TRs (current + n-1 previous)
    int sample_rate = 16000;
    std::vector<float> samples;       // length n * tr_seconds * sample_rate
    std::int64_t n_padding_samples = 0;  // synthetic leading zeros
};

/// Cuts the window ending at TR `tr_index` out of the full-session waveform.
/// TRs before the session start are zero-filled on the left and counted in
/// n_padding_samples.
StimulusWindow assemble_window(const Waveform& audio, int tr_index, int n, double tr_seconds, int n_trs);

enum class SplitMode { Shuffled, Contiguous };

struct DatasetSplit {
    std::vector<int> train, val, test;  // disjoint TR indices; sorted ascending
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{0.8, 0.1, 0.1};
    SplitMode mode = SplitMode::Shuffled;
};

/// Shuffled 8:1:1-style split. Sizes are floor-allocated for val and test,
/// remainder TRs go to train. Deterministic in `seed`.
DatasetSplit split_trs(int n_trs, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Contiguous-block alternative (train = leading block, then val, then test).
/// Avoids audio overlap between splits at the cost of protocol fidelity.
DatasetSplit split_trs_contiguous(int n_trs, const std::array<double, 3>& ratios);

/// Per-voxel z-scoring. Mean/std (population) are computed on `fit_indices`
/// only and applied to every TR, so held-out targets never leak into the
/// statistics. Errors on zero-variance voxels, naming the voxel.
BoldSession zscore_per_voxel(const BoldSession& session, const std::vector<int>& fit_indices);

/// TR-wise mean across subjects. Sessions must agree on TR grid and voxel
/// order; subject ids are concatenated.
BoldSession average_subjects(const std::vector<BoldSession>& sessions);

/// Bundle I/O: `<stem>.bold` holds the raw little-endian float32 row-major
/// matrix; `<stem>.json` is the sidecar with
/// {n_trs, n_voxels, tr_seconds, voxel_ids, subject_ids, standardized}.
/// `path` may name either the .bold file or the stem.
void save_bold_bundle(const BoldSession& session, const std::string& path);
BoldSession load_bold_bundle(const std::string& path);

/// Column subset of a session in the exact order given.
BoldSession restrict_voxels(const BoldSession& session, const std::vector<std::string>& voxel_ids);

}  // namespace nrf
