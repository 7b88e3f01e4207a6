#include "neurorefine/dataset.hpp"

#include <stdexcept>

namespace nrf {

WindowedDataset build_windowed_dataset(const BoldSession& session, const Waveform& audio, int n,
                                       DatasetSplit split) {
    session.validate();
    WindowedDataset ds;
    ds.n = n;
    ds.tr_seconds = session.tr_seconds;
    ds.split = std::move(split);
    const int n_trs = session.n_trs();
    for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test})
        for (int t : *part)
            if (t < 0 || t >= n_trs) throw std::out_of_range("build_windowed_dataset: split index out of range");
    ds.windows.reserve(static_cast<std::size_t>(n_trs));
    for (int t = 0; t < n_trs; ++t) ds.windows.push_back(assemble_window(audio, t, n, session.tr_seconds, n_trs));
    ds.targets = session.bold.cast<double>();
    return ds;
}

}  // namespace nrf
