#include "neurorefine/bold.hpp"

#include "neurorefine/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nrf {

void BoldSession::validate() const {
    if (tr_seconds <= 0) throw std::invalid_argument("BoldSession: tr_seconds must be > 0");
    if (bold.rows() < 1) throw std::invalid_argument("BoldSession: need at least one TR");
    if (static_cast<std::size_t>(bold.cols()) != voxel_ids.size())
        throw std::invalid_argument("BoldSession: bold has " + std::to_string(bold.cols()) +
                                    " columns but " + std::to_string(voxel_ids.size()) + " voxel ids");
}

Hemisphere hemisphere_from_string(const std::string& s) {
    if (s == "L") return Hemisphere::L;
    if (s == "R") return Hemisphere::R;
    throw std::invalid_argument("hemisphere must be 'L' or 'R', got '" + s + "'");
}

std::string to_string(Hemisphere h) { return h == Hemisphere::L ? "L" : "R"; }

RoiAtlas load_atlas_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_atlas_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("load_atlas_csv: empty file " + path);
    // tolerate trailing \r from foreign line endings
    auto strip = [](std::string& s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
    };
    strip(line);
    if (line != "voxel_id,hemisphere,roi_label")
        throw std::runtime_error("load_atlas_csv: expected header 'voxel_id,hemisphere,roi_label', got '" + line + "'");
    RoiAtlas atlas;
    atlas.source_name = path;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        strip(line);
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, hemi, roi;
        if (!std::getline(ss, id, ',') || !std::getline(ss, hemi, ',') || !std::getline(ss, roi, ','))
            throw std::runtime_error("load_atlas_csv: malformed row " + std::to_string(lineno) + " in " + path);
        if (atlas.entries.count(id))
            throw std::runtime_error("load_atlas_csv: duplicate voxel_id '" + id + "' at row " + std::to_string(lineno));
        atlas.entries[id] = RoiAtlas::Entry{hemisphere_from_string(hemi), roi};
    }
    return atlas;
}

void save_atlas_csv(const RoiAtlas& atlas, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("save_atlas_csv: cannot open " + path);
    f << "voxel_id,hemisphere,roi_label\n";
    for (const auto& [id, e] : atlas.entries)
        f << id << ',' << to_string(e.hemisphere) << ',' << e.roi_label << '\n';
}

std::vector<std::string> select_roi_voxels(const RoiAtlas& atlas, const std::set<std::string>& roi_labels) {
    if (roi_labels.empty()) throw std::invalid_argument("select_roi_voxels: roi_labels is empty");
    for (const auto& label : roi_labels) {
        bool known = false;
        for (const auto& [id, e] : atlas.entries) {
            if (e.roi_label == label) {
                known = true;
                break;
            }
        }
        if (!known)
            throw std::invalid_argument("select_roi_voxels: ROI label '" + label + "' not present in atlas " +
                                        atlas.source_name);
    }
    std::vector<std::string> left, right;
    for (const auto& [id, e] : atlas.entries) {
        if (!roi_labels.count(e.roi_label)) continue;
        (e.hemisphere == Hemisphere::L ? left : right).push_back(id);
    }
    // map iteration is already id-ascending; hemisphere-major: L then R
    std::vector<std::string> out;
    out.reserve(left.size() + right.size());
    out.insert(out.end(), left.begin(), left.end());
    out.insert(out.end(), right.begin(), right.end());
    if (out.empty()) throw std::runtime_error("select_roi_voxels: selection is empty");
    return out;
}

StimulusWindow assemble_window(const Waveform& audio, int tr_index, int n, double tr_seconds, int n_trs) {
    if (n < 1) throw std::invalid_argument("assemble_window: n must be >= 1");
    if (tr_index < 0 || tr_index >= n_trs)
        throw std::out_of_range("assemble_window: tr_index " + std::to_string(tr_index) + " outside session of " +
                                std::to_string(n_trs) + " TRs");
    const double spt_d = tr_seconds * audio.sample_rate;
    const auto spt = static_cast<std::int64_t>(std::llround(spt_d));
    if (std::abs(spt_d - static_cast<double>(spt)) > 1e-9)
        throw std::invalid_argument("assemble_window: tr_seconds * sample_rate must be an integer sample count");
    if (static_cast<std::int64_t>(audio.samples.size()) < static_cast<std::int64_t>(n_trs) * spt)
        throw std::invalid_argument("assemble_window: audio shorter than the session (" +
                                    std::to_string(audio.samples.size()) + " < " +
                                    std::to_string(static_cast<std::int64_t>(n_trs) * spt) + " samples)");

    StimulusWindow w;
    w.tr_index = tr_index;
    w.n = n;
    w.sample_rate = audio.sample_rate;
    const std::int64_t len = static_cast<std::int64_t>(n) * spt;
    const std::int64_t end = (static_cast<std::int64_t>(tr_index) + 1) * spt;
    const std::int64_t start = end - len;
    w.n_padding_samples = start < 0 ? -start : 0;
    w.samples.assign(static_cast<std::size_t>(len), 0.0f);
    std::copy(audio.samples.begin() + static_cast<std::ptrdiff_t>(start + w.n_padding_samples),
              audio.samples.begin() + static_cast<std::ptrdiff_t>(end),
              w.samples.begin() + static_cast<std::ptrdiff_t>(w.n_padding_samples));
    return w;
}

namespace {

void check_ratios(const std::array<double, 3>& ratios) {
    for (double r : ratios)
        if (r <= 0) throw std::invalid_argument("split: ratios must be positive");
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split: ratios must sum to 1, got " + std::to_string(sum));
}

}  // namespace

DatasetSplit split_trs(int n_trs, const std::array<double, 3>& ratios, std::uint64_t seed) {
    if (n_trs < 1) throw std::invalid_argument("split_trs: n_trs must be >= 1");
    check_ratios(ratios);
    const int n_val = static_cast<int>(std::floor(ratios[1] * n_trs));
    const int n_test = static_cast<int>(std::floor(ratios[2] * n_trs));
    const int n_train = n_trs - n_val - n_test;

    std::vector<int> idx(static_cast<std::size_t>(n_trs));
    for (int i = 0; i < n_trs; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(idx);

    DatasetSplit s;
    s.seed = seed;
    s.ratios = ratios;
    s.mode = SplitMode::Shuffled;
    s.train.assign(idx.begin(), idx.begin() + n_train);
    s.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    s.test.assign(idx.begin() + n_train + n_val, idx.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

DatasetSplit split_trs_contiguous(int n_trs, const std::array<double, 3>& ratios) {
    if (n_trs < 1) throw std::invalid_argument("split_trs_contiguous: n_trs must be >= 1");
    check_ratios(ratios);
    const int n_val = static_cast<int>(std::floor(ratios[1] * n_trs));
    const int n_test = static_cast<int>(std::floor(ratios[2] * n_trs));
    const int n_train = n_trs - n_val - n_test;
    DatasetSplit s;
    s.ratios = ratios;
    s.mode = SplitMode::Contiguous;
    for (int i = 0; i < n_train; ++i) s.train.push_back(i);
    for (int i = n_train; i < n_train + n_val; ++i) s.val.push_back(i);
    for (int i = n_train + n_val; i < n_trs; ++i) s.test.push_back(i);
    return s;
}

BoldSession zscore_per_voxel(const BoldSession& session, const std::vector<int>& fit_indices) {
    session.validate();
    if (fit_indices.empty()) throw std::invalid_argument("zscore_per_voxel: fit_indices is empty");
    for (int t : fit_indices)
        if (t < 0 || t >= session.n_trs())
            throw std::out_of_range("zscore_per_voxel: fit index " + std::to_string(t) + " out of range");

    const int V = session.n_voxels();
    const auto m = static_cast<double>(fit_indices.size());
    BoldSession out = session;
    for (int v = 0; v < V; ++v) {
        double mean = 0.0;
        for (int t : fit_indices) mean += static_cast<double>(session.bold(t, v));
        mean /= m;
        double var = 0.0;
        for (int t : fit_indices) {
            const double d = static_cast<double>(session.bold(t, v)) - mean;
            var += d * d;
        }
        var /= m;  // population variance
        if (var <= 0.0)
            throw std::runtime_error("zscore_per_voxel: voxel '" + session.voxel_ids[static_cast<std::size_t>(v)] +
                                     "' has zero variance over fit indices");
        const double inv = 1.0 / std::sqrt(var);
        for (int t = 0; t < session.n_trs(); ++t)
            out.bold(t, v) = static_cast<float>((static_cast<double>(session.bold(t, v)) - mean) * inv);
    }
    out.standardized = true;
    return out;
}

BoldSession average_subjects(const std::vector<BoldSession>& sessions) {
    if (sessions.empty()) throw std::invalid_argument("average_subjects: no sessions");
    const BoldSession& first = sessions.front();
    first.validate();
    if (sessions.size() == 1) return first;

    for (const auto& s : sessions) {
        s.validate();
        if (s.n_trs() != first.n_trs() || s.n_voxels() != first.n_voxels())
            throw std::invalid_argument("average_subjects: session shapes differ");
        if (std::abs(s.tr_seconds - first.tr_seconds) > 1e-12)
            throw std::invalid_argument("average_subjects: TR durations differ");
        if (s.voxel_ids != first.voxel_ids)
            throw std::invalid_argument("average_subjects: voxel orderings differ");
    }
    BoldSession out = first;
    Eigen::MatrixXd acc = first.bold.cast<double>();
    for (std::size_t i = 1; i < sessions.size(); ++i) {
        acc += sessions[i].bold.cast<double>();
        out.subject_ids.insert(out.subject_ids.end(), sessions[i].subject_ids.begin(),
                               sessions[i].subject_ids.end());
    }
    acc /= static_cast<double>(sessions.size());
    out.bold = acc.cast<float>();
    out.standardized = false;  // averaging does not preserve unit variance
    return out;
}

namespace {

std::string bundle_stem(const std::string& path) {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".bold") return path.substr(0, path.size() - 5);
    return path;
}

}  // namespace

void save_bold_bundle(const BoldSession& session, const std::string& path) {
    session.validate();
    const std::string stem = bundle_stem(path);

    nlohmann::json sidecar;
    sidecar["n_trs"] = session.n_trs();
    sidecar["n_voxels"] = session.n_voxels();
    sidecar["tr_seconds"] = session.tr_seconds;
    sidecar["voxel_ids"] = session.voxel_ids;
    sidecar["subject_ids"] = session.subject_ids;
    sidecar["standardized"] = session.standardized;
    std::ofstream jf(stem + ".json", std::ios::trunc);
    if (!jf) throw std::runtime_error("save_bold_bundle: cannot open " + stem + ".json");
    jf << sidecar.dump(2) << "\n";

    std::ofstream bf(stem + ".bold", std::ios::binary | std::ios::trunc);
    if (!bf) throw std::runtime_error("save_bold_bundle: cannot open " + stem + ".bold");
    static_assert(sizeof(float) == 4);
    bf.write(reinterpret_cast<const char*>(session.bold.data()),
             static_cast<std::streamsize>(4 * session.bold.size()));
    if (!bf) throw std::runtime_error("save_bold_bundle: short write to " + stem + ".bold");
}

BoldSession load_bold_bundle(const std::string& path) {
    const std::string stem = bundle_stem(path);
    std::ifstream jf(stem + ".json");
    if (!jf) throw std::runtime_error("load_bold_bundle: cannot open sidecar " + stem + ".json");
    nlohmann::json sidecar = nlohmann::json::parse(jf, nullptr, false);
    if (sidecar.is_discarded()) throw std::runtime_error("load_bold_bundle: malformed sidecar " + stem + ".json");
    for (const char* key : {"n_trs", "n_voxels", "tr_seconds", "voxel_ids", "subject_ids", "standardized"})
        if (!sidecar.contains(key))
            throw std::runtime_error("load_bold_bundle: sidecar missing field '" + std::string(key) + "'");

    BoldSession s;
    const int n_trs = sidecar["n_trs"].get<int>();
    const int n_voxels = sidecar["n_voxels"].get<int>();
    s.tr_seconds = sidecar["tr_seconds"].get<double>();
    s.voxel_ids = sidecar["voxel_ids"].get<std::vector<std::string>>();
    s.subject_ids = sidecar["subject_ids"].get<std::vector<std::string>>();
    s.standardized = sidecar["standardized"].get<bool>();
    if (static_cast<int>(s.voxel_ids.size()) != n_voxels)
        throw std::runtime_error("load_bold_bundle: sidecar voxel_ids length != n_voxels");

    std::ifstream bf(stem + ".bold", std::ios::binary);
    if (!bf) throw std::runtime_error("load_bold_bundle: cannot open payload " + stem + ".bold");
    std::string payload((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
    const std::size_t expect = 4ull * static_cast<std::size_t>(n_trs) * static_cast<std::size_t>(n_voxels);
    if (payload.size() != expect)
        throw std::runtime_error("load_bold_bundle: payload is " + std::to_string(payload.size()) +
                                 " bytes, expected " + std::to_string(expect) + " (4*n_trs*n_voxels)");
    s.bold.resize(n_trs, n_voxels);
    std::memcpy(s.bold.data(), payload.data(), expect);
    s.validate();
    return s;
}

BoldSession restrict_voxels(const BoldSession& session, const std::vector<std::string>& voxel_ids) {
    session.validate();
    std::map<std::string, int> col;
    for (int v = 0; v < session.n_voxels(); ++v) col[session.voxel_ids[static_cast<std::size_t>(v)]] = v;
    BoldSession out;
    out.tr_seconds = session.tr_seconds;
    out.subject_ids = session.subject_ids;
    out.standardized = session.standardized;
    out.voxel_ids = voxel_ids;
    out.bold.resize(session.n_trs(), static_cast<Eigen::Index>(voxel_ids.size()));
    for (std::size_t j = 0; j < voxel_ids.size(); ++j) {
        auto it = col.find(voxel_ids[j]);
        if (it == col.end())
            throw std::invalid_argument("restrict_voxels: voxel '" + voxel_ids[j] + "' not in session");
        out.bold.col(static_cast<Eigen::Index>(j)) = session.bold.col(it->second);
    }
    return out;
}

}  // namespace nrf
