#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "endol2h/degrade.hpp"
#include "endol2h/errors.hpp"
#include "endol2h/image.hpp"
#include "endol2h/rng.hpp"

namespace endol2h {

struct ManifestEntry {
    std::string path;         // relative to the dataset root
    std::string class_label;  // immediate parent directory name
    std::string split;        // "", "train", "val" or "test"
};

struct DatasetManifest {
    std::string root;
    std::vector<ManifestEntry> entries;

    std::set<std::string> classes() const {
        std::set<std::string> out;
        for (const auto& e : entries) out.insert(e.class_label);
        return out;
    }

    std::map<std::string, int> counts(const std::string& split) const {
        std::map<std::string, int> out;
        for (const auto& e : entries)
            if (split.empty() || e.split == split) ++out[e.class_label];
        return out;
    }

    std::vector<ManifestEntry> subset(const std::string& split) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == split) out.push_back(e);
        return out;
    }
};

struct PairSample {
    ImageTensor lr;
    ImageTensor hr;
    std::string class_label;
    std::string source_path;
};

namespace detail {

// Width/height from the IHDR chunk; avoids decoding the whole file.
inline bool png_dims(const std::filesystem::path& p, int& w, int& h) {
    std::ifstream f(p, std::ios::binary);
    unsigned char buf[24];
    if (!f.read(reinterpret_cast<char*>(buf), 24)) return false;
    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    for (int i = 0; i < 8; ++i)
        if (buf[i] != sig[i]) return false;
    w = (buf[16] << 24) | (buf[17] << 16) | (buf[18] << 8) | buf[19];
    h = (buf[20] << 24) | (buf[21] << 16) | (buf[22] << 8) | buf[23];
    return true;
}

// FNV-1a, used to derive stable per-class shuffle seeds (std::hash is not
// portable across implementations).
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline void seeded_shuffle(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
}

}  // namespace detail

// Scans <root>/<class>/<image>.png. Deterministic ordering (lexicographic by
// relative path); images below min_w x min_h are excluded.
inline DatasetManifest build_manifest(const std::string& root_dir,
                                      const std::vector<std::string>& class_filter = {},
                                      int min_w = 0, int min_h = 0) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root_dir)) throw InputError("dataset root not found: " + root_dir);

    DatasetManifest m;
    m.root = root_dir;
    std::map<std::string, int> scanned, kept;
    for (const auto& cls : fs::directory_iterator(root_dir)) {
        if (!cls.is_directory()) continue;
        std::string label = cls.path().filename().string();
        if (!class_filter.empty() &&
            std::find(class_filter.begin(), class_filter.end(), label) == class_filter.end())
            continue;
        for (const auto& f : fs::directory_iterator(cls.path())) {
            if (!f.is_regular_file() || f.path().extension() != ".png") continue;
            ++scanned[label];
            int w = 0, h = 0;
            if (!detail::png_dims(f.path(), w, h)) continue;
            if (w < min_w || h < min_h) continue;
            ++kept[label];
            m.entries.push_back({label + "/" + f.path().filename().string(), label, ""});
        }
    }
    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
    if (m.entries.empty()) {
        std::string diag = "no usable images under " + root_dir + ";";
        for (const auto& [cls, n] : scanned)
            diag += " " + cls + ": " + std::to_string(n) + " scanned, " +
                    std::to_string(kept[cls]) + " kept;";
        throw InputError(diag);
    }
    return m;
}

// Class-stratified split. The validation subset depends only on (seed,
// fractions) and is identical for every fold index; the remaining pool is
// partitioned into n_folds test chunks, and train is the pool minus the
// fold's chunk.
inline DatasetManifest split_manifest(const DatasetManifest& manifest, double train_frac,
                                      double val_frac, double test_frac, int fold_index,
                                      int n_folds, std::uint64_t seed) {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    if (fold_index < 0 || fold_index >= n_folds)
        throw ConfigError("fold_index must be < n_folds");

    DatasetManifest out = manifest;
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < out.entries.size(); ++i)
        by_class[out.entries[i].class_label].push_back(i);

    for (auto& [label, idx] : by_class) {
        // idx is already path-sorted; shuffle with a class-stable seed so the
        // assignment is portable across machines.
        Rng rng(seed ^ detail::fnv1a(label));
        detail::seeded_shuffle(idx, rng);

        std::size_t n = idx.size();
        std::size_t n_val = static_cast<std::size_t>(std::lround(val_frac * n));
        std::size_t pool = n - n_val;
        if (pool < static_cast<std::size_t>(n_folds))
            throw InputError("class '" + label + "' has fewer images than folds");

        for (std::size_t i = 0; i < n_val; ++i) out.entries[idx[i]].split = "val";
        // Partition the pool into n_folds near-equal contiguous chunks.
        std::size_t base = pool / n_folds, extra = pool % n_folds;
        std::size_t offset = n_val;
        for (int k = 0; k < n_folds; ++k) {
            std::size_t len = base + (static_cast<std::size_t>(k) < extra ? 1 : 0);
            for (std::size_t i = 0; i < len; ++i)
                out.entries[idx[offset + i]].split = (k == fold_index) ? "test" : "train";
            offset += len;
        }
    }
    return out;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest: " + path);
    for (const auto& e : m.entries) {
        nlohmann::json j{{"path", e.path}, {"class", e.class_label}, {"split", e.split}};
        f << j.dump() << "\n";
    }
}

inline DatasetManifest load_manifest(const std::string& path, const std::string& root = "") {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest: " + path);
    DatasetManifest m;
    m.root = root;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError("malformed manifest line in " + path);
        m.entries.push_back({j.at("path"), j.at("class"), j.value("split", "")});
    }
    return m;
}

// HR loaded and center-cropped to scale divisibility; LR synthesized on the fly.
inline PairSample load_pair(const DatasetManifest& manifest, const ManifestEntry& entry,
                            const DegradationConfig& cfg) {
    std::string full = manifest.root.empty() ? entry.path : manifest.root + "/" + entry.path;
    PairSample s;
    try {
        s.hr = read_png(full);
    } catch (const IoError& e) {
        throw IoError("load_pair: " + std::string(e.what()));
    }
    s.hr = crop_to_divisible(s.hr, cfg.scale);
    s.lr = degrade(s.hr, cfg);
    s.class_label = entry.class_label;
    s.source_path = entry.path;
    return s;
}

}  // namespace endol2h
