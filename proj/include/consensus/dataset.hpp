#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "consensus/error.hpp"
#include "consensus/image.hpp"
#include "consensus/pgm.hpp"

namespace consensus {

/// One image slice with per-expert masks; nullopt marks a missing annotation.
struct Slice {
    ImageGrid image;
    std::vector<std::optional<Mask>> masks;

    int present_count() const {
        int n = 0;
        for (const auto& m : masks) n += m.has_value();
        return n;
    }
};

/// Multi-expert annotation dataset; expert order is shared by all slices.
struct AnnotationSet {
    std::vector<std::string> experts;
    std::vector<Slice> slices;

    int expert_count() const { return static_cast<int>(experts.size()); }
    int slice_count() const { return static_cast<int>(slices.size()); }

    bool any_missing() const {
        for (const auto& s : slices)
            for (const auto& m : s.masks)
                if (!m.has_value()) return true;
        return false;
    }
};

/// On-disk dataset description.
/// Schema: {"dataset": str, "seed": int, "experts": [str],
///          "slices": [{"image": path, "masks": [path|null]}]}
/// Paths are relative to the manifest's directory.
struct DatasetManifest {
    struct Entry {
        std::string image;
        std::vector<std::optional<std::string>> masks;
    };

    std::string dataset;
    std::uint64_t seed = 0;
    std::vector<std::string> experts;
    std::vector<Entry> slices;
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["dataset"] = m.dataset;
    j["seed"] = m.seed;
    j["experts"] = m.experts;
    j["slices"] = nlohmann::json::array();
    for (const auto& e : m.slices) {
        nlohmann::json s;
        s["image"] = e.image;
        nlohmann::json masks = nlohmann::json::array();
        for (const auto& p : e.masks) {
            if (p.has_value())
                masks.push_back(*p);
            else
                masks.push_back(nullptr);
        }
        s["masks"] = masks;
        j["slices"].push_back(s);
    }
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        m.dataset = j.at("dataset").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.experts = j.at("experts").get<std::vector<std::string>>();
        for (const auto& s : j.at("slices")) {
            DatasetManifest::Entry e;
            e.image = s.at("image").get<std::string>();
            for (const auto& p : s.at("masks")) {
                if (p.is_null())
                    e.masks.emplace_back(std::nullopt);
                else
                    e.masks.emplace_back(p.get<std::string>());
            }
            require(e.masks.size() == m.experts.size(), "bad-manifest",
                    "mask list length does not match expert list for " + e.image);
            m.slices.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& ex) {
        fail("bad-manifest", ex.what());
    }
    return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), "missing-file", "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        fail("bad-manifest", std::string(ex.what()) + " in " + path.string());
    }
    return manifest_from_json(j);
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    require(out.good(), "io-error", "cannot write " + path.string());
    out << manifest_to_json(m).dump(2) << "\n";
}

/// Loads every slice referenced by a manifest. Images are min-max normalized,
/// masks binarized (>0 -> 1), missing entries preserved as nullopt.
inline AnnotationSet load_annotations(const DatasetManifest& m,
                                      const std::filesystem::path& root) {
    AnnotationSet set;
    set.experts = m.experts;
    set.slices.reserve(m.slices.size());
    for (const auto& entry : m.slices) {
        Slice slice;
        slice.image = load_image(root / entry.image);
        slice.masks.reserve(entry.masks.size());
        int present = 0;
        for (const auto& mp : entry.masks) {
            if (!mp.has_value()) {
                slice.masks.emplace_back(std::nullopt);
                continue;
            }
            Mask mask = load_mask(root / *mp);
            require(mask.width == slice.image.width && mask.height == slice.image.height,
                    "dimension-mismatch",
                    *mp + " does not match " + entry.image);
            slice.masks.emplace_back(std::move(mask));
            ++present;
        }
        require(present >= 1, "all-experts-missing",
                "no expert annotated slice " + entry.image);
        set.slices.push_back(std::move(slice));
    }
    return set;
}

inline AnnotationSet load_dataset(const std::filesystem::path& manifest_path) {
    const DatasetManifest m = read_manifest(manifest_path);
    return load_annotations(m, manifest_path.parent_path());
}

/// Bounding box of the union of all present masks on a slice, expanded by
/// `margin` pixels on each side and clamped to the image bounds.
inline Roi compute_roi(const Slice& slice, int margin) {
    int x0 = slice.image.width, y0 = slice.image.height, x1 = -1, y1 = -1;
    for (const auto& m : slice.masks) {
        if (!m.has_value()) continue;
        for (int y = 0; y < m->height; ++y) {
            const std::uint8_t* row = &m->data[static_cast<std::size_t>(y) * m->width];
            for (int x = 0; x < m->width; ++x) {
                if (!row[x]) continue;
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
        }
    }
    require(x1 >= 0, "empty-annotation-union", "all present masks are empty");
    Roi roi;
    roi.x0 = std::max(0, x0 - margin);
    roi.y0 = std::max(0, y0 - margin);
    roi.x1 = std::min(slice.image.width - 1, x1 + margin);
    roi.y1 = std::min(slice.image.height - 1, y1 + margin);
    return roi;
}

} // namespace consensus
