#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "consensus/dataset.hpp"
#include "consensus/features.hpp"
#include "consensus/forest.hpp"
#include "consensus/parallel.hpp"
#include "consensus/rng.hpp"

namespace consensus {

/// Caps on forest training-set sizes. Benchmark datasets produce far more
/// (pixel, label) rows than tree training needs; rows beyond the cap are
/// dropped by a seeded uniform subsample. Zero means unlimited.
struct SampleBudget {
    std::uint32_t max_labeled_rows = 20000;
    std::uint32_t max_unlabeled_rows = 10000;
    std::uint32_t max_probe_rows = 20000;

    static SampleBudget unlimited() { return {0, 0, 0}; }
};

namespace detail {

template <class T>
inline void subsample_in_place(std::vector<T>& items, std::uint32_t cap, Rng& rng) {
    if (cap == 0 || items.size() <= cap) return;
    for (std::uint32_t i = 0; i < cap; ++i) {
        const std::size_t j = i + rng.bounded(items.size() - i);
        std::swap(items[i], items[j]);
    }
    items.resize(cap);
}

struct PixelRef {
    std::uint32_t slice;
    std::uint32_t pixel; // y * width + x within the slice image
    std::int32_t expert; // -1 for unlabeled rows
    std::int8_t label;   // kUnlabeled for unlabeled rows

    bool operator<(const PixelRef& o) const {
        if (slice != o.slice) return slice < o.slice;
        if (pixel != o.pixel) return pixel < o.pixel;
        return expert < o.expert;
    }
};

inline void extract_rows(const std::vector<PixelRef>& refs,
                         const std::vector<FeatureContext>& contexts, SampleSet& out,
                         int threads) {
    out.features.resize(static_cast<std::uint32_t>(refs.size()), kFeatureDim);
    out.labels.resize(refs.size());
    out.tags.resize(refs.size());
    parallel_for(refs.size(), threads, [&](std::size_t i) {
        const PixelRef& ref = refs[i];
        const FeatureContext& ctx = contexts[ref.slice];
        const int x = static_cast<int>(ref.pixel % ctx.image.width);
        const int y = static_cast<int>(ref.pixel / ctx.image.width);
        const FeatureVector f = feature_vector(ctx, x, y);
        float* row = out.features.row(static_cast<std::uint32_t>(i));
        for (int k = 0; k < kFeatureDim; ++k) row[k] = static_cast<float>(f[k]);
        out.labels[i] = ref.label;
        out.tags[i] = {ref.slice, ref.pixel, ref.expert};
    });
}

} // namespace detail

/// Pooled training set for missing-annotation imputation: one labeled row per
/// (ROI pixel, present expert label) pair across all slices, and one
/// unlabeled row per ROI pixel of every slice with a missing annotation.
inline SampleSet build_impute_samples(const AnnotationSet& ann,
                                      const std::vector<FeatureContext>& contexts,
                                      const std::vector<Roi>& rois, const SampleBudget& budget,
                                      std::uint64_t seed, int threads = 0) {
    std::vector<detail::PixelRef> labeled, unlabeled;
    for (std::uint32_t s = 0; s < ann.slices.size(); ++s) {
        const Slice& slice = ann.slices[s];
        const Roi& roi = rois[s];
        const bool has_missing = slice.present_count() < ann.expert_count();
        for (int y = roi.y0; y <= roi.y1; ++y) {
            for (int x = roi.x0; x <= roi.x1; ++x) {
                const std::uint32_t pixel =
                    static_cast<std::uint32_t>(y) * slice.image.width + x;
                for (std::uint32_t e = 0; e < slice.masks.size(); ++e) {
                    if (!slice.masks[e].has_value()) continue;
                    labeled.push_back({s, pixel, static_cast<std::int32_t>(e),
                                       static_cast<std::int8_t>(slice.masks[e]->data[pixel])});
                }
                if (has_missing) unlabeled.push_back({s, pixel, -1, kUnlabeled});
            }
        }
    }
    Rng rng(derive_seed(seed, 0x5ab5ULL));
    detail::subsample_in_place(labeled, budget.max_labeled_rows, rng);
    Rng rng_u(derive_seed(seed, 0x5ab6ULL));
    detail::subsample_in_place(unlabeled, budget.max_unlabeled_rows, rng_u);

    std::vector<detail::PixelRef> refs = std::move(labeled);
    refs.insert(refs.end(), unlabeled.begin(), unlabeled.end());
    std::sort(refs.begin(), refs.end());

    SampleSet out;
    detail::extract_rows(refs, contexts, out, threads);
    return out;
}

/// Probe rows for self-consistency scoring: one row per ROI pixel carrying
/// every expert's label. Requires a fully annotated set; `slice_subset`
/// restricts to the given slices (empty = all).
inline SampleSet build_probe_samples(const AnnotationSet& ann,
                                     const std::vector<FeatureContext>& contexts,
                                     const std::vector<Roi>& rois, const SampleBudget& budget,
                                     std::uint64_t seed,
                                     const std::vector<std::uint32_t>& slice_subset = {},
                                     int threads = 0) {
    std::vector<std::uint32_t> slices = slice_subset;
    if (slices.empty()) {
        slices.resize(ann.slices.size());
        std::iota(slices.begin(), slices.end(), 0);
    }
    std::vector<detail::PixelRef> refs;
    for (const std::uint32_t s : slices) {
        const Slice& slice = ann.slices[s];
        require(slice.present_count() == ann.expert_count(), "missing-annotations",
                "probe sampling requires fully annotated slices");
        const Roi& roi = rois[s];
        for (int y = roi.y0; y <= roi.y1; ++y)
            for (int x = roi.x0; x <= roi.x1; ++x)
                refs.push_back({s, static_cast<std::uint32_t>(y) * slice.image.width + x, -1,
                                kUnlabeled});
    }
    Rng rng(derive_seed(seed, 0x5ab7ULL));
    detail::subsample_in_place(refs, budget.max_probe_rows, rng);
    std::sort(refs.begin(), refs.end());

    SampleSet out;
    detail::extract_rows(refs, contexts, out, threads);
    out.expert_labels.assign(ann.experts.size(),
                             std::vector<std::int8_t>(refs.size(), kUnlabeled));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Slice& slice = ann.slices[refs[i].slice];
        for (std::uint32_t e = 0; e < slice.masks.size(); ++e)
            out.expert_labels[e][i] =
                static_cast<std::int8_t>(slice.masks[e]->data[refs[i].pixel]);
    }
    return out;
}

/// Feature contexts for every slice, in parallel.
inline std::vector<FeatureContext> build_contexts(const AnnotationSet& ann, int threads = 0) {
    std::vector<FeatureContext> contexts(ann.slices.size());
    parallel_for(ann.slices.size(), threads,
                 [&](std::size_t i) { contexts[i] = build_feature_context(ann.slices[i].image); });
    return contexts;
}

inline std::vector<Roi> compute_rois(const AnnotationSet& ann, int margin) {
    std::vector<Roi> rois;
    rois.reserve(ann.slices.size());
    for (const auto& slice : ann.slices) rois.push_back(compute_roi(slice, margin));
    return rois;
}

} // namespace consensus
