#pragma once

#include <cstdint>
#include <vector>

#include "consensus/dataset.hpp"
#include "consensus/features.hpp"
#include "consensus/forest.hpp"
#include "consensus/parallel.hpp"
#include "consensus/sampling.hpp"

namespace consensus {

/// Fills every missing annotation with the argmax posterior of one SSL forest
/// trained on all (ROI pixel, expert label) pairs pooled across slices.
/// Present masks are returned untouched; predicted pixels outside the ROI are
/// background. Ties (p0 == p1) resolve to 0.
inline AnnotationSet impute_missing(const AnnotationSet& ann,
                                    const std::vector<FeatureContext>& contexts,
                                    const std::vector<Roi>& rois, const ForestConfig& cfg,
                                    std::uint64_t seed, const SampleBudget& budget = {},
                                    int threads = 0, Forest* out_forest = nullptr,
                                    TrainStats* out_stats = nullptr) {
    for (std::uint32_t e = 0; e < ann.experts.size(); ++e) {
        bool any = false;
        for (const auto& slice : ann.slices) any = any || slice.masks[e].has_value();
        require(any, "unimputable-expert",
                "expert " + ann.experts[e] + " has no annotations anywhere");
    }
    if (!ann.any_missing()) return ann;

    const SampleSet samples = build_impute_samples(ann, contexts, rois, budget, seed, threads);
    const Forest forest = train_ssl(samples, cfg, seed, out_stats, threads);

    AnnotationSet filled = ann;
    for (std::uint32_t s = 0; s < filled.slices.size(); ++s) {
        Slice& slice = filled.slices[s];
        if (slice.present_count() == filled.expert_count()) continue;
        const Roi& roi = rois[s];
        const FeatureContext& ctx = contexts[s];

        // One expert-agnostic prediction per ROI pixel serves every missing
        // expert on the slice.
        Mask predicted(slice.image.width, slice.image.height);
        const std::size_t n_pixels = roi.area();
        std::vector<std::uint8_t> labels(n_pixels);
        parallel_for(n_pixels, threads, [&](std::size_t i) {
            const int x = roi.x0 + static_cast<int>(i) % roi.width();
            const int y = roi.y0 + static_cast<int>(i) / roi.width();
            const FeatureVector f = feature_vector(ctx, x, y);
            const auto posterior = predict(forest, f.data());
            labels[i] = posterior[1] > 0.5 ? 1 : 0;
        });
        for (std::size_t i = 0; i < n_pixels; ++i) {
            const int x = roi.x0 + static_cast<int>(i) % roi.width();
            const int y = roi.y0 + static_cast<int>(i) / roi.width();
            predicted.at(x, y) = labels[i];
        }
        for (auto& mask : slice.masks)
            if (!mask.has_value()) mask = predicted;
    }
    if (out_forest) *out_forest = forest;
    return filled;
}

} // namespace consensus
