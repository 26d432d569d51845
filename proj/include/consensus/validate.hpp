#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "consensus/dataset.hpp"
#include "consensus/features.hpp"
#include "consensus/forest.hpp"
#include "consensus/fusion.hpp"
#include "consensus/graphcut.hpp"
#include "consensus/metrics.hpp"
#include "consensus/parallel.hpp"
#include "consensus/sampling.hpp"

namespace consensus {

inline constexpr double kLikelihoodEpsilon = 1e-5;

struct FoldCaseReport {
    std::uint32_t fold = 0;
    std::uint32_t case_index = 0;
    double dice = 0.0;
    double hausdorff = 0.0;
    bool hausdorff_defined = false;
};

/// Deterministic k-fold assignment: seeded shuffle, then balanced contiguous
/// chunks.
inline std::vector<std::uint32_t> fold_assignment(std::uint32_t n_cases, std::uint32_t folds,
                                                  std::uint64_t seed) {
    require(folds >= 2 && n_cases >= folds, "degenerate-folds",
            "need at least `folds` cases and folds >= 2");
    std::vector<std::uint32_t> order(n_cases);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0xf01d5ULL));
    for (std::uint32_t i = 0; i + 1 < n_cases; ++i) {
        const std::uint32_t j = i + static_cast<std::uint32_t>(rng.bounded(n_cases - i));
        std::swap(order[i], order[j]);
    }
    std::vector<std::uint32_t> fold_of(n_cases);
    const std::uint32_t base = n_cases / folds, extra = n_cases % folds;
    std::uint32_t pos = 0;
    for (std::uint32_t f = 0; f < folds; ++f) {
        const std::uint32_t size = base + (f < extra ? 1 : 0);
        for (std::uint32_t k = 0; k < size; ++k) fold_of[order[pos++]] = f;
    }
    return fold_of;
}

/// Train-on-consensus cross validation: per fold, a supervised forest learns
/// the consensus labels of the training cases; each test case is segmented by
/// minimizing  sum -log(Pr(L_s) + eps) + lambda * smoothness  with an exact
/// graph cut, and scored against that method's consensus mask.
inline std::vector<FoldCaseReport> fsl_validate(const AnnotationSet& ann,
                                                const std::vector<FeatureContext>& contexts,
                                                const std::vector<Mask>& consensus,
                                                std::uint32_t folds,
                                                const ForestConfig& forest_cfg, double lambda,
                                                std::uint64_t seed,
                                                const SampleBudget& budget = {},
                                                int roi_margin = 20, int threads = 0) {
    require(consensus.size() == ann.slices.size(), "invalid-argument",
            "one consensus mask per case required");
    const std::uint32_t n = static_cast<std::uint32_t>(ann.slices.size());
    const std::vector<std::uint32_t> fold_of = fold_assignment(n, folds, seed);

    // ROI per case from its consensus mask; empty consensus falls back to the
    // full image so degenerate fusions still evaluate.
    std::vector<Roi> rois(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (consensus[i].count() == 0) {
            rois[i] = Roi{0, 0, ann.slices[i].image.width - 1, ann.slices[i].image.height - 1};
            continue;
        }
        Slice pseudo;
        pseudo.image = ann.slices[i].image;
        pseudo.masks.emplace_back(consensus[i]);
        rois[i] = compute_roi(pseudo, roi_margin);
    }

    std::vector<FoldCaseReport> reports;
    for (std::uint32_t f = 0; f < folds; ++f) {
        // Labeled rows from the training folds' consensus masks.
        std::vector<detail::PixelRef> refs;
        for (std::uint32_t s = 0; s < n; ++s) {
            if (fold_of[s] == f) continue;
            const Roi& roi = rois[s];
            for (int y = roi.y0; y <= roi.y1; ++y)
                for (int x = roi.x0; x <= roi.x1; ++x) {
                    const std::uint32_t pixel =
                        static_cast<std::uint32_t>(y) * ann.slices[s].image.width + x;
                    refs.push_back({s, pixel, 0,
                                    static_cast<std::int8_t>(consensus[s].data[pixel])});
                }
        }
        Rng rng(derive_seed(seed, 0xf01d6ULL + f));
        detail::subsample_in_place(refs, budget.max_labeled_rows, rng);
        std::sort(refs.begin(), refs.end());
        SampleSet samples;
        detail::extract_rows(refs, contexts, samples, threads);

        Forest forest;
        try {
            forest = train_supervised(samples, forest_cfg, derive_seed(seed, 0xf01d7ULL + f),
                                      nullptr, threads);
        } catch (const Error& e) {
            fail("degenerate-folds", "fold " + std::to_string(f) + ": " + e.what());
        }

        for (std::uint32_t s = 0; s < n; ++s) {
            if (fold_of[s] != f) continue;
            const Slice& slice = ann.slices[s];
            const Roi& roi = rois[s];
            const int rw = roi.width(), rh = roi.height();

            std::vector<std::array<double, 2>> unary(roi.area());
            parallel_for(roi.area(), threads, [&](std::size_t i) {
                const int x = roi.x0 + static_cast<int>(i) % rw;
                const int y = roi.y0 + static_cast<int>(i) / rw;
                const FeatureVector fv = feature_vector(contexts[s], x, y);
                const auto posterior = predict(forest, fv.data());
                unary[i] = {-std::log(posterior[0] + kLikelihoodEpsilon),
                            -std::log(posterior[1] + kLikelihoodEpsilon)};
            });

            std::vector<Roi> one_roi{roi};
            AnnotationSet one;
            one.experts = {"x"};
            one.slices.push_back(slice);
            const double sigma = resolve_sigma(one, one_roi);

            std::vector<MrfEdge> edges;
            static constexpr int dx8[4] = {1, 0, 1, -1};
            static constexpr int dy8[4] = {0, 1, 1, 1};
            const double diag = std::sqrt(2.0);
            for (int y = 0; y < rh; ++y)
                for (int x = 0; x < rw; ++x)
                    for (int k = 0; k < 4; ++k) {
                        const int nx = x + dx8[k], ny = y + dy8[k];
                        if (nx < 0 || nx >= rw || ny < 0 || ny >= rh) continue;
                        const double w = smoothness_weight(
                            slice.image.at(roi.x0 + x, roi.y0 + y),
                            slice.image.at(roi.x0 + nx, roi.y0 + ny),
                            (k == 0 || k == 1) ? 1.0 : diag, sigma);
                        edges.push_back({y * rw + x, ny * rw + nx, lambda * w});
                    }
            const MrfResult mrf = minimize_binary_mrf(unary, edges);

            Mask segmented(slice.image.width, slice.image.height);
            for (int y = 0; y < rh; ++y)
                for (int x = 0; x < rw; ++x)
                    segmented.at(roi.x0 + x, roi.y0 + y) =
                        mrf.labels[static_cast<std::size_t>(y) * rw + x];

            FoldCaseReport r;
            r.fold = f;
            r.case_index = s;
            r.dice = dice(segmented, consensus[s]);
            if (segmented.count() > 0 && consensus[s].count() > 0) {
                r.hausdorff = hausdorff(segmented, consensus[s]);
                r.hausdorff_defined = true;
            }
            reports.push_back(r);
        }
    }
    return reports;
}

} // namespace consensus
