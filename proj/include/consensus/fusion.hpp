#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "consensus/consistency.hpp"
#include "consensus/dataset.hpp"
#include "consensus/graphcut.hpp"
#include "consensus/impute.hpp"
#include "consensus/parallel.hpp"

namespace consensus {

struct FusionConfig {
    double lambda = 0.06;
    double sigma = 0.0; // <= 0 resolves automatically from the data
    int tie_label = 0;  // majority-vote ties

    void validate() const {
        require(lambda > 0.0, "invalid-argument", "lambda must be > 0");
        require(tie_label == 0 || tie_label == 1, "invalid-argument", "tie label must be 0 or 1");
    }
};

struct FusionResult {
    std::vector<Mask> consensus;
    ScReport sc;
    std::vector<double> energy; // per slice, the minimized MRF energy
    double lambda = 0.0;
    double sigma = 0.0; // resolved value
};

/// Per-pixel penalty pair (D0, D1) from the experts' labels and SC scores:
/// an expert voting y assigns cost 1-SC to agreeing with y and SC to
/// disagreeing; the final costs average over experts, so D0 + D1 = 1.
inline std::array<double, 2> penalty_costs(std::span<const std::uint8_t> labels,
                                           std::span<const double> sc) {
    require(!labels.empty() && labels.size() == sc.size(), "invalid-argument",
            "penalty_costs needs one SC score per label");
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        require(sc[r] >= 0.0 && sc[r] <= 1.0, "sc-out-of-range",
                "SC score outside [0,1]");
        if (labels[r] == 1) {
            d1 += 1.0 - sc[r];
            d0 += sc[r];
        } else {
            d0 += 1.0 - sc[r];
            d1 += sc[r];
        }
    }
    const double n = static_cast<double>(labels.size());
    return {d0 / n, d1 / n};
}

/// Contrast-modulated smoothness weight for a neighbor pair at Euclidean
/// distance `dist` (1 or sqrt(2)); the Potts gating lives in the MRF encoder.
inline double smoothness_weight(double i_s, double i_t, double dist, double sigma) {
    const double d = i_s - i_t;
    return std::exp(-(d * d) / (2.0 * sigma * sigma)) / dist;
}

/// Raw SC scores land well below 1/2 (they are means of information gains
/// over mostly uninformative candidate tests), but the penalty construction
/// only trusts an expert when its score exceeds 1/2. This affine map rescales
/// [0,1] onto [0.5,1]: 0 becomes indifference, not active mistrust, and
/// ordering between experts is preserved.
inline double sc_trust(double sc) { return 0.5 * (1.0 + sc); }

/// Pooled standard deviation of 8-neighbor intensity differences over the
/// ROIs, floored at 1e-3; used when FusionConfig.sigma is "auto".
inline double resolve_sigma(const AnnotationSet& ann, const std::vector<Roi>& rois) {
    double sum = 0.0, sumsq = 0.0;
    std::uint64_t n = 0;
    static constexpr int dx8[4] = {1, 0, 1, -1}; // forward half of the 8-neighborhood
    static constexpr int dy8[4] = {0, 1, 1, 1};
    for (std::size_t s = 0; s < ann.slices.size(); ++s) {
        const ImageGrid& img = ann.slices[s].image;
        const Roi& roi = rois[s];
        for (int y = roi.y0; y <= roi.y1; ++y)
            for (int x = roi.x0; x <= roi.x1; ++x)
                for (int k = 0; k < 4; ++k) {
                    const int nx = x + dx8[k], ny = y + dy8[k];
                    if (!roi.contains(nx, ny)) continue;
                    const double d = img.at(x, y) - img.at(nx, ny);
                    sum += d;
                    sumsq += d * d;
                    ++n;
                }
    }
    if (n < 2) return 1e-3;
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
    return std::max(1e-3, std::sqrt(var));
}

namespace detail {

/// Minimizes the fusion energy on one slice. Pixels outside the ROI stay
/// background. Experts whose mask is absent on the slice are skipped (used by
/// the no-imputation ablation); trust scores are pre-mapped SC values.
inline std::pair<Mask, double> fuse_slice(const Slice& slice, const Roi& roi,
                                          std::span<const double> trust, double lambda,
                                          double sigma) {
    const int rw = roi.width(), rh = roi.height();
    const std::size_t n = roi.area();
    std::vector<std::array<double, 2>> unary(n);
    std::vector<std::uint8_t> labels;
    std::vector<double> sc_present;
    for (int y = roi.y0; y <= roi.y1; ++y) {
        for (int x = roi.x0; x <= roi.x1; ++x) {
            labels.clear();
            sc_present.clear();
            for (std::size_t e = 0; e < slice.masks.size(); ++e) {
                if (!slice.masks[e].has_value()) continue;
                labels.push_back(slice.masks[e]->at(x, y));
                sc_present.push_back(trust[e]);
            }
            unary[static_cast<std::size_t>(y - roi.y0) * rw + (x - roi.x0)] =
                penalty_costs(labels, sc_present);
        }
    }

    std::vector<MrfEdge> edges;
    edges.reserve(n * 4);
    const double diag = std::sqrt(2.0);
    static constexpr int dx8[4] = {1, 0, 1, -1};
    static constexpr int dy8[4] = {0, 1, 1, 1};
    for (int y = 0; y < rh; ++y)
        for (int x = 0; x < rw; ++x)
            for (int k = 0; k < 4; ++k) {
                const int nx = x + dx8[k], ny = y + dy8[k];
                if (nx < 0 || nx >= rw || ny < 0 || ny >= rh) continue;
                const double i_s = slice.image.at(roi.x0 + x, roi.y0 + y);
                const double i_t = slice.image.at(roi.x0 + nx, roi.y0 + ny);
                const double dist = (k == 0 || k == 1) ? 1.0 : diag;
                edges.push_back({y * rw + x, ny * rw + nx,
                                 lambda * smoothness_weight(i_s, i_t, dist, sigma)});
            }

    const MrfResult mrf = minimize_binary_mrf(unary, edges);
    Mask out(slice.image.width, slice.image.height);
    for (int y = 0; y < rh; ++y)
        for (int x = 0; x < rw; ++x)
            out.at(roi.x0 + x, roi.y0 + y) = mrf.labels[static_cast<std::size_t>(y) * rw + x];
    return {std::move(out), mrf.energy};
}

inline FusionResult fuse_with_trust(const AnnotationSet& ann, const std::vector<Roi>& rois,
                                    const std::vector<double>& trust, const ScReport& sc,
                                    const FusionConfig& cfg, int threads) {
    FusionResult result;
    result.sc = sc;
    result.lambda = cfg.lambda;
    result.sigma = cfg.sigma > 0.0 ? cfg.sigma : resolve_sigma(ann, rois);
    result.consensus.resize(ann.slices.size());
    result.energy.resize(ann.slices.size());
    parallel_for(ann.slices.size(), threads, [&](std::size_t s) {
        auto [mask, energy] =
            fuse_slice(ann.slices[s], rois[s], trust, cfg.lambda, result.sigma);
        result.consensus[s] = std::move(mask);
        result.energy[s] = energy;
    });
    return result;
}

} // namespace detail

/// Full fusion of an imputed annotation set: SC scores once per dataset,
/// SC-derived penalties per pixel, contrast-modulated smoothness over the
/// 8-neighborhood, and an exact graph-cut minimum per slice.
/// `sc_override` substitutes the SC scores (the SC-disabled ablation passes
/// flat 0.5, which the trust map turns into fully uninformative penalties by
/// feeding them through unchanged — see run_fuse_method).
inline FusionResult fuse(const AnnotationSet& ann,
                         const std::vector<FeatureContext>& contexts, const FusionConfig& cfg,
                         const ForestConfig& forest_cfg, std::uint64_t seed,
                         const SampleBudget& budget = {}, int roi_margin = 20,
                         int threads = 0, const ScReport* sc_override = nullptr,
                         bool raw_trust = false) {
    cfg.validate();
    require(!ann.any_missing(), "missing-annotations",
            "fuse requires a fully imputed annotation set");
    const std::vector<Roi> rois = compute_rois(ann, roi_margin);
    const ScReport sc = sc_override
                            ? *sc_override
                            : self_consistency(ann, contexts, rois, forest_cfg, seed, budget,
                                               {}, threads);
    std::vector<double> trust(sc.sc.size());
    for (std::size_t e = 0; e < sc.sc.size(); ++e)
        trust[e] = raw_trust ? sc.sc[e] : sc_trust(sc.sc[e]);
    return detail::fuse_with_trust(ann, rois, trust, sc, cfg, threads);
}

/// Per-pixel majority vote over the present expert masks; ties take the
/// configured tie label.
inline std::vector<Mask> majority_vote(const AnnotationSet& ann, int tie_label = 0) {
    require(tie_label == 0 || tie_label == 1, "invalid-argument", "tie label must be 0 or 1");
    std::vector<Mask> out;
    out.reserve(ann.slices.size());
    for (const auto& slice : ann.slices) {
        require(slice.present_count() >= 1, "all-experts-missing",
                "majority vote needs at least one mask per slice");
        Mask m(slice.image.width, slice.image.height);
        for (std::size_t i = 0; i < m.size(); ++i) {
            int ones = 0, votes = 0;
            for (const auto& mask : slice.masks) {
                if (!mask.has_value()) continue;
                ones += mask->data[i];
                ++votes;
            }
            if (2 * ones > votes)
                m.data[i] = 1;
            else if (2 * ones < votes)
                m.data[i] = 0;
            else
                m.data[i] = static_cast<std::uint8_t>(tie_label);
        }
        out.push_back(std::move(m));
    }
    return out;
}

/// Fusion energy of an arbitrary labeling on a slice, for optimality checks.
inline double fusion_energy(const Slice& slice, const Roi& roi, const Mask& labeling,
                            std::span<const double> trust, double lambda, double sigma) {
    double e = 0.0;
    std::vector<std::uint8_t> labels;
    std::vector<double> sc_present;
    for (int y = roi.y0; y <= roi.y1; ++y)
        for (int x = roi.x0; x <= roi.x1; ++x) {
            labels.clear();
            sc_present.clear();
            for (std::size_t r = 0; r < slice.masks.size(); ++r) {
                if (!slice.masks[r].has_value()) continue;
                labels.push_back(slice.masks[r]->at(x, y));
                sc_present.push_back(trust[r]);
            }
            e += penalty_costs(labels, sc_present)[labeling.at(x, y)];
        }
    static constexpr int dx8[4] = {1, 0, 1, -1};
    static constexpr int dy8[4] = {0, 1, 1, 1};
    const double diag = std::sqrt(2.0);
    for (int y = roi.y0; y <= roi.y1; ++y)
        for (int x = roi.x0; x <= roi.x1; ++x)
            for (int k = 0; k < 4; ++k) {
                const int nx = x + dx8[k], ny = y + dy8[k];
                if (!roi.contains(nx, ny)) continue;
                if (labeling.at(x, y) == labeling.at(nx, ny)) continue;
                const double dist = (k == 0 || k == 1) ? 1.0 : diag;
                e += lambda *
                     smoothness_weight(slice.image.at(x, y), slice.image.at(nx, ny), dist, sigma);
            }
    return e;
}

} // namespace consensus
