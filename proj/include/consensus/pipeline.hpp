#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "consensus/consistency.hpp"
#include "consensus/dataset.hpp"
#include "consensus/fusion.hpp"
#include "consensus/impute.hpp"
#include "consensus/sampling.hpp"

namespace consensus {

struct PipelineConfig {
    ForestConfig forest;
    FusionConfig fusion;
    SampleBudget budget;
    int roi_margin = 20;
    std::uint64_t seed = 0;
    int threads = 0;
};

enum class FuseMethod { kGcme, kGcmeAll, kGcmeWssl, kGcmeWsc, kMv };

inline const char* method_name(FuseMethod m) {
    switch (m) {
    case FuseMethod::kGcme: return "gcme";
    case FuseMethod::kGcmeAll: return "gcme-all";
    case FuseMethod::kGcmeWssl: return "gcme-wssl";
    case FuseMethod::kGcmeWsc: return "gcme-wsc";
    case FuseMethod::kMv: return "mv";
    }
    return "gcme";
}

inline FuseMethod parse_method(const std::string& name) {
    if (name == "gcme") return FuseMethod::kGcme;
    if (name == "gcme-all") return FuseMethod::kGcmeAll;
    if (name == "gcme-wssl") return FuseMethod::kGcmeWssl;
    if (name == "gcme-wsc") return FuseMethod::kGcmeWsc;
    if (name == "mv") return FuseMethod::kMv;
    fail("unknown-method", "unknown fuse method: " + name);
}

/// A manifest plus everything derived from it that fusion methods share.
/// Contexts are built on first use and reused across methods.
struct LoadedDataset {
    DatasetManifest manifest;
    std::filesystem::path root;
    AnnotationSet ann;
    std::vector<FeatureContext> contexts; // lazily built

    const std::vector<FeatureContext>& ensure_contexts(int threads) {
        if (contexts.empty()) contexts = build_contexts(ann, threads);
        return contexts;
    }
};

inline LoadedDataset load_pipeline_dataset(const std::filesystem::path& manifest_path) {
    LoadedDataset ds;
    ds.manifest = read_manifest(manifest_path);
    ds.root = manifest_path.parent_path();
    ds.ann = load_annotations(ds.manifest, ds.root);
    return ds;
}

/// Replaces missing annotations with the withheld sidecar masks written by
/// the benchmark generator (withheld_<k>.pgm next to the slice image).
inline AnnotationSet fill_from_sidecars(const LoadedDataset& ds) {
    AnnotationSet filled = ds.ann;
    for (std::size_t s = 0; s < filled.slices.size(); ++s) {
        Slice& slice = filled.slices[s];
        for (std::size_t e = 0; e < slice.masks.size(); ++e) {
            if (slice.masks[e].has_value()) continue;
            const std::filesystem::path dir =
                (ds.root / ds.manifest.slices[s].image).parent_path();
            const std::filesystem::path sidecar =
                dir / ("withheld_" + std::to_string(e) + ".pgm");
            require(std::filesystem::exists(sidecar), "missing-file",
                    "no withheld sidecar " + sidecar.string());
            Mask m = load_mask(sidecar);
            require(m.width == slice.image.width && m.height == slice.image.height,
                    "dimension-mismatch", sidecar.string());
            slice.masks[e] = std::move(m);
        }
    }
    return filled;
}

struct MethodOutput {
    std::vector<Mask> consensus;
    nlohmann::json report;
    std::optional<ScReport> sc;
    std::optional<AnnotationSet> imputed; // gcme / gcme-wsc only
};

namespace detail {

inline nlohmann::json fusion_report_json(const FusionResult& r) {
    nlohmann::json j;
    j["lambda"] = r.lambda;
    j["sigma"] = r.sigma;
    j["sc"] = r.sc.sc;
    j["energy_per_slice"] = r.energy;
    return j;
}

// SC for the no-SSL ablation: probe only the slices where every expert is
// present. With none co-present all experts fall back to indifference.
inline ScReport wssl_sc(LoadedDataset& ds, const PipelineConfig& cfg) {
    std::vector<std::uint32_t> full;
    for (std::uint32_t s = 0; s < ds.ann.slices.size(); ++s)
        if (ds.ann.slices[s].present_count() == ds.ann.expert_count()) full.push_back(s);
    if (full.empty()) {
        ScReport flat;
        flat.sc.assign(ds.ann.experts.size(), 0.0);
        flat.seed = cfg.seed;
        flat.n_trees = 0;
        return flat;
    }
    const std::vector<Roi> rois = compute_rois(ds.ann, cfg.roi_margin);
    return self_consistency(ds.ann, ds.ensure_contexts(cfg.threads), rois, cfg.forest,
                            cfg.seed, cfg.budget, full, cfg.threads);
}

} // namespace detail

/// Runs one fusion method end to end on a loaded dataset.
///   gcme      impute missing annotations, score SC, fuse
///   gcme-all  fill missing from withheld sidecars (no imputation), SC, fuse
///   gcme-wssl fuse the present annotations only; SC from co-present slices
///   gcme-wsc  impute, then fuse with SC disabled (uninformative penalties)
///   mv        per-pixel majority vote over present annotations
inline MethodOutput run_fuse_method(LoadedDataset& ds, FuseMethod method,
                                    const PipelineConfig& cfg) {
    cfg.fusion.validate();
    cfg.forest.validate();
    MethodOutput out;
    switch (method) {
    case FuseMethod::kGcme: {
        const auto& ctx = ds.ensure_contexts(cfg.threads);
        const std::vector<Roi> rois = compute_rois(ds.ann, cfg.roi_margin);
        AnnotationSet filled =
            impute_missing(ds.ann, ctx, rois, cfg.forest, cfg.seed, cfg.budget, cfg.threads);
        FusionResult r = fuse(filled, ctx, cfg.fusion, cfg.forest, cfg.seed, cfg.budget,
                              cfg.roi_margin, cfg.threads);
        out.report = detail::fusion_report_json(r);
        out.sc = r.sc;
        out.consensus = std::move(r.consensus);
        out.imputed = std::move(filled);
        break;
    }
    case FuseMethod::kGcmeAll: {
        AnnotationSet filled = fill_from_sidecars(ds);
        FusionResult r = fuse(filled, ds.ensure_contexts(cfg.threads), cfg.fusion, cfg.forest,
                              cfg.seed, cfg.budget, cfg.roi_margin, cfg.threads);
        out.report = detail::fusion_report_json(r);
        out.sc = r.sc;
        out.consensus = std::move(r.consensus);
        break;
    }
    case FuseMethod::kGcmeWssl: {
        const ScReport sc = detail::wssl_sc(ds, cfg);
        std::vector<double> trust(sc.sc.size());
        for (std::size_t e = 0; e < sc.sc.size(); ++e) trust[e] = sc_trust(sc.sc[e]);
        const std::vector<Roi> rois = compute_rois(ds.ann, cfg.roi_margin);
        FusionResult r =
            detail::fuse_with_trust(ds.ann, rois, trust, sc, cfg.fusion, cfg.threads);
        out.report = detail::fusion_report_json(r);
        out.sc = r.sc;
        out.consensus = std::move(r.consensus);
        break;
    }
    case FuseMethod::kGcmeWsc: {
        const auto& ctx = ds.ensure_contexts(cfg.threads);
        const std::vector<Roi> rois = compute_rois(ds.ann, cfg.roi_margin);
        AnnotationSet filled =
            impute_missing(ds.ann, ctx, rois, cfg.forest, cfg.seed, cfg.budget, cfg.threads);
        ScReport flat;
        flat.sc.assign(ds.ann.experts.size(), 0.5);
        flat.seed = cfg.seed;
        flat.n_trees = 0;
        // raw_trust: the flat 0.5 goes straight into the penalties, making
        // them fully uninformative (D0 = D1 = 1/2 everywhere).
        FusionResult r = fuse(filled, ctx, cfg.fusion, cfg.forest, cfg.seed, cfg.budget,
                              cfg.roi_margin, cfg.threads, &flat, /*raw_trust=*/true);
        out.report = detail::fusion_report_json(r);
        out.sc = r.sc;
        out.consensus = std::move(r.consensus);
        out.imputed = std::move(filled);
        break;
    }
    case FuseMethod::kMv: {
        out.consensus = majority_vote(ds.ann, cfg.fusion.tie_label);
        out.report = {{"method", "mv"}, {"tie_label", cfg.fusion.tie_label}};
        break;
    }
    }
    return out;
}

inline std::string slice_consensus_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "consensus_%04zu.pgm", index);
    return buf;
}

inline void write_method_output(const MethodOutput& out, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t s = 0; s < out.consensus.size(); ++s)
        write_mask(out.consensus[s], dir / slice_consensus_name(s));
    std::ofstream report(dir / "fusion_report.json");
    require(report.good(), "io-error", "cannot write fusion report");
    report << out.report.dump(2) << "\n";
}

} // namespace consensus
