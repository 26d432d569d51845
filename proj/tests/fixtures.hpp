#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "consensus/dataset.hpp"
#include "consensus/features.hpp"
#include "consensus/image.hpp"
#include "consensus/rng.hpp"
#include "consensus/sampling.hpp"

namespace test_support {

/// Feature-rich synthetic slice: the foreground square carries an oriented
/// sinusoidal texture with higher mean, variance and curvature than the
/// smooth dark background, so most of the 181 features separate the classes.
struct TexturedScene {
    consensus::ImageGrid image;
    consensus::Mask gt;
};

inline TexturedScene textured_scene(int size, std::uint64_t seed) {
    consensus::Rng rng(seed);
    TexturedScene scene;
    scene.image = consensus::ImageGrid(size, size);
    scene.gt = consensus::Mask(size, size);
    const int lo = size / 4, hi = 3 * size / 4;
    const double pi = 3.14159265358979323846;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const bool fg = x >= lo && x < hi && y >= lo && y < hi;
            double v;
            if (fg) {
                scene.gt.at(x, y) = 1;
                v = 0.65 + 0.18 * std::sin(2.0 * pi * x / 8.0) + rng.normal(0.0, 0.05);
            } else {
                v = 0.2 + rng.normal(0.0, 0.02);
            }
            scene.image.at(x, y) = std::clamp(v, 0.0, 1.0);
        }
    }
    return scene;
}

/// Dark noisy foreground square against a bright broadband texture
/// (4 orientations x 2 wavelengths matching the Gabor bank), so nearly every
/// feature family separates the classes with continuous within-class spread.
inline TexturedScene broadband_scene(int size, int half, std::uint64_t seed) {
    consensus::Rng rng(seed);
    TexturedScene scene;
    scene.image = consensus::ImageGrid(size, size);
    scene.gt = consensus::Mask(size, size);
    const double pi = 3.14159265358979323846;
    const int lo = size / 2 - half, hi = size / 2 + half;
    const double r2 = std::sqrt(2.0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const bool fg = x >= lo && x < hi && y >= lo && y < hi;
            double v;
            if (fg) {
                scene.gt.at(x, y) = 1;
                v = 0.12 + rng.normal(0, 0.05);
            } else {
                double t = 0.0;
                for (const double wl : {4.0, 8.0}) {
                    t += std::sin(2 * pi * y / wl);
                    t += std::sin(2 * pi * x / wl);
                    t += std::sin(2 * pi * (x - y) / (wl * r2));
                    t += std::sin(2 * pi * (x + y) / (wl * r2));
                }
                v = 0.62 + 0.035 * t + rng.normal(0, 0.02);
            }
            scene.image.at(x, y) = std::clamp(v, 0.0, 1.0);
        }
    }
    return scene;
}

inline consensus::Mask random_label_mask(int size, std::uint64_t seed) {
    consensus::Rng rng(seed);
    consensus::Mask m(size, size);
    for (auto& v : m.data) v = rng.bernoulli(0.5) ? 1 : 0;
    return m;
}

inline consensus::AnnotationSet
make_annotations(const consensus::ImageGrid& image,
                 const std::vector<consensus::Mask>& expert_masks) {
    consensus::AnnotationSet set;
    consensus::Slice slice;
    slice.image = image;
    for (std::size_t e = 0; e < expert_masks.size(); ++e) {
        set.experts.push_back("expert_" + std::to_string(e));
        slice.masks.emplace_back(expert_masks[e]);
    }
    set.slices.push_back(std::move(slice));
    return set;
}

} // namespace test_support
