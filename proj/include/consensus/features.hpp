#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "consensus/error.hpp"
#include "consensus/image.hpp"

namespace consensus {

// Per-pixel feature vector layout (181 values):
//   [0..4)    intensity statistics of the 31x31 patch: mean, variance,
//             skewness, kurtosis
//   [4..76)   texture entropies: 8 Gabor maps x 9 sectors, map-major
//   [76..85)  curvature entropies: 9 sectors
//   [85..181) spatial context: 8 rays x 4 radii x (intensity, texture,
//             curvature) means over 3x3 regions, ray-major, radius-minor
inline constexpr int kFeatureDim = 181;
inline constexpr int kPatchHalf = 15; // 31x31 patch
inline constexpr int kHistogramBins = 16;
inline constexpr int kSectorCount = 9;

// Gabor bank: orientations 0,45,90,135 degrees x scales 0.5,1.
// Map index = orientation_index * 2 + scale_index; the context features use
// the 90 degree / scale 1 map (index 5).
inline constexpr int kGaborMapCount = 8;
inline constexpr std::array<double, 4> kGaborOrientationsDeg = {0.0, 45.0, 90.0, 135.0};
inline constexpr std::array<double, 2> kGaborScales = {0.5, 1.0};
inline constexpr int kContextTextureMap = 5;

inline constexpr std::array<int, 4> kContextRadii = {3, 8, 15, 22};
inline constexpr int kContextRays = 8;

using FeatureVector = std::array<double, kFeatureDim>;

/// 9 equal 40-degree angular sectors of the radius-15 disk inscribed in the
/// 31x31 patch; the center pixel belongs to sector 0.
struct SectorTemplate {
    struct Offset {
        std::int8_t dx;
        std::int8_t dy;
        std::uint8_t sector;
    };
    std::vector<Offset> offsets;

    static SectorTemplate build() {
        SectorTemplate t;
        const double pi = 3.14159265358979323846;
        for (int dy = -kPatchHalf; dy <= kPatchHalf; ++dy) {
            for (int dx = -kPatchHalf; dx <= kPatchHalf; ++dx) {
                if (dx * dx + dy * dy > kPatchHalf * kPatchHalf) continue;
                double deg = std::atan2(static_cast<double>(dy), static_cast<double>(dx)) *
                             180.0 / pi;
                if (deg < 0) deg += 360.0;
                int sector = static_cast<int>(deg / 40.0);
                if (sector > kSectorCount - 1) sector = kSectorCount - 1;
                t.offsets.push_back({static_cast<std::int8_t>(dx), static_cast<std::int8_t>(dy),
                                     static_cast<std::uint8_t>(sector)});
            }
        }
        return t;
    }

    static const SectorTemplate& standard() {
        static const SectorTemplate t = build();
        return t;
    }
};

/// Quadrature Gabor magnitude response. For scale s: envelope sigma = 4s px,
/// wavelength = 8s px, isotropic envelope, kernel half-width ceil(3*sigma).
/// theta names the orientation of the filter's ridges, so the 90-degree map
/// responds most to vertical stripe patterns.
inline ImageGrid gabor_magnitude(const ImageGrid& img, double theta_deg, double scale) {
    const double pi = 3.14159265358979323846;
    const double sigma = 4.0 * scale;
    const double wavelength = 8.0 * scale;
    const int half = static_cast<int>(std::ceil(3.0 * sigma));
    const double theta = theta_deg * pi / 180.0;
    const double sin_t = std::sin(theta), cos_t = std::cos(theta);

    const int ksize = 2 * half + 1;
    std::vector<double> even(static_cast<std::size_t>(ksize) * ksize);
    std::vector<double> odd(static_cast<std::size_t>(ksize) * ksize);
    for (int dy = -half; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx) {
            const double envelope =
                std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            const double u = dx * sin_t - dy * cos_t; // carrier axis, perpendicular to ridges
            const double phase = 2.0 * pi * u / wavelength;
            const std::size_t k = static_cast<std::size_t>(dy + half) * ksize + (dx + half);
            even[k] = envelope * std::cos(phase);
            odd[k] = envelope * std::sin(phase);
        }
    }

    ImageGrid out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double re = 0.0, im = 0.0;
            for (int dy = -half; dy <= half; ++dy) {
                const int yy = reflect_index(y + dy, img.height);
                const std::size_t krow = static_cast<std::size_t>(dy + half) * ksize;
                for (int dx = -half; dx <= half; ++dx) {
                    const int xx = reflect_index(x + dx, img.width);
                    const double v = img.at(xx, yy);
                    re += even[krow + (dx + half)] * v;
                    im += odd[krow + (dx + half)] * v;
                }
            }
            out.at(x, y) = std::sqrt(re * re + im * im);
        }
    }
    return out;
}

/// Gaussian smoothing, separable, mirror padded.
inline ImageGrid gaussian_smooth(const ImageGrid& img, double sigma) {
    const int half = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
    double sum = 0.0;
    for (int i = -half; i <= half; ++i) {
        kernel[i + half] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += kernel[i + half];
    }
    for (auto& k : kernel) k /= sum;

    ImageGrid tmp(img.width, img.height), out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -half; i <= half; ++i)
                acc += kernel[i + half] * img.at(reflect_index(x + i, img.width), y);
            tmp.at(x, y) = acc;
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -half; i <= half; ++i)
                acc += kernel[i + half] * tmp.at(x, reflect_index(y + i, img.height));
            out.at(x, y) = acc;
        }
    return out;
}

/// Mean curvature of the intensity graph surface z = I(x,y), derivatives by
/// central differences after Gaussian pre-smoothing (sigma = 1 px).
inline ImageGrid mean_curvature(const ImageGrid& img) {
    const ImageGrid s = gaussian_smooth(img, 1.0);
    ImageGrid out(img.width, img.height);
    auto v = [&](int x, int y) {
        return s.at(reflect_index(x, s.width), reflect_index(y, s.height));
    };
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double ix = (v(x + 1, y) - v(x - 1, y)) / 2.0;
            const double iy = (v(x, y + 1) - v(x, y - 1)) / 2.0;
            const double ixx = v(x + 1, y) - 2.0 * v(x, y) + v(x - 1, y);
            const double iyy = v(x, y + 1) - 2.0 * v(x, y) + v(x, y - 1);
            const double ixy =
                (v(x + 1, y + 1) - v(x + 1, y - 1) - v(x - 1, y + 1) + v(x - 1, y - 1)) / 4.0;
            const double g = 1.0 + ix * ix + iy * iy;
            out.at(x, y) = ((1.0 + ix * ix) * iyy - 2.0 * ix * iy * ixy +
                            (1.0 + iy * iy) * ixx) /
                           (2.0 * std::pow(g, 1.5));
        }
    }
    return out;
}

/// Image plus its derived maps. All maps are min-max normalized to [0,1];
/// the context is immutable once built and safe to share across threads.
struct FeatureContext {
    ImageGrid image;
    std::array<ImageGrid, kGaborMapCount> texture;
    ImageGrid curvature;
};

inline FeatureContext build_feature_context(const ImageGrid& image) {
    FeatureContext ctx;
    ctx.image = image;
    for (int o = 0; o < 4; ++o) {
        for (int s = 0; s < 2; ++s) {
            ImageGrid map = gabor_magnitude(image, kGaborOrientationsDeg[o], kGaborScales[s]);
            normalize_min_max(map);
            ctx.texture[o * 2 + s] = std::move(map);
        }
    }
    ctx.curvature = mean_curvature(image);
    normalize_min_max(ctx.curvature);
    return ctx;
}

/// Mean, variance, skewness, kurtosis of the 31x31 patch (population
/// moments, mirror padded). Constant patches report zero skewness/kurtosis.
inline std::array<double, 4> intensity_stats(const ImageGrid& img, int cx, int cy) {
    constexpr int n = (2 * kPatchHalf + 1) * (2 * kPatchHalf + 1);
    double sum = 0.0;
    std::array<double, n> values;
    int k = 0;
    for (int dy = -kPatchHalf; dy <= kPatchHalf; ++dy) {
        const int yy = reflect_index(cy + dy, img.height);
        for (int dx = -kPatchHalf; dx <= kPatchHalf; ++dx) {
            const double v = img.at(reflect_index(cx + dx, img.width), yy);
            values[k++] = v;
            sum += v;
        }
    }
    const double mean = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (const double v : values) {
        const double d = v - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (m2 < 1e-12) return {mean, m2, 0.0, 0.0};
    const double sd = std::sqrt(m2);
    return {mean, m2, m3 / (sd * sd * sd), m4 / (m2 * m2)};
}

inline double shannon_entropy_bits(const std::array<std::uint32_t, kHistogramBins>& counts) {
    std::uint64_t total = 0;
    for (const auto c : counts) total += c;
    if (total == 0) return 0.0;
    double h = 0.0;
    for (const auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return h;
}

/// Per-sector Shannon entropy (base 2) of a 16-bin histogram of map values
/// in [0,1] around the center pixel.
inline std::array<double, kSectorCount> sector_entropy(const ImageGrid& map, int cx, int cy,
                                                       const SectorTemplate& tmpl,
                                                       int bins = kHistogramBins) {
    require(bins >= 1 && bins <= kHistogramBins, "invalid-argument",
            "histogram bins out of supported range");
    std::array<std::array<std::uint32_t, kHistogramBins>, kSectorCount> hist{};
    for (const auto& o : tmpl.offsets) {
        const double v = map.at(reflect_index(cx + o.dx, map.width),
                                reflect_index(cy + o.dy, map.height));
        int b = static_cast<int>(v * bins);
        if (b >= bins) b = bins - 1;
        if (b < 0) b = 0;
        hist[o.sector][b]++;
    }
    std::array<double, kSectorCount> out;
    for (int s = 0; s < kSectorCount; ++s) out[s] = shannon_entropy_bits(hist[s]);
    return out;
}

/// 96 context values: for each of 8 rays (45 degrees apart) and radii
/// {3,8,15,22}, the 3x3 means of intensity, the 90-degree/scale-1 texture
/// map, and the curvature map at the sampled point.
inline std::array<double, 96> context_features(const FeatureContext& ctx, int cx, int cy) {
    const double pi = 3.14159265358979323846;
    std::array<double, 96> out;
    int k = 0;
    auto mean3x3 = [](const ImageGrid& map, int x, int y) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                acc += map.at(reflect_index(x + dx, map.width), reflect_index(y + dy, map.height));
        return acc / 9.0;
    };
    for (int ray = 0; ray < kContextRays; ++ray) {
        const double angle = ray * (2.0 * pi / kContextRays);
        const double dx = std::cos(angle), dy = std::sin(angle);
        for (const int radius : kContextRadii) {
            const int px = cx + static_cast<int>(std::lround(radius * dx));
            const int py = cy + static_cast<int>(std::lround(radius * dy));
            out[k++] = mean3x3(ctx.image, px, py);
            out[k++] = mean3x3(ctx.texture[kContextTextureMap], px, py);
            out[k++] = mean3x3(ctx.curvature, px, py);
        }
    }
    return out;
}

inline FeatureVector feature_vector(const FeatureContext& ctx, int cx, int cy) {
    FeatureVector f;
    const auto stats = intensity_stats(ctx.image, cx, cy);
    f[0] = stats[0];
    f[1] = stats[1];
    f[2] = stats[2];
    f[3] = stats[3];
    const SectorTemplate& tmpl = SectorTemplate::standard();
    int k = 4;
    for (int m = 0; m < kGaborMapCount; ++m) {
        const auto e = sector_entropy(ctx.texture[m], cx, cy, tmpl);
        for (int s = 0; s < kSectorCount; ++s) f[k++] = e[s];
    }
    const auto ce = sector_entropy(ctx.curvature, cx, cy, tmpl);
    for (int s = 0; s < kSectorCount; ++s) f[k++] = ce[s];
    const auto context = context_features(ctx, cx, cy);
    for (const double v : context) f[k++] = v;
    return f;
}

/// Debug dump: one row per ROI pixel, header "px,py,f0..f180".
inline void write_feature_csv(const FeatureContext& ctx, const Roi& roi,
                              const std::filesystem::path& path) {
    std::ofstream out(path);
    require(out.good(), "io-error", "cannot write " + path.string());
    out << "px,py";
    for (int i = 0; i < kFeatureDim; ++i) out << ",f" << i;
    out << "\n";
    out.precision(9);
    for (int y = roi.y0; y <= roi.y1; ++y) {
        for (int x = roi.x0; x <= roi.x1; ++x) {
            const FeatureVector f = feature_vector(ctx, x, y);
            out << x << "," << y;
            for (const double v : f) out << "," << v;
            out << "\n";
        }
    }
}

} // namespace consensus
