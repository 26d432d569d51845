#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "consensus/features.hpp"
#include "consensus/rng.hpp"

using namespace consensus;

namespace {

ImageGrid random_image(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    ImageGrid img(w, h);
    for (auto& v : img.data) v = rng.real01();
    return img;
}

} // namespace

TEST_CASE("sector template partitions the radius-15 disk into 9 sectors") {
    const SectorTemplate& t = SectorTemplate::standard();
    std::set<std::pair<int, int>> seen;
    std::array<int, kSectorCount> per_sector{};
    for (const auto& o : t.offsets) {
        CHECK(o.dx * o.dx + o.dy * o.dy <= kPatchHalf * kPatchHalf);
        CHECK(o.sector < kSectorCount);
        per_sector[o.sector]++;
        CHECK(seen.insert({o.dx, o.dy}).second); // disjoint
    }
    // Union covers the full disk.
    int disk = 0;
    for (int dy = -kPatchHalf; dy <= kPatchHalf; ++dy)
        for (int dx = -kPatchHalf; dx <= kPatchHalf; ++dx)
            if (dx * dx + dy * dy <= kPatchHalf * kPatchHalf) ++disk;
    CHECK(static_cast<int>(t.offsets.size()) == disk);
    for (const int n : per_sector) CHECK(n > 0);
    // Center pixel joins sector 0.
    for (const auto& o : t.offsets)
        if (o.dx == 0 && o.dy == 0) CHECK(o.sector == 0);
}

TEST_CASE("intensity stats on a constant patch") {
    ImageGrid img(64, 64, 0.37);
    const auto s = intensity_stats(img, 32, 32);
    CHECK(s[0] == Catch::Approx(0.37));
    CHECK(s[1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(s[2] == 0.0);
    CHECK(s[3] == 0.0);
}

TEST_CASE("intensity stats on a half 0s / half 1s patch") {
    // Vertical stripes of single-pixel width: patch is ~half zeros, half ones.
    ImageGrid img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) img.at(x, y) = x % 2;
    const auto s = intensity_stats(img, 32, 32);

    // Oracle: direct summation over the mirrored patch.
    double sum = 0;
    std::vector<double> vals;
    for (int dy = -kPatchHalf; dy <= kPatchHalf; ++dy)
        for (int dx = -kPatchHalf; dx <= kPatchHalf; ++dx) {
            vals.push_back(img.at(reflect_index(32 + dx, 64), reflect_index(32 + dy, 64)));
            sum += vals.back();
        }
    const double mean = sum / vals.size();
    double m2 = 0, m3 = 0, m4 = 0;
    for (const double v : vals) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= vals.size();
    m3 /= vals.size();
    m4 /= vals.size();

    CHECK(s[0] == Catch::Approx(mean).margin(1e-12));
    CHECK(s[1] == Catch::Approx(m2).margin(1e-12));
    CHECK(s[2] == Catch::Approx(m3 / std::pow(std::sqrt(m2), 3)).margin(1e-12));
    CHECK(s[3] == Catch::Approx(m4 / (m2 * m2)).margin(1e-12));

    // Bernoulli(1/2) closed forms, up to the odd patch width (the 31x31
    // patch holds 16/31 odd columns, so the split is 16:15, not exact).
    CHECK(s[0] == Catch::Approx(0.5).margin(0.02));
    CHECK(s[1] == Catch::Approx(0.25).margin(1e-3));
    CHECK(s[2] == Catch::Approx(0.0).margin(0.07));
    CHECK(s[3] == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("asymmetric patch has positive skewness") {
    // One pixel in four is bright.
    ImageGrid img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) img.at(x, y) = (x % 2 == 0 && y % 2 == 0) ? 1.0 : 0.0;
    const auto s = intensity_stats(img, 32, 32);
    CHECK(s[2] > 0.0);
}

TEST_CASE("sector entropy: delta distribution and helper bounds") {
    ImageGrid constant(64, 64, 0.42);
    const auto e = sector_entropy(constant, 32, 32, SectorTemplate::standard());
    for (const double v : e) CHECK(v == Catch::Approx(0.0).margin(1e-12));

    // Uniform counts over all 16 bins -> 4 bits; exact 2-bin split -> 1 bit.
    std::array<std::uint32_t, kHistogramBins> uniform{};
    uniform.fill(3);
    CHECK(shannon_entropy_bits(uniform) == Catch::Approx(4.0).margin(1e-12));
    std::array<std::uint32_t, kHistogramBins> two{};
    two[2] = 39;
    two[11] = 39;
    CHECK(shannon_entropy_bits(two) == Catch::Approx(1.0).margin(1e-12));

    // Two-valued map: per-sector entropy close to 1 bit.
    ImageGrid stripes(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) stripes.at(x, y) = (x % 2) ? 0.9 : 0.05;
    const auto se = sector_entropy(stripes, 32, 32, SectorTemplate::standard());
    for (const double v : se) {
        CHECK(v > 0.9);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("entropy values stay within [0, log2(bins)] on random maps") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const ImageGrid img = random_image(48, 48, 100 + trial);
        const auto e = sector_entropy(img, static_cast<int>(rng.bounded(48)),
                                      static_cast<int>(rng.bounded(48)),
                                      SectorTemplate::standard());
        for (const double v : e) {
            CHECK(v >= 0.0);
            CHECK(v <= std::log2(static_cast<double>(kHistogramBins)) + 1e-12);
        }
    }
}

TEST_CASE("gabor magnitude: 90-degree map dominates on vertical stripes") {
    // Vertical stripes at the scale-1 wavelength (8 px).
    ImageGrid img(96, 96);
    const double pi = 3.14159265358979323846;
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x) img.at(x, y) = 0.5 + 0.4 * std::cos(2.0 * pi * x / 8.0);

    std::array<double, 4> mean_response{};
    for (int o = 0; o < 4; ++o) {
        const ImageGrid map = gabor_magnitude(img, kGaborOrientationsDeg[o], 1.0);
        double acc = 0;
        for (const double v : map.data) acc += v;
        mean_response[o] = acc / map.data.size();
    }
    CHECK(mean_response[2] > mean_response[0]);
    CHECK(mean_response[2] > mean_response[1]);
    CHECK(mean_response[2] > mean_response[3]);
}

TEST_CASE("constant image yields all-zero texture maps after normalization") {
    const ImageGrid img(48, 48, 0.7);
    const FeatureContext ctx = build_feature_context(img);
    for (const auto& map : ctx.texture)
        for (const double v : map.data) CHECK(v == 0.0);
    for (const double v : ctx.curvature.data) CHECK(v == 0.0);
}

TEST_CASE("linear ramp has near-zero raw curvature in the interior") {
    ImageGrid img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) img.at(x, y) = static_cast<double>(x) / 64.0;
    const ImageGrid curv = mean_curvature(img);
    for (int y = 8; y < 56; ++y)
        for (int x = 8; x < 56; ++x) CHECK(std::abs(curv.at(x, y)) < 1e-9);
}

TEST_CASE("context features: constant image and corner queries") {
    const ImageGrid img(64, 64, 0.3);
    const FeatureContext ctx = build_feature_context(img);
    const auto c = context_features(ctx, 32, 32);
    for (int k = 0; k < 96; k += 3) {
        CHECK(c[k] == Catch::Approx(0.3).margin(1e-12)); // intensity means
        CHECK(c[k + 1] == 0.0);                          // texture means
        CHECK(c[k + 2] == 0.0);                          // curvature means
    }
    // Corner query stays finite thanks to mirror padding.
    const auto corner = context_features(ctx, 0, 0);
    for (const double v : corner) CHECK(std::isfinite(v));
}

TEST_CASE("context features differ across rays on a step edge") {
    ImageGrid img(96, 96);
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x) img.at(x, y) = x >= 48 ? 1.0 : 0.0;
    const FeatureContext ctx = build_feature_context(img);
    const auto c = context_features(ctx, 47, 48);
    // Ray 0 points toward +x (bright), ray 4 toward -x (dark); compare the
    // intensity mean at the outermost radius (index 3).
    const double bright = c[(0 * 4 + 3) * 3 + 0];
    const double dark = c[(4 * 4 + 3) * 3 + 0];

    // Oracle: direct 3x3 averaging on the raw image.
    auto direct = [&](int px, int py) {
        double acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                acc += img.at(reflect_index(px + dx, 96), reflect_index(py + dy, 96));
        return acc / 9.0;
    };
    CHECK(bright == Catch::Approx(direct(47 + 22, 48)).margin(1e-12));
    CHECK(dark == Catch::Approx(direct(47 - 22, 48)).margin(1e-12));
    CHECK(bright > dark);
}

TEST_CASE("feature vector has length 181, is finite and deterministic") {
    const ImageGrid img = random_image(72, 60, 9001);
    const FeatureContext ctx = build_feature_context(img);
    const FeatureVector f = feature_vector(ctx, 10, 50);
    CHECK(f.size() == 181);
    for (const double v : f) CHECK(std::isfinite(v));

    // Border pixel still finite.
    const FeatureVector edge = feature_vector(ctx, 0, 59);
    for (const double v : edge) CHECK(std::isfinite(v));

    // Identical images give identical vectors.
    const FeatureContext ctx2 = build_feature_context(img);
    const FeatureVector g = feature_vector(ctx2, 10, 50);
    for (int i = 0; i < kFeatureDim; ++i) CHECK(f[i] == g[i]);
}

TEST_CASE("texture block equals manual assembly from sector entropies") {
    const ImageGrid img = random_image(64, 64, 1717);
    const FeatureContext ctx = build_feature_context(img);
    const FeatureVector f = feature_vector(ctx, 30, 28);
    int k = 4;
    for (int m = 0; m < kGaborMapCount; ++m) {
        const auto e = sector_entropy(ctx.texture[m], 30, 28, SectorTemplate::standard());
        for (int s = 0; s < kSectorCount; ++s) CHECK(f[k++] == e[s]);
    }
    const auto ce = sector_entropy(ctx.curvature, 30, 28, SectorTemplate::standard());
    for (int s = 0; s < kSectorCount; ++s) CHECK(f[k++] == ce[s]);
}

TEST_CASE("feature extraction is translation consistent away from borders") {
    // Embed the same texture at two offsets; the Gabor/curvature maps are
    // translation covariant away from borders, and min-max normalization uses
    // the same extrema because the pattern is periodic.
    const int w = 160, h = 160;
    ImageGrid a(w, h), b(w, h);
    const double pi = 3.14159265358979323846;
    auto pattern = [&](double x, double y) {
        return 0.5 + 0.25 * std::sin(2.0 * pi * x / 16.0) * std::cos(2.0 * pi * y / 8.0);
    };
    const int sx = 16, sy = 8; // shift by whole periods keeps extrema identical
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            a.at(x, y) = pattern(x, y);
            b.at(x, y) = pattern(x - sx, y - sy);
        }
    const FeatureContext ca = build_feature_context(a);
    const FeatureContext cb = build_feature_context(b);
    const FeatureVector fa = feature_vector(ca, 70, 74);
    const FeatureVector fb = feature_vector(cb, 70 + sx, 74 + sy);
    for (int i = 0; i < kFeatureDim; ++i)
        CHECK(fa[i] == Catch::Approx(fb[i]).margin(1e-9));
}
