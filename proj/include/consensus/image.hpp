#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "consensus/error.hpp"

namespace consensus {

/// 2D grayscale raster, row-major, intensities expected in [0,1] once
/// normalized. Also reused as a generic scalar map (texture, curvature).
struct ImageGrid {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    ImageGrid() = default;
    ImageGrid(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    std::size_t size() const { return data.size(); }
    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

/// Binary mask paired with an ImageGrid; values strictly {0,1}.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    std::size_t size() const { return data.size(); }
    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }
    bool operator==(const Mask& o) const {
        return width == o.width && height == o.height && data == o.data;
    }
};

/// Inclusive pixel bounds, clamped to the image and non-empty.
struct Roi {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    std::size_t area() const { return static_cast<std::size_t>(width()) * height(); }
    bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
    bool operator==(const Roi& o) const {
        return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
    }
};

/// Mirror (symmetric) reflection of an index into [0, n).
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

/// Sample with mirror padding outside the image.
inline double sample_mirrored(const ImageGrid& img, int x, int y) {
    return img.at(reflect_index(x, img.width), reflect_index(y, img.height));
}

/// Min-max normalization to [0,1] in place; a constant map becomes all zeros.
inline void normalize_min_max(ImageGrid& img) {
    if (img.data.empty()) return;
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    const double mn = *lo, mx = *hi;
    if (mx <= mn) {
        std::fill(img.data.begin(), img.data.end(), 0.0);
        return;
    }
    const double inv = 1.0 / (mx - mn);
    for (auto& v : img.data) v = (v - mn) * inv;
}

} // namespace consensus
