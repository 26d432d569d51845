#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <utility>
#include <vector>

#include "consensus/error.hpp"
#include "consensus/image.hpp"

namespace consensus {

/// Boundary pixels: mask pixels with at least one 4-neighbor outside the
/// mask (off-grid neighbors count as outside).
inline std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            const bool interior = x > 0 && m.at(x - 1, y) && x + 1 < m.width && m.at(x + 1, y) &&
                                  y > 0 && m.at(x, y - 1) && y + 1 < m.height && m.at(x, y + 1);
            if (!interior) out.emplace_back(x, y);
        }
    }
    return out;
}

inline double dice(const Mask& a, const Mask& m) {
    require(a.width == m.width && a.height == m.height, "dimension-mismatch",
            "dice on masks of different size");
    std::uint64_t na = 0, nm = 0, ni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a.data[i];
        nm += m.data[i];
        ni += a.data[i] & m.data[i];
    }
    if (na + nm == 0) return 1.0; // both empty, by convention
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nm);
}

namespace detail {

// Felzenszwalb-Huttenlocher exact 1-D squared distance transform.
inline void dt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                  std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    d.resize(n);
    v.resize(n);
    z.resize(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        for (;;) {
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
            if (s <= z[k]) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
    }
}

// Exact squared Euclidean distance to the given seed points, on a w x h grid.
// Empty cells use a large finite sentinel; infinities break the parabola
// intersection arithmetic in dt_1d.
inline std::vector<double> squared_edt(int w, int h,
                                       const std::vector<std::pair<int, int>>& seeds) {
    const double inf = 1e12;
    std::vector<double> grid(static_cast<std::size_t>(w) * h, inf);
    for (const auto& [x, y] : seeds) grid[static_cast<std::size_t>(y) * w + x] = 0.0;

    std::vector<double> f, d, z;
    std::vector<int> v;
    f.resize(std::max(w, h));
    for (int x = 0; x < w; ++x) {
        f.resize(h);
        for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
        dt_1d(f, d, v, z);
        for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
    }
    for (int y = 0; y < h; ++y) {
        f.resize(w);
        for (int x = 0; x < w; ++x) f[x] = grid[static_cast<std::size_t>(y) * w + x];
        dt_1d(f, d, v, z);
        for (int x = 0; x < w; ++x) grid[static_cast<std::size_t>(y) * w + x] = d[x];
    }
    return grid;
}

inline double directed_hausdorff(const std::vector<std::pair<int, int>>& from, int w, int h,
                                 const std::vector<std::pair<int, int>>& to) {
    const std::vector<double> edt = squared_edt(w, h, to);
    double worst = 0.0;
    for (const auto& [x, y] : from)
        worst = std::max(worst, edt[static_cast<std::size_t>(y) * w + x]);
    return std::sqrt(worst);
}

} // namespace detail

/// Symmetric Hausdorff distance between the boundary point sets of two masks
/// (Euclidean, exact via distance transform).
inline double hausdorff(const Mask& a, const Mask& m) {
    require(a.width == m.width && a.height == m.height, "dimension-mismatch",
            "hausdorff on masks of different size");
    const auto ba = boundary_pixels(a);
    const auto bm = boundary_pixels(m);
    require(!ba.empty() && !bm.empty(), "undefined-hd", "hausdorff of an empty mask");
    return std::max(detail::directed_hausdorff(ba, a.width, a.height, bm),
                    detail::directed_hausdorff(bm, a.width, a.height, ba));
}

inline int connected_components_4(const Mask& m) {
    std::vector<std::uint8_t> seen(m.size(), 0);
    int comps = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y) || seen[static_cast<std::size_t>(y) * m.width + x]) continue;
            ++comps;
            seen[static_cast<std::size_t>(y) * m.width + x] = 1;
            queue.emplace_back(x, y);
            while (!queue.empty()) {
                const auto [px, py] = queue.front();
                queue.pop_front();
                const int nx[4] = {px - 1, px + 1, px, px};
                const int ny[4] = {py, py, py - 1, py + 1};
                for (int k = 0; k < 4; ++k) {
                    if (!m.in_bounds(nx[k], ny[k]) || !m.at(nx[k], ny[k])) continue;
                    auto& flag = seen[static_cast<std::size_t>(ny[k]) * m.width + nx[k]];
                    if (flag) continue;
                    flag = 1;
                    queue.emplace_back(nx[k], ny[k]);
                }
            }
        }
    }
    return comps;
}

namespace detail {

// Largest t >= 0 at which the ray c + t*dir still lies inside some pixel
// (unit square around the pixel center) of the mask, or nullopt if the ray
// misses the mask entirely.
inline bool ray_exit_radius(const Mask& m, double cx, double cy, double dx, double dy,
                            double& r_out) {
    bool hit = false;
    double r = 0.0;
    auto axis_interval = [](double c, double d, double p, double& lo, double& hi) {
        // t range with |c + t*d - p| <= 0.5
        if (std::abs(d) < 1e-15) {
            if (std::abs(c - p) > 0.5) return false;
            lo = -std::numeric_limits<double>::infinity();
            hi = std::numeric_limits<double>::infinity();
            return true;
        }
        double t0 = (p - 0.5 - c) / d;
        double t1 = (p + 0.5 - c) / d;
        if (t0 > t1) std::swap(t0, t1);
        lo = t0;
        hi = t1;
        return true;
    };
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            double lx, hx, ly, hy;
            if (!axis_interval(cx, dx, x, lx, hx)) continue;
            if (!axis_interval(cy, dy, y, ly, hy)) continue;
            const double lo = std::max({lx, ly, 0.0});
            const double hi = std::min(hx, hy);
            if (hi < lo) continue;
            hit = true;
            r = std::max(r, hi);
        }
    }
    if (hit) r_out = r;
    return hit;
}

} // namespace detail

struct RetinaMetrics {
    double f = 0.0;       // 2PR/(P+R)
    double s = 0.0;       // |A n M| / |A u M|
    double b = 0.0;       // mean radial boundary error, pixels
    int b_angles = 0;     // angles contributing to b
    int b_skipped = 0;    // angles where either ray missed its mask
    bool b_defined = false;
};

/// F-score, Jaccard overlap S and radial boundary error B (mean over 180
/// equally spaced rays from M's centroid). Both masks must be non-empty,
/// single 4-connected components.
inline RetinaMetrics retina_metrics(const Mask& a, const Mask& m) {
    require(a.width == m.width && a.height == m.height, "dimension-mismatch",
            "retina metrics on masks of different size");
    std::uint64_t na = 0, nm = 0, ni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a.data[i];
        nm += m.data[i];
        ni += a.data[i] & m.data[i];
    }
    require(na > 0 && nm > 0, "invalid-mask", "retina metrics of an empty mask");
    require(connected_components_4(a) == 1 && connected_components_4(m) == 1, "invalid-mask",
            "retina metrics require single-component masks");

    RetinaMetrics out;
    const double precision = static_cast<double>(ni) / static_cast<double>(na);
    const double recall = static_cast<double>(ni) / static_cast<double>(nm);
    out.f = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    out.s = static_cast<double>(ni) / static_cast<double>(na + nm - ni);

    // Centroid of the manual mask M anchors both radial profiles.
    double cx = 0.0, cy = 0.0;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) {
                cx += x;
                cy += y;
            }
    cx /= static_cast<double>(nm);
    cy /= static_cast<double>(nm);

    const double pi = 3.14159265358979323846;
    double sum = 0.0;
    for (int k = 0; k < 180; ++k) {
        const double phi = k * (2.0 * pi / 180.0);
        const double dx = std::cos(phi), dy = std::sin(phi);
        double ra = 0.0, rm = 0.0;
        const bool hit_a = detail::ray_exit_radius(a, cx, cy, dx, dy, ra);
        const bool hit_m = detail::ray_exit_radius(m, cx, cy, dx, dy, rm);
        if (!hit_a || !hit_m) {
            ++out.b_skipped;
            continue;
        }
        sum += std::abs(ra - rm);
        ++out.b_angles;
    }
    if (out.b_angles > 0) {
        out.b = sum / out.b_angles;
        out.b_defined = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Paired t-test
// ---------------------------------------------------------------------------

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double beta_cont_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b); absolute error well below 1e-8 for
/// the degrees of freedom used here.
inline double regularized_incomplete_beta(double a, double b, double x) {
    require(a > 0 && b > 0, "invalid-argument", "beta parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
    const double bt = std::exp(log_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * detail::beta_cont_fraction(a, b, x) / a;
    return 1.0 - bt * detail::beta_cont_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided p-value of |T| >= |t| for Student's t with nu degrees of freedom.
inline double student_t_two_sided_p(double t, double nu) {
    const double x = nu / (nu + t * t);
    return regularized_incomplete_beta(nu / 2.0, 0.5, x);
}

/// Two-sided paired t-test. Zero-variance differences are degenerate: p = 1
/// when the mean difference is also zero, else p = 0.
inline double paired_t_test(const std::vector<double>& x, const std::vector<double>& y,
                            bool* degenerate = nullptr) {
    require(x.size() == y.size(), "invalid-argument", "paired samples differ in length");
    const std::size_t n = x.size();
    require(n >= 2, "invalid-argument", "paired t-test needs n >= 2");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i] - y[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (x[i] - y[i]) - mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(n - 1);
    if (degenerate) *degenerate = false;
    if (var < 1e-300) {
        if (degenerate) *degenerate = true;
        return std::abs(mean) < 1e-300 ? 1.0 : 0.0;
    }
    const double t = mean / std::sqrt(var / static_cast<double>(n));
    return student_t_two_sided_p(t, static_cast<double>(n - 1));
}

} // namespace consensus
