#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "consensus/dataset.hpp"
#include "consensus/error.hpp"
#include "consensus/image.hpp"
#include "consensus/pgm.hpp"
#include "consensus/rng.hpp"

namespace consensus {

enum class SynthShape { kSquare, kRectangle, kCircle, kPolygon, kMixed };

inline const char* shape_name(SynthShape s) {
    switch (s) {
    case SynthShape::kSquare: return "square";
    case SynthShape::kRectangle: return "rectangle";
    case SynthShape::kCircle: return "circle";
    case SynthShape::kPolygon: return "polygon";
    case SynthShape::kMixed: return "mixed";
    }
    return "mixed";
}

inline SynthShape parse_shape(const std::string& name) {
    if (name == "square") return SynthShape::kSquare;
    if (name == "rectangle") return SynthShape::kRectangle;
    if (name == "circle") return SynthShape::kCircle;
    if (name == "polygon") return SynthShape::kPolygon;
    if (name == "mixed") return SynthShape::kMixed;
    fail("invalid-argument", "unknown shape: " + name);
}

/// Generation protocol: one bright region per image with Gaussian pixel
/// noise, plus simulated expert contours obtained by displacing runs of
/// boundary points along the outward normal.
struct SynthSpec {
    int image_size = 128;
    SynthShape shape = SynthShape::kMixed;
    double fg_mean_lo = 0.6, fg_mean_hi = 0.8;
    double bg_mean_lo = 0.1, bg_mean_hi = 0.3;
    double sigma = 0.1;
    int n_experts = 3;
    double displacement_lo = 10.0, displacement_hi = 20.0;
    int points_per_run = 15;

    void validate() const {
        require(image_size >= 48, "invalid-argument", "image size too small");
        require(n_experts >= 1, "invalid-argument", "need at least one expert");
        require(fg_mean_lo <= fg_mean_hi && bg_mean_lo <= bg_mean_hi, "invalid-argument",
                "mean ranges must be ordered");
        require(bg_mean_hi < fg_mean_lo, "invalid-argument",
                "foreground and background mean ranges must be disjoint");
        require(sigma >= 0.0, "invalid-argument", "sigma must be >= 0");
        require(displacement_lo >= 0.0 && displacement_hi >= displacement_lo,
                "invalid-argument", "displacement bounds must be ordered and >= 0");
        require(points_per_run >= 1, "invalid-argument", "points per run must be >= 1");
    }
};

struct SynthCase {
    ImageGrid image;
    Mask gt;
    std::vector<Mask> experts;
};

namespace detail {

// Even-odd scanline fill of a closed polygon plus a Bresenham pass over the
// outline, so that a polygon through boundary pixel centers reproduces the
// region it was traced from.
inline Mask fill_polygon(const std::vector<std::pair<double, double>>& pts, int w, int h) {
    Mask m(w, h);
    const std::size_t n = pts.size();
    if (n < 3) return m;
    std::vector<double> xs;
    for (int y = 0; y < h; ++y) {
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& a = pts[i];
            const auto& b = pts[(i + 1) % n];
            if (a.second == b.second) continue;
            const double ylo = std::min(a.second, b.second);
            const double yhi = std::max(a.second, b.second);
            if (y < ylo || y >= yhi) continue;
            xs.push_back(a.first + (y - a.second) * (b.first - a.first) / (b.second - a.second));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k])));
            const int x1 = std::min(w - 1, static_cast<int>(std::floor(xs[k + 1])));
            for (int x = x0; x <= x1; ++x) m.at(x, y) = 1;
        }
    }
    // Outline.
    auto plot = [&](int x, int y) {
        if (m.in_bounds(x, y)) m.at(x, y) = 1;
    };
    for (std::size_t i = 0; i < n; ++i) {
        int x0 = static_cast<int>(std::lround(pts[i].first));
        int y0 = static_cast<int>(std::lround(pts[i].second));
        const int x1 = static_cast<int>(std::lround(pts[(i + 1) % n].first));
        const int y1 = static_cast<int>(std::lround(pts[(i + 1) % n].second));
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            plot(x0, y0);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
    return m;
}

// Proper (strictly crossing) segment intersection.
inline bool segments_cross(std::pair<double, double> a, std::pair<double, double> b,
                           std::pair<double, double> c, std::pair<double, double> d) {
    auto orient = [](const auto& p, const auto& q, const auto& r) {
        return (q.first - p.first) * (r.second - p.second) -
               (q.second - p.second) * (r.first - p.first);
    };
    const double o1 = orient(a, b, c);
    const double o2 = orient(a, b, d);
    const double o3 = orient(c, d, a);
    const double o4 = orient(c, d, b);
    return ((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) &&
           ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0));
}

inline bool polyline_self_intersects(const std::vector<std::pair<double, double>>& pts) {
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue; // closing segment is adjacent
            if (segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]))
                return true;
        }
    }
    return false;
}

} // namespace detail

/// Moore boundary trace of the region's outer contour, ordered clockwise in
/// image coordinates, starting at the topmost-leftmost foreground pixel.
inline std::vector<std::pair<int, int>> trace_boundary(const Mask& m) {
    int sx = -1, sy = -1;
    for (int y = 0; y < m.height && sx < 0; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) {
                sx = x;
                sy = y;
                break;
            }
    require(sx >= 0, "invalid-argument", "cannot trace an empty mask");

    // Clockwise neighbor order with y pointing down.
    static constexpr int dx8[8] = {1, 1, 0, -1, -1, -1, 0, 1};
    static constexpr int dy8[8] = {0, 1, 1, 1, 0, -1, -1, -1};
    auto dir_index = [&](int dx, int dy) {
        for (int i = 0; i < 8; ++i)
            if (dx8[i] == dx && dy8[i] == dy) return i;
        return 0;
    };
    auto is_fg = [&](int x, int y) { return m.in_bounds(x, y) && m.at(x, y) != 0; };

    std::vector<std::pair<int, int>> contour;
    contour.emplace_back(sx, sy);
    // Backtrack starts west of the start pixel, which is background because
    // the start is the leftmost foreground pixel of the topmost row.
    int cx = sx, cy = sy;
    int back = dir_index(-1, 0);
    const int start_back = back;
    std::size_t guard = 4 * m.size() + 16;
    for (;;) {
        int found = -1;
        int prev = back;
        for (int step = 1; step <= 8; ++step) {
            const int i = (back + step) % 8;
            const int nx = cx + dx8[i], ny = cy + dy8[i];
            if (is_fg(nx, ny)) {
                found = i;
                break;
            }
            prev = i;
        }
        if (found < 0) break; // isolated pixel
        cx += dx8[found];
        cy += dy8[found];
        // New backtrack: direction from the new pixel to the last background
        // neighbor examined.
        const int px = (cx - dx8[found]) + dx8[prev];
        const int py = (cy - dy8[found]) + dy8[prev];
        back = dir_index(px - cx, py - cy);
        if (cx == sx && cy == sy && back == start_back) break;
        contour.emplace_back(cx, cy);
        if (--guard == 0) break;
    }
    return contour;
}

/// Image with one bright region: foreground Normal(mu_fg, sigma), background
/// Normal(mu_bg, sigma), clamped to [0,1]; the mask is the region indicator.
inline std::pair<ImageGrid, Mask> generate_image(const SynthSpec& spec, Rng& rng) {
    spec.validate();
    const int s = spec.image_size;
    SynthShape shape = spec.shape;
    if (shape == SynthShape::kMixed)
        shape = static_cast<SynthShape>(rng.bounded(4));

    Mask gt(s, s);
    const double smin = static_cast<double>(s);
    auto centered_range = [&](double extent) {
        // Top-left placement range keeping the region >= 26 px off borders
        // where possible (displaced expert contours stay mostly inside).
        const double margin = std::min(26.0, (smin - extent) / 2.0 - 1.0);
        const double lo = std::max(1.0, margin);
        const double hi = std::max(lo, smin - extent - lo);
        return std::pair<double, double>(lo, hi);
    };
    // Shape size floors keep the region inradius above the displacement
    // range, so inward-displaced contour runs stay clear of the far wall.
    switch (shape) {
    case SynthShape::kSquare: {
        const int side = static_cast<int>(std::lround(rng.uniform(0.42, 0.58) * s));
        const auto [lo, hi] = centered_range(side);
        const int x0 = static_cast<int>(std::lround(rng.uniform(lo, hi)));
        const int y0 = static_cast<int>(std::lround(rng.uniform(lo, hi)));
        for (int y = y0; y < y0 + side && y < s; ++y)
            for (int x = x0; x < x0 + side && x < s; ++x) gt.at(x, y) = 1;
        break;
    }
    case SynthShape::kRectangle: {
        const int wx = static_cast<int>(std::lround(rng.uniform(0.4, 0.62) * s));
        const int wy = static_cast<int>(std::lround(rng.uniform(0.4, 0.62) * s));
        const auto [lx, hx] = centered_range(wx);
        const auto [ly, hy] = centered_range(wy);
        const int x0 = static_cast<int>(std::lround(rng.uniform(lx, hx)));
        const int y0 = static_cast<int>(std::lround(rng.uniform(ly, hy)));
        for (int y = y0; y < y0 + wy && y < s; ++y)
            for (int x = x0; x < x0 + wx && x < s; ++x) gt.at(x, y) = 1;
        break;
    }
    case SynthShape::kCircle: {
        const double r = rng.uniform(0.22, 0.28) * s;
        const double margin = std::min(26.0 + r, smin / 2.0 - 2.0);
        const double cx = rng.uniform(margin, smin - margin);
        const double cy = rng.uniform(margin, smin - margin);
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) gt.at(x, y) = 1;
        break;
    }
    case SynthShape::kPolygon: {
        const int k = 5 + static_cast<int>(rng.bounded(4));
        const double rmax = rng.uniform(0.24, 0.3) * s;
        const double margin = std::min(26.0 + rmax, smin / 2.0 - 2.0);
        const double cx = rng.uniform(margin, smin - margin);
        const double cy = rng.uniform(margin, smin - margin);
        std::vector<std::pair<double, double>> pts;
        const double pi = 3.14159265358979323846;
        for (int i = 0; i < k; ++i) {
            const double jitter = rng.uniform(-0.25, 0.25) * (2.0 * pi / k);
            const double angle = i * (2.0 * pi / k) + jitter;
            const double radius = rng.uniform(0.75, 1.0) * rmax;
            pts.emplace_back(cx + radius * std::cos(angle), cy + radius * std::sin(angle));
        }
        gt = detail::fill_polygon(pts, s, s);
        break;
    }
    case SynthShape::kMixed:
        break; // unreachable
    }
    require(gt.count() > 0, "invalid-argument", "degenerate synthetic region");
    require(gt.count() < gt.size(), "invalid-argument", "region larger than the image");

    const double mu_fg = rng.uniform(spec.fg_mean_lo, spec.fg_mean_hi);
    const double mu_bg = rng.uniform(spec.bg_mean_lo, spec.bg_mean_hi);
    ImageGrid img(s, s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const double mu = gt.at(x, y) ? mu_fg : mu_bg;
            const double v = spec.sigma > 0 ? rng.normal(mu, spec.sigma) : mu;
            img.at(x, y) = std::clamp(v, 0.0, 1.0);
        }
    return {std::move(img), std::move(gt)};
}

/// One simulated annotator: 2-3 disjoint runs of `points_per_run` adjacent
/// boundary points, each run displaced along the outward normal by a signed
/// magnitude drawn from +-[lo, hi]; the contour is re-closed by linear
/// interpolation and rasterized.
inline Mask simulate_expert(const Mask& gt, const SynthSpec& spec, Rng& rng) {
    require(gt.count() > 0, "invalid-argument", "cannot perturb an empty mask");
    const auto contour = trace_boundary(gt);
    const int len = static_cast<int>(contour.size());
    const int run_len = spec.points_per_run;
    int n_runs = len < 200 ? 2 : 3;
    while (n_runs > 1 && n_runs * run_len * 2 > len) --n_runs;

    auto outward_normal = [&](int idx) {
        const auto& prev = contour[(idx - 2 + len) % len];
        const auto& next = contour[(idx + 2) % len];
        double tx = next.first - prev.first;
        double ty = next.second - prev.second;
        const double norm = std::hypot(tx, ty);
        if (norm < 1e-9) return std::pair<double, double>(0.0, 0.0);
        tx /= norm;
        ty /= norm;
        double nx = ty, ny = -tx;
        // Flip if the candidate points into the region.
        const int qx = static_cast<int>(std::lround(contour[idx].first + 1.5 * nx));
        const int qy = static_cast<int>(std::lround(contour[idx].second + 1.5 * ny));
        if (gt.in_bounds(qx, qy) && gt.at(qx, qy)) {
            nx = -nx;
            ny = -ny;
        }
        return std::pair<double, double>(nx, ny);
    };
    // One outward direction per run: per-point normals zigzag on a pixel
    // contour and make the displaced chunk cross itself.
    auto run_normal = [&](int start) {
        double nx = 0.0, ny = 0.0;
        for (int k = 0; k < run_len; ++k) {
            const auto [px, py] = outward_normal((start + k) % len);
            nx += px;
            ny += py;
        }
        const double norm = std::hypot(nx, ny);
        if (norm < 1e-9) return std::pair<double, double>(0.0, 0.0);
        return std::pair<double, double>(nx / norm, ny / norm);
    };

    for (int attempt = 0; attempt < 10; ++attempt) {
        // Disjoint run starts on the cyclic contour.
        std::vector<int> starts;
        bool placed = true;
        for (int r = 0; r < n_runs && placed; ++r) {
            placed = false;
            for (int tries = 0; tries < 50; ++tries) {
                const int cand = static_cast<int>(rng.bounded(len));
                bool ok = true;
                for (const int other : starts) {
                    const int gap = std::abs(((cand - other) % len + len) % len);
                    const int dist = std::min(gap, len - gap);
                    if (dist < run_len + 2) {
                        ok = false;
                        break;
                    }
                }
                if (ok) {
                    starts.push_back(cand);
                    placed = true;
                    break;
                }
            }
        }
        if (!placed) continue;

        std::vector<std::pair<double, double>> pts;
        pts.reserve(contour.size());
        for (const auto& [x, y] : contour) pts.emplace_back(x, y);
        for (const int start : starts) {
            const double magnitude =
                rng.uniform(spec.displacement_lo, spec.displacement_hi) *
                (rng.bernoulli(0.5) ? 1.0 : -1.0);
            const auto [nx, ny] = run_normal(start);
            for (int k = 0; k < run_len; ++k) {
                const int idx = (start + k) % len;
                pts[idx].first += magnitude * nx;
                pts[idx].second += magnitude * ny;
            }
        }
        if (detail::polyline_self_intersects(pts)) continue;
        Mask result = detail::fill_polygon(pts, gt.width, gt.height);
        if (result.count() == 0) continue;
        return result;
    }
    fail("self-intersection", "displaced contour kept self-intersecting after 10 attempts");
}

inline SynthCase generate_case(const SynthSpec& spec, std::uint64_t case_seed) {
    Rng rng(derive_seed(case_seed, 1));
    SynthCase out;
    auto [img, gt] = generate_image(spec, rng);
    out.image = std::move(img);
    out.gt = std::move(gt);
    for (int e = 0; e < spec.n_experts; ++e) {
        Rng expert_rng(derive_seed(case_seed, 100 + e));
        out.experts.push_back(simulate_expert(out.gt, spec, expert_rng));
    }
    return out;
}

/// Writes n cases as PGM files plus a manifest. With probability
/// `missing_fraction` one uniformly chosen expert mask per case is withheld:
/// the manifest records null and the mask goes to a withheld_<k>.pgm sidecar.
inline DatasetManifest generate_benchmark(int n_cases, const SynthSpec& spec,
                                          double missing_fraction, std::uint64_t seed,
                                          const std::filesystem::path& out_dir) {
    spec.validate();
    require(n_cases >= 1, "invalid-argument", "need at least one case");
    require(missing_fraction >= 0.0 && missing_fraction < 1.0, "invalid-argument",
            "missing fraction must be in [0,1)");
    std::filesystem::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.dataset = "synthetic-benchmark";
    manifest.seed = seed;
    for (int e = 0; e < spec.n_experts; ++e) manifest.experts.push_back("expert_" + std::to_string(e));

    for (int i = 0; i < n_cases; ++i) {
        const std::uint64_t case_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        const SynthCase c = generate_case(spec, case_seed);

        char name[32];
        std::snprintf(name, sizeof(name), "case_%04d", i);
        const std::filesystem::path dir = out_dir / name;
        std::filesystem::create_directories(dir);

        PgmImage img;
        img.width = c.image.width;
        img.height = c.image.height;
        img.maxval = 65535;
        img.samples.resize(c.image.size());
        for (std::size_t k = 0; k < c.image.size(); ++k)
            img.samples[k] = static_cast<std::uint16_t>(std::lround(c.image.data[k] * 65535.0));
        write_pgm(img, dir / "image.pgm");
        write_mask(c.gt, dir / "gt.pgm");

        int withheld = -1;
        Rng miss_rng(derive_seed(case_seed, 9999));
        if (missing_fraction > 0 && miss_rng.bernoulli(missing_fraction))
            withheld = static_cast<int>(miss_rng.bounded(spec.n_experts));

        DatasetManifest::Entry entry;
        entry.image = std::string(name) + "/image.pgm";
        for (int e = 0; e < spec.n_experts; ++e) {
            const std::string mask_name =
                (e == withheld ? "withheld_" : "expert_") + std::to_string(e) + ".pgm";
            write_mask(c.experts[e], dir / mask_name);
            if (e == withheld)
                entry.masks.emplace_back(std::nullopt);
            else
                entry.masks.emplace_back(std::string(name) + "/" + mask_name);
        }
        manifest.slices.push_back(std::move(entry));
    }
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

} // namespace consensus
