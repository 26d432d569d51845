#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "consensus/error.hpp"
#include "consensus/image.hpp"

namespace consensus {

/// Raw contents of a binary PGM (P5) file. maxval 255 => 8-bit samples,
/// otherwise 16-bit big-endian per the format spec.
struct PgmImage {
    int width = 0;
    int height = 0;
    int maxval = 255;
    std::vector<std::uint16_t> samples; // row-major

    std::size_t size() const { return samples.size(); }
};

namespace detail {

inline int pgm_next_token(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comment lines, then reads one unsigned int.
    for (;;) {
        const int c = in.peek();
        if (c == EOF) fail("malformed-pgm", "unexpected end of header in " + path);
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        break;
    }
    long long value = 0;
    if (!(in >> value) || value < 0) fail("malformed-pgm", "bad header token in " + path);
    return static_cast<int>(value);
}

} // namespace detail

inline PgmImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "missing-file", "cannot open " + path.string());

    char magic[2] = {0, 0};
    in.read(magic, 2);
    require(in.good() && magic[0] == 'P' && magic[1] == '5', "malformed-pgm",
            "not a binary PGM (P5): " + path.string());

    PgmImage img;
    img.width = detail::pgm_next_token(in, path.string());
    img.height = detail::pgm_next_token(in, path.string());
    img.maxval = detail::pgm_next_token(in, path.string());
    require(img.width > 0 && img.height > 0, "malformed-pgm", "empty raster in " + path.string());
    require(img.maxval > 0 && img.maxval < 65536, "malformed-pgm",
            "maxval out of range in " + path.string());
    in.get(); // single whitespace byte separating header and raster

    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    img.samples.resize(n);
    if (img.maxval < 256) {
        std::vector<std::uint8_t> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
        require(static_cast<std::size_t>(in.gcount()) == n, "malformed-pgm",
                "truncated raster in " + path.string());
        for (std::size_t i = 0; i < n; ++i) img.samples[i] = raw[i];
    } else {
        std::vector<std::uint8_t> raw(2 * n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(2 * n));
        require(static_cast<std::size_t>(in.gcount()) == 2 * n, "malformed-pgm",
                "truncated raster in " + path.string());
        for (std::size_t i = 0; i < n; ++i)
            img.samples[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
    return img;
}

inline void write_pgm(const PgmImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "io-error", "cannot write " + path.string());
    out << "P5\n" << img.width << " " << img.height << "\n" << img.maxval << "\n";
    const std::size_t n = img.samples.size();
    if (img.maxval < 256) {
        std::vector<std::uint8_t> raw(n);
        for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<std::uint8_t>(img.samples[i]);
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(n));
    } else {
        std::vector<std::uint8_t> raw(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            raw[2 * i] = static_cast<std::uint8_t>(img.samples[i] >> 8);
            raw[2 * i + 1] = static_cast<std::uint8_t>(img.samples[i] & 0xff);
        }
        out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(2 * n));
    }
    require(out.good(), "io-error", "short write to " + path.string());
}

/// Reads a PGM and min-max normalizes intensities to [0,1].
inline ImageGrid load_image(const std::filesystem::path& path) {
    const PgmImage raw = read_pgm(path);
    ImageGrid img(raw.width, raw.height);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw.samples[i];
    normalize_min_max(img);
    return img;
}

/// Reads a PGM as a binary mask: any nonzero sample maps to 1.
inline Mask load_mask(const std::filesystem::path& path) {
    const PgmImage raw = read_pgm(path);
    Mask m(raw.width, raw.height);
    for (std::size_t i = 0; i < raw.size(); ++i) m.data[i] = raw.samples[i] > 0 ? 1 : 0;
    return m;
}

/// Writes a mask as 8-bit PGM with 0 -> 0 and 1 -> 255.
inline void write_mask(const Mask& mask, const std::filesystem::path& path) {
    PgmImage img;
    img.width = mask.width;
    img.height = mask.height;
    img.maxval = 255;
    img.samples.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) img.samples[i] = mask.data[i] ? 255 : 0;
    write_pgm(img, path);
}

} // namespace consensus
