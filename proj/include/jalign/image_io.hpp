#pragma once

// Binary PGM (P5) / PPM (P6) reading and writing, 8-bit (maxval <= 255).
// Loaded samples are mapped to [0, 1]; written samples are clamped to [0, 1] and rounded.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "jalign/error.hpp"
#include "jalign/image.hpp"

namespace jalign {

namespace detail {

inline int read_pnm_int(std::istream& in, const std::string& path) {
    int ch = in.get();
    for (;;) {
        while (ch != EOF && std::isspace(ch)) ch = in.get();
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
            continue;
        }
        break;
    }
    if (ch == EOF || !std::isdigit(ch)) throw Error(ErrorKind::Io, "malformed PNM header in " + path);
    long v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        if (v > 1 << 24) throw Error(ErrorKind::Io, "PNM header value too large in " + path);
        ch = in.get();
    }
    // the terminating byte (one whitespace before the raster) has been consumed
    return static_cast<int>(v);
}

}  // namespace detail

/// Raw image with samples in [0, 1]; channel count 1 (P5) or 3 (P6).
inline Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw Error(ErrorKind::Io, "not a binary PGM/PPM file: " + path);
    const int channels = magic[1] == '5' ? 1 : 3;
    const int w = detail::read_pnm_int(in, path);
    const int h = detail::read_pnm_int(in, path);
    const int maxval = detail::read_pnm_int(in, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
        throw Error(ErrorKind::Io, "unsupported PNM dimensions or maxval in " + path);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw Error(ErrorKind::Io, "truncated PNM data in " + path);
    Image img(w, h, channels);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / static_cast<double>(maxval);
    return img;
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Writes a 1-channel image as P5 or a 3-channel image as P6.
inline void write_pnm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw Error(ErrorKind::InvalidInput, "PNM output supports 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
    std::vector<char> bytes(img.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(to_byte(img.data[i]));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

/// Loads and normalizes to zero mean / unit standard deviation.
inline Image load_normalized(const std::string& path) { return normalize_image(read_pnm(path)); }

}  // namespace jalign
