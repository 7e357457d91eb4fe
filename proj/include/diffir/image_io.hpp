#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffir/tensor.hpp"

namespace diffir {

struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

namespace imgio {

inline uint8_t quantize(double v) {
    double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<uint8_t>(c * 255.0 + 0.5);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

// ---- PPM (P6, 8-bit) ----

inline void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(2) != 3) throw std::invalid_argument("write_ppm: expected (H,W,3)");
    std::vector<uint8_t> out;
    std::string header = "P6\n" + std::to_string(img.dim(1)) + " " + std::to_string(img.dim(0)) + "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
    for (double v : img.data) out.push_back(quantize(v));
    write_file(path, out);
}

inline Tensor read_ppm(const std::string& path) {
    auto bytes = read_file(path);
    size_t pos = 0;
    auto token = [&]() -> std::string {
        while (pos < bytes.size() && (std::isspace(bytes[pos]) || bytes[pos] == '#')) {
            if (bytes[pos] == '#')
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            else
                ++pos;
        }
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
        return t;
    };
    if (token() != "P6") throw IoError(path + ": not a P6 ppm");
    int64_t w = std::stoll(token()), h = std::stoll(token());
    int64_t maxv = std::stoll(token());
    if (maxv != 255) throw IoError(path + ": only 8-bit ppm supported");
    ++pos;  // single whitespace after maxval
    if (bytes.size() - pos < static_cast<size_t>(w * h * 3)) throw IoError(path + ": truncated ppm");
    Tensor img({h, w, 3});
    for (int64_t i = 0; i < h * w * 3; ++i) img[i] = bytes[pos + static_cast<size_t>(i)] / 255.0;
    return img;
}

// ---- PNG (8-bit, via zlib) ----

namespace detail {

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) | (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = static_cast<uint32_t>(crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

// Writes 8-bit RGB, filter 0 rows, single IDAT.
inline void write_png(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(2) != 3) throw std::invalid_argument("write_png: expected (H,W,3)");
    int64_t h = img.dim(0), w = img.dim(1);
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(h * (1 + w * 3)));
    for (int64_t y = 0; y < h; ++y) {
        raw.push_back(0);  // filter none
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) raw.push_back(quantize(img.at3(y, x, c)));
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> z(bound);
    if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png deflate failed");
    z.resize(bound);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    detail::put_u32(ihdr, static_cast<uint32_t>(w));
    detail::put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // no interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", z);
    detail::put_chunk(out, "IEND", {});
    write_file(path, out);
}

// Reads 8-bit gray / gray+alpha / RGB / RGBA, non-interlaced; returns (H,W,3).
inline Tensor read_png(const std::string& path) {
    auto bytes = read_file(path);
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0) throw IoError(path + ": not a png");
    size_t pos = 8;
    int64_t w = 0, h = 0;
    int bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<uint8_t> idat;
    while (pos + 8 <= bytes.size()) {
        uint32_t len = detail::get_u32(&bytes[pos]);
        std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
        if (pos + 12 + len > bytes.size()) throw IoError(path + ": truncated chunk");
        const uint8_t* data = &bytes[pos + 8];
        if (type == "IHDR") {
            w = detail::get_u32(data);
            h = detail::get_u32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw IoError(path + ": missing IHDR");
    if (bit_depth != 8 || interlace != 0) throw IoError(path + ": only 8-bit non-interlaced png supported");
    int nch;
    switch (color_type) {
        case 0: nch = 1; break;
        case 2: nch = 3; break;
        case 4: nch = 2; break;
        case 6: nch = 4; break;
        default: throw IoError(path + ": unsupported color type");
    }
    size_t stride = static_cast<size_t>(w) * static_cast<size_t>(nch);
    std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
    uLongf rawlen = static_cast<uLongf>(raw.size());
    int zr = uncompress(raw.data(), &rawlen, idat.data(), static_cast<uLong>(idat.size()));
    if (zr != Z_OK || rawlen != raw.size()) throw IoError(path + ": png inflate failed");

    // unfilter in place into prev/cur rows
    std::vector<uint8_t> img(static_cast<size_t>(h) * stride);
    for (int64_t y = 0; y < h; ++y) {
        uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = &raw[static_cast<size_t>(y) * (stride + 1) + 1];
        uint8_t* cur = &img[static_cast<size_t>(y) * stride];
        const uint8_t* up = y > 0 ? &img[static_cast<size_t>(y - 1) * stride] : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            int a = x >= static_cast<size_t>(nch) ? cur[x - static_cast<size_t>(nch)] : 0;
            int b = up ? up[x] : 0;
            int c = (up && x >= static_cast<size_t>(nch)) ? up[x - static_cast<size_t>(nch)] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw IoError(path + ": bad png filter");
            }
            cur[x] = static_cast<uint8_t>(v & 0xff);
        }
    }
    Tensor out({h, w, 3});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const uint8_t* px = &img[(static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)) * static_cast<size_t>(nch)];
            double r, g, b;
            if (nch <= 2) r = g = b = px[0] / 255.0;
            else {
                r = px[0] / 255.0;
                g = px[1] / 255.0;
                b = px[2] / 255.0;
            }
            out.at3(y, x, 0) = r;
            out.at3(y, x, 1) = g;
            out.at3(y, x, 2) = b;
        }
    return out;
}

// Dispatch on extension; .ppm and .png both supported.
inline Tensor read_image(const std::string& path) {
    auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".ppm") return read_ppm(path);
    if (ext == ".png") return read_png(path);
    throw IoError(path + ": unsupported image extension");
}

inline void write_image(const std::string& path, const Tensor& img) {
    auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".ppm") return write_ppm(path, img);
    if (ext == ".png") return write_png(path, img);
    throw IoError(path + ": unsupported image extension");
}

}  // namespace imgio
}  // namespace diffir
