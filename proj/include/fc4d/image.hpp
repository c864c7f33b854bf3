#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fc4d/error.hpp"

namespace fc4d {

/// Interleaved row-major image with `channels` values per pixel. Values are
/// linear RGB in [0, 1]; no transfer curve is applied anywhere.
template <typename T> struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, int c = 3, T fill = T(0))
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t offset(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * channels; }
    T& at(int x, int y, int c = 0) { return data[offset(x, y) + c]; }
    const T& at(int x, int y, int c = 0) const { return data[offset(x, y) + c]; }

    bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }

    template <typename U> Image<U> cast() const {
        Image<U> out(width, height, channels);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }

    bool operator==(const Image&) const = default;
};

/// Round-half-away-from-zero quantization of a clamped [0, 1] value.
inline std::uint8_t quantize_unit(double v) {
    if (!(v > 0.0)) return 0;  // also maps NaN to 0
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

/// The image as it would be stored in an 8-bit frame.
template <typename T> Image<T> quantized(const Image<T>& img) {
    Image<T> out = img;
    for (auto& v : out.data) v = T(quantize_unit(static_cast<double>(v))) / T(255);
    return out;
}

inline std::string encode_ppm(const Image<double>& img) {
    if (img.channels != 3) fail(ErrorKind::kUsage, "PPM frames need exactly 3 channels");
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.data.size());
    for (double v : img.data) out.push_back(static_cast<char>(quantize_unit(v)));
    return out;
}

inline Image<double> decode_ppm(const std::string& bytes) {
    std::size_t pos = 0;
    auto parse_error = [&](const std::string& what) -> void {
        fail(ErrorKind::kParse, "PPM " + what + " at byte offset " + std::to_string(pos));
    };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&]() -> long {
        skip_space();
        const std::size_t start = pos;
        long v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1'000'000) parse_error("header value too large");
            ++pos;
        }
        if (pos == start) parse_error("expected an unsigned integer");
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') parse_error("missing P6 magic");
    pos = 2;
    const long w = read_uint();
    const long h = read_uint();
    const long maxval = read_uint();
    if (w <= 0 || h <= 0) parse_error("non-positive image size");
    if (maxval != 255) parse_error("unsupported max value " + std::to_string(maxval));
    if (pos >= bytes.size() || !(bytes[pos] == ' ' || bytes[pos] == '\n' || bytes[pos] == '\t' || bytes[pos] == '\r'))
        parse_error("missing whitespace after header");
    ++pos;
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (bytes.size() - pos < need) parse_error("truncated pixel data (need " + std::to_string(need) + " bytes)");
    Image<double> img(static_cast<int>(w), static_cast<int>(h), 3);
    for (std::size_t i = 0; i < need; ++i)
        img.data[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
    return img;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::kIo, "short write to '" + path.string() + "'");
}

template <typename T> void write_ppm(const std::filesystem::path& path, const Image<T>& img) {
    write_file_bytes(path, encode_ppm(img.template cast<double>()));
}

inline Image<double> read_ppm(const std::filesystem::path& path) {
    try {
        return decode_ppm(read_file_bytes(path));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::kParse) fail(ErrorKind::kParse, path.string() + ": " + e.what());
        throw;
    }
}

}  // namespace fc4d
