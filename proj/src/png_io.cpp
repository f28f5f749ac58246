#include "sauge/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "sauge/errors.hpp"

namespace sauge {

namespace {

struct Decoded {
    int rows = 0;
    int cols = 0;
    std::vector<png_byte> bytes;
};

Decoded decode(const std::filesystem::path& path, png_uint_32 format) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw LoadError("cannot read PNG " + path.string() + ": " + img.message);
    img.format = format;
    Decoded d;
    d.rows = static_cast<int>(img.height);
    d.cols = static_cast<int>(img.width);
    d.bytes.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, d.bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw LoadError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return d;
}

void encode(const std::filesystem::path& path, int rows, int cols, png_uint_32 format, const std::vector<png_byte>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(cols);
    img.height = static_cast<png_uint_32>(rows);
    img.format = format;
    if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr))
        throw LoadError("cannot write PNG " + path.string() + ": " + img.message);
}

png_byte to_byte(double v) { return static_cast<png_byte>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); }

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
    const Decoded d = decode(path, PNG_FORMAT_RGB);
    Image img({3, d.rows, d.cols});
    for (int y = 0; y < d.rows; ++y)
        for (int x = 0; x < d.cols; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = d.bytes[(static_cast<std::size_t>(y) * d.cols + x) * 3 + c] / 255.0;
    return img;
}

BinaryMap read_png_mask(const std::filesystem::path& path) {
    const Decoded d = decode(path, PNG_FORMAT_GRAY);
    BinaryMap m(d.rows, d.cols);
    for (std::size_t j = 0; j < m.size(); ++j) m.data[j] = d.bytes[j] > 127 ? 1 : 0;
    return m;
}

ProbMap read_png_gray(const std::filesystem::path& path) {
    const Decoded d = decode(path, PNG_FORMAT_GRAY);
    ProbMap m(d.rows, d.cols);
    for (std::size_t j = 0; j < m.size(); ++j) m.data[j] = d.bytes[j] / 255.0;
    return m;
}

void write_png_gray(const std::filesystem::path& path, const ProbMap& map) {
    std::vector<png_byte> bytes(map.size());
    for (std::size_t j = 0; j < map.size(); ++j) bytes[j] = to_byte(map.data[j]);
    encode(path, map.rows, map.cols, PNG_FORMAT_GRAY, bytes);
}

void write_png_mask(const std::filesystem::path& path, const BinaryMap& mask) {
    std::vector<png_byte> bytes(mask.size());
    for (std::size_t j = 0; j < mask.size(); ++j) bytes[j] = mask.data[j] ? 255 : 0;
    encode(path, mask.rows, mask.cols, PNG_FORMAT_GRAY, bytes);
}

void write_png_rgb(const std::filesystem::path& path, const Image& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_png_rgb: expected (3, H, W)");
    const int h = image.dim(1), w = image.dim(2);
    std::vector<png_byte> bytes(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.at(c, y, x));
    encode(path, h, w, PNG_FORMAT_RGB, bytes);
}

}  // namespace sauge
