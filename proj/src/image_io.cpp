#include "ocelot/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace ocelot::imageio {

namespace {

[[noreturn]] void fail(const std::string& path, const png_image& image) {
    throw std::runtime_error("png error for " + path + ": " + image.message);
}

png_image begin_read(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) fail(path, image);
    return image;
}

ScalarField read_channels(const std::string& path, png_uint_32 format, int channels) {
    png_image image = begin_read(path);
    image.format = format;
    const int w = static_cast<int>(image.width);
    const int h = static_cast<int>(image.height);
    std::vector<std::uint8_t> buffer(static_cast<std::size_t>(w) * h * channels);
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) fail(path, image);
    ScalarField field(channels, h, w);
    const std::uint8_t* p = buffer.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) field.at(c, y, x) = *p++;
    return field;
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void write_channels(const std::string& path, const ScalarField& field, png_uint_32 format,
                    int channels) {
    if (field.channels() != channels)
        throw std::invalid_argument("png write expects " + std::to_string(channels) +
                                    " channel(s), got " + std::to_string(field.channels()));
    const int w = field.width();
    const int h = field.height();
    std::vector<std::uint8_t> buffer(static_cast<std::size_t>(w) * h * channels);
    std::uint8_t* p = buffer.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) *p++ = to_byte(field.at(c, y, x));
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        fail(path, image);
}

constexpr char kFieldMagic[4] = {'O', 'S', 'F', '1'};

}  // namespace

ImageSize read_png_size(const std::string& path) {
    png_image image = begin_read(path);
    ImageSize size{static_cast<int>(image.width), static_cast<int>(image.height)};
    png_image_free(&image);
    return size;
}

ScalarField read_png_rgb(const std::string& path) {
    return read_channels(path, PNG_FORMAT_RGB, 3);
}

ScalarField read_png_gray(const std::string& path) {
    return read_channels(path, PNG_FORMAT_GRAY, 1);
}

void write_png_rgb(const std::string& path, const ScalarField& field) {
    write_channels(path, field, PNG_FORMAT_RGB, 3);
}

void write_png_gray(const std::string& path, const ScalarField& field) {
    write_channels(path, field, PNG_FORMAT_GRAY, 1);
}

ScalarField read_field(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open field file " + path);
    char magic[4];
    std::int32_t dims[3];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in || std::memcmp(magic, kFieldMagic, 4) != 0)
        throw std::runtime_error("not a scalar-field file: " + path);
    if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
        throw std::runtime_error("bad field dimensions in " + path);
    ScalarField field(dims[0], dims[1], dims[2]);
    in.read(reinterpret_cast<char*>(field.data().data()),
            static_cast<std::streamsize>(field.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated field file " + path);
    return field;
}

void write_field(const std::string& path, const ScalarField& field) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write field file " + path);
    const std::int32_t dims[3] = {field.channels(), field.height(), field.width()};
    out.write(kFieldMagic, 4);
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(field.data().data()),
              static_cast<std::streamsize>(field.size() * sizeof(double)));
    if (!out) throw std::runtime_error("failed writing field file " + path);
}

}  // namespace ocelot::imageio
