#pragma once

#include <string>

#include "ocelot/field.hpp"

namespace ocelot::imageio {

struct ImageSize {
    int width = 0;
    int height = 0;
};

// Header-only read; does not decode pixel data.
ImageSize read_png_size(const std::string& path);

// 8-bit RGB PNG -> 3-channel field with values in [0, 255].
ScalarField read_png_rgb(const std::string& path);

// 8-bit grayscale PNG -> 1-channel field (used for tissue masks).
ScalarField read_png_gray(const std::string& path);

// Values are rounded and clamped to [0, 255] on write.
void write_png_rgb(const std::string& path, const ScalarField& field);
void write_png_gray(const std::string& path, const ScalarField& field);

// Raw scalar-field container for probability maps: magic "OSF1", three
// little-endian int32 (channels, height, width), then float64 samples in
// channel-major order.
ScalarField read_field(const std::string& path);
void write_field(const std::string& path, const ScalarField& field);

}  // namespace ocelot::imageio
