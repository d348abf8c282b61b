#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace ocelot {

// Channel-first 2-D grid of real values. One type serves images,
// probability maps, one-hot label maps and tissue masks.
class ScalarField {
public:
    ScalarField() = default;
    ScalarField(int channels, int height, int width, double fill = 0.0)
        : channels_(channels), height_(height), width_(width),
          data_(static_cast<std::size_t>(channels) * height * width, fill) {
        assert(channels > 0 && height > 0 && width > 0);
    }

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const ScalarField& o) const {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }

private:
    std::size_t index(int c, int y, int x) const {
        assert(c >= 0 && c < channels_ && y >= 0 && y < height_ && x >= 0 && x < width_);
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

}  // namespace ocelot
