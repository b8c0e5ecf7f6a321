#pragma once

#include <cstddef>
#include <vector>

namespace pcclip {

// Dense float image, row-major HWC layout.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c),
          pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    float& at(int y, int x, int c = 0) { return pixels[index(y, x, c)]; }
    float at(int y, int x, int c = 0) const { return pixels[index(y, x, c)]; }

    std::size_t size() const { return pixels.size(); }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace pcclip
