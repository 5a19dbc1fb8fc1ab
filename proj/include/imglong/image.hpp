#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace imglong {

struct image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels; // row-major, each in [0,1]

    double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }

    void validate() const {
        if (height <= 0 || width <= 0)
            throw std::invalid_argument("image: non-positive dimensions");
        if (pixels.size() != static_cast<std::size_t>(height) * width)
            throw std::invalid_argument("image: pixel count does not match dimensions");
    }
};

} // namespace imglong
