#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sammix/error.hpp"

namespace sammix {

/// Row-major H x W grid.
template <class T>
class Grid {
  public:
    using value_type = T;

    Grid() = default;
    Grid(std::size_t height, std::size_t width, T fill = T{})
        : height_(height), width_(width), data_(height * width, fill) {}
    Grid(std::size_t height, std::size_t width, std::vector<T> data)
        : height_(height), width_(width), data_(std::move(data)) {
        if (data_.size() != height_ * width_) {
            throw ShapeMismatchError("grid payload does not match its shape");
        }
    }

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
    const T& operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    template <class U>
    bool same_shape(const Grid<U>& other) const {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid&, const Grid&) = default;

  private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<T> data_;
};

/// A preprocessed slice, intensities in [0,1].
using ImageGrid = Grid<float>;
/// Class activation map, nonnegative.
using CamGrid = Grid<double>;
/// {0,1} mask; used for both thresholded CAMs and segmentation labels.
using BinaryMask = Grid<std::uint8_t>;

template <class T>
T grid_max(const Grid<T>& g) {
    if (g.empty()) return T{};
    return *std::max_element(g.storage().begin(), g.storage().end());
}

inline std::size_t foreground_count(const BinaryMask& m) {
    return static_cast<std::size_t>(std::count_if(m.storage().begin(), m.storage().end(),
                                                  [](std::uint8_t v) { return v != 0; }));
}

} // namespace sammix
