#pragma once

#include <cstddef>
#include <vector>

#include "splatforge/common.hpp"

namespace splatforge {

// Row-major H x W x C buffer. Images are Grid<float>; ray maps and raw
// Gaussian maps are Grid<double> because the camera-path invariants are
// checked at 1e-12.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int width, int height, int channels, T fill = T(0))
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<size_t>(width) * height * channels, fill) {
        if (width <= 0 || height <= 0 || channels <= 0) {
            throw ValidationError("Grid: dimensions must be positive");
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(int y, int x, int c) {
        return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
    }
    const T& at(int y, int x, int c) const {
        return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
    }

    T* row(int y) { return data_.data() + static_cast<size_t>(y) * width_ * channels_; }
    const T* row(int y) const { return data_.data() + static_cast<size_t>(y) * width_ * channels_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    bool same_shape(const Grid& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    template <typename U>
    Grid<U> cast() const {
        Grid<U> out(width_, height_, channels_);
        for (size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

using Image = Grid<float>;    // rgb = 3 channels, depth/alpha = 1 channel
using ImageD = Grid<double>;

// Multi-view latent tensor, N x h x w x c. Double precision: guidance algebra
// is verified by superposition at 1e-9.
class LatentGrid {
public:
    LatentGrid() = default;
    LatentGrid(int views, int h, int w, int channels, double fill = 0.0)
        : views_(views), h_(h), w_(w), channels_(channels),
          data_(static_cast<size_t>(views) * h * w * channels, fill) {
        if (views <= 0 || h <= 0 || w <= 0 || channels <= 0) {
            throw ValidationError("LatentGrid: dimensions must be positive");
        }
    }

    int views() const { return views_; }
    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return channels_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int v, int y, int x, int c) {
        return data_[((static_cast<size_t>(v) * h_ + y) * w_ + x) * channels_ + c];
    }
    const double& at(int v, int y, int x, int c) const {
        return data_[((static_cast<size_t>(v) * h_ + y) * w_ + x) * channels_ + c];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const LatentGrid& o) const {
        return views_ == o.views_ && h_ == o.h_ && w_ == o.w_ && channels_ == o.channels_;
    }

    void require_same_shape(const LatentGrid& o, const char* what) const {
        if (!same_shape(o)) {
            throw ValidationError(std::string(what) + ": latent shape mismatch");
        }
    }

    bool finite() const { return all_finite(data_.data(), data_.size()); }

private:
    int views_ = 0;
    int h_ = 0;
    int w_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

inline LatentGrid operator+(const LatentGrid& a, const LatentGrid& b) {
    a.require_same_shape(b, "operator+");
    LatentGrid out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

inline LatentGrid operator-(const LatentGrid& a, const LatentGrid& b) {
    a.require_same_shape(b, "operator-");
    LatentGrid out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

inline LatentGrid operator*(double s, const LatentGrid& a) {
    LatentGrid out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
    return out;
}

}  // namespace splatforge
