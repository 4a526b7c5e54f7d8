#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mfr {

/// Subpixel position. Pixel (i, j) is centered at (i, j) and covers [i-0.5, i+0.5) x [j-0.5, j+0.5).
struct PixelPos {
    double row = 0.0;
    double col = 0.0;
};

/// Read-only view of one frame, row-major.
struct FrameView {
    std::span<const float> pixels;
    std::size_t height = 0;
    std::size_t width = 0;

    float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

/// Owned double-precision image (mean images, fit inputs).
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

    double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

/// n frames of H x W float32 intensities, stored contiguously frame-major then row-major.
class ImageStack {
public:
    ImageStack() = default;
    ImageStack(std::size_t n, std::size_t height, std::size_t width)
        : n_(n), height_(height), width_(width), data_(n * height * width, 0.0f) {}

    std::size_t size() const { return n_; }
    bool empty() const { return n_ == 0; }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t frame_pixels() const { return height_ * width_; }

    std::span<float> frame(std::size_t k) {
        return {data_.data() + k * frame_pixels(), frame_pixels()};
    }
    std::span<const float> frame(std::size_t k) const {
        return {data_.data() + k * frame_pixels(), frame_pixels()};
    }
    FrameView view(std::size_t k) const { return {frame(k), height_, width_}; }

    float at(std::size_t k, std::size_t r, std::size_t c) const {
        return data_[k * frame_pixels() + r * width_ + c];
    }
    float& at(std::size_t k, std::size_t r, std::size_t c) {
        return data_[k * frame_pixels() + r * width_ + c];
    }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    bool operator==(const ImageStack&) const = default;

private:
    std::size_t n_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<float> data_;
};

}  // namespace mfr
