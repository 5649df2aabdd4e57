#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mtlab/common.hpp"

namespace mtlab {

// Row-major, channel-last image with pixels in [0,1]. Stored as f32 to match
// the on-disk layout; all loss math promotes to double.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> px;

    Image() = default;
    Image(int h, int w, int c) : height(h), width(w), channels(c), px(std::size_t(h) * w * c, 0.f) {}

    float& at(int y, int x, int c) { return px[(std::size_t(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return px[(std::size_t(y) * width + x) * channels + c]; }

    std::uint64_t content_hash() const {
        return fnv1a(px.data(), px.size() * sizeof(float));
    }
};

// Axis-aligned box in normalized image coordinates.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    double x0() const { return cx - 0.5 * w; }
    double x1() const { return cx + 0.5 * w; }
    double y0() const { return cy - 0.5 * h; }
    double y1() const { return cy + 0.5 * h; }
    double area() const { return w * h; }
};

inline double box_iou(const Box& a, const Box& b, bool* degenerate = nullptr) {
    if (degenerate) *degenerate = false;
    if (a.area() <= 0.0 || b.area() <= 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace mtlab
