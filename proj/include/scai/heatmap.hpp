#pragma once

// Heatmap codec: Gaussian rendering, sub-pixel peak decoding, and PCK.
// Coordinates are continuous pixel positions with (0,0) at the center of the
// top-left pixel; x grows rightward, y grows downward.

#include <optional>

#include "scai/tensor.hpp"

namespace scai {

struct Coord {
    float x = 0.f;
    float y = 0.f;
    bool visible = true;
};

struct HeatmapGeometry {
    int width = 64;
    int height = 64;
    float sigma = 2.f;
};

struct Heatmap {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    Heatmap() = default;
    Heatmap(int w, int h) : width(w), height(h), values(std::size_t(w) * h, 0.f) {}

    float& at(int y, int x) { return values[std::size_t(y) * width + x]; }
    float at(int y, int x) const { return values[std::size_t(y) * width + x]; }

    Tensor to_tensor() const { return Tensor({1, height, width}, std::vector<float>(values)); }
};

// Renders exp(-|p - c|^2 / (2 sigma^2)) over the pixel grid, then rescales so
// the maximum (at the pixel nearest to c) is exactly 1. Throws if c is
// invisible or outside the map.
Heatmap render_gaussian(const Coord& c, float sigma, int width, int height);

inline Heatmap render_gaussian(const Coord& c, const HeatmapGeometry& g) {
    return render_gaussian(c, g.sigma, g.width, g.height);
}

struct DecodedPeak {
    Coord coord;
    float confidence = 0.f;
};

// Argmax (ties resolved to the lowest row-major index) plus a quarter-pixel
// shift per axis toward the larger neighbor; neighbors outside the map count
// as 0. Returns nullopt when the map has no positive value to decode.
std::optional<DecodedPeak> decode_peak(const Heatmap& h);

// Fraction of ground-truth-visible keypoints whose prediction lands within
// tau * ref_len. Invisible predictions for visible ground truth count as
// misses. Returns nullopt when no ground-truth keypoint is visible.
std::optional<double> pck(const std::vector<Coord>& pred, const std::vector<Coord>& gt,
                          double ref_len, double tau);

}  // namespace scai
