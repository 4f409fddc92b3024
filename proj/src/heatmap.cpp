#include "scai/heatmap.hpp"

#include <cmath>
#include <stdexcept>

namespace scai {

Heatmap render_gaussian(const Coord& c, float sigma, int width, int height) {
    if (!c.visible) throw std::invalid_argument("render_gaussian: coordinate is not visible");
    if (sigma <= 0.f) throw std::invalid_argument("render_gaussian: sigma must be > 0");
    if (width <= 0 || height <= 0) throw std::invalid_argument("render_gaussian: empty map");
    if (c.x < 0.f || c.y < 0.f || c.x > float(width - 1) || c.y > float(height - 1))
        throw std::invalid_argument("render_gaussian: coordinate outside the map");

    Heatmap h(width, height);
    const double inv = 1.0 / (2.0 * double(sigma) * double(sigma));
    // The nearest grid point holds the maximum; dividing by its value makes
    // the rendered peak exactly 1 even for off-grid centers.
    const double ndx = double(int(std::lround(double(c.x)))) - double(c.x);
    const double ndy = double(int(std::lround(double(c.y)))) - double(c.y);
    const double peak = std::exp(-(ndx * ndx + ndy * ndy) * inv);
    for (int y = 0; y < height; ++y) {
        const double dy = double(y) - double(c.y);
        for (int x = 0; x < width; ++x) {
            const double dx = double(x) - double(c.x);
            h.at(y, x) = float(std::exp(-(dx * dx + dy * dy) * inv) / peak);
        }
    }
    return h;
}

std::optional<DecodedPeak> decode_peak(const Heatmap& h) {
    if (h.width <= 0 || h.height <= 0 || h.values.empty())
        throw std::invalid_argument("decode_peak: empty map");
    std::size_t best = 0;
    float best_v = h.values[0];
    for (std::size_t i = 1; i < h.values.size(); ++i) {
        if (h.values[i] > best_v) {
            best_v = h.values[i];
            best = i;
        }
    }
    if (best_v <= 0.f) return std::nullopt;

    const int py = int(best / std::size_t(h.width));
    const int px = int(best % std::size_t(h.width));
    auto value_or_zero = [&](int y, int x) -> float {
        if (x < 0 || y < 0 || x >= h.width || y >= h.height) return 0.f;
        return h.at(y, x);
    };
    float x = float(px), y = float(py);
    const float xr = value_or_zero(py, px + 1), xl = value_or_zero(py, px - 1);
    if (xr > xl) x += 0.25f;
    else if (xl > xr) x -= 0.25f;
    const float yd = value_or_zero(py + 1, px), yu = value_or_zero(py - 1, px);
    if (yd > yu) y += 0.25f;
    else if (yu > yd) y -= 0.25f;
    return DecodedPeak{Coord{x, y, true}, best_v};
}

std::optional<double> pck(const std::vector<Coord>& pred, const std::vector<Coord>& gt,
                          double ref_len, double tau) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("pck: prediction/ground-truth size mismatch");
    if (ref_len <= 0.0) throw std::invalid_argument("pck: ref_len must be > 0");
    if (tau <= 0.0) throw std::invalid_argument("pck: tau must be > 0");
    const double thresh = tau * ref_len;
    std::size_t visible = 0, hits = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!gt[i].visible) continue;
        ++visible;
        if (!pred[i].visible) continue;
        const double dx = double(pred[i].x) - double(gt[i].x);
        const double dy = double(pred[i].y) - double(gt[i].y);
        if (std::sqrt(dx * dx + dy * dy) <= thresh) ++hits;
    }
    if (visible == 0) return std::nullopt;
    return double(hits) / double(visible);
}

}  // namespace scai
