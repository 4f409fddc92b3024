#pragma once

// Pose sampling and baseline-detector simulation. Every randomized quantity
// for one sample comes from a single Rng stream, so generating sample i is
// independent of how many workers produced the dataset.

#include "scai/common.hpp"
#include "scai/schema.hpp"

namespace scai {

// Draws bone lengths and angles, walks the kinematic tree, and retries the
// whole figure (up to 100 times, then clamps) until all joints land inside
// the inset [1, w-2] x [1, h-2] region.
std::vector<Coord> sample_skeleton(const GroupSchema& schema, const HeatmapGeometry& geom,
                                   Rng& rng);

// Applies per-keypoint Gaussian jitter (wider for distals), then per-group
// occlusion of the distal: an extra displacement plus peak attenuation.
Sample simulate_baseline(const GroupSchema& schema, const std::vector<Coord>& gt,
                         const HeatmapGeometry& geom, const NoiseConfig& cfg, Rng& rng);

// Fully draws one sample (skeleton + baseline) from its own derived stream.
Sample make_sample(const GroupSchema& schema, const HeatmapGeometry& geom,
                   const NoiseConfig& cfg, std::uint64_t seed);

// Renders the simulated detector output for keypoint k: unit-peak Gaussian
// at the baseline location, scaled by the attenuation factor.
Heatmap baseline_heatmap(const Sample& s, int k, const HeatmapGeometry& geom);

// Renders the ideal unit-peak map at the ground-truth location.
Heatmap gt_heatmap(const Sample& s, int k, const HeatmapGeometry& geom);

float torso_length(const GroupSchema& schema, const std::vector<Coord>& gt);

}  // namespace scai
