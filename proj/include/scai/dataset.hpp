#pragma once

// Dataset assembly and storage. Samples are stored parametrically (peak
// coordinates, attenuations, occlusion flags); heatmaps are rendered on
// demand. Because the simulated detector output is exactly a rendered
// Gaussian, this representation is lossless and keeps multi-thousand-sample
// datasets to a few hundred kilobytes.

#include <cstdint>
#include <string>
#include <vector>

#include "scai/schema.hpp"
#include "scai/synth.hpp"

namespace scai {

struct DatasetConfig {
    GroupSchema schema;
    HeatmapGeometry geom;
    NoiseConfig train_noise;  // shared by the train and val splits
    NoiseConfig test_noise;   // strictly harder; drives the distribution shift
    int train_size = 800;
    int val_size = 400;
    int test_size = 3328;
    std::uint64_t seed = 1;

    void validate() const;
};

struct DatasetBundle {
    DatasetConfig cfg;
    std::vector<Sample> train, val, test;

    const std::vector<Sample>& split(const std::string& name) const;
    const NoiseConfig& noise_for(const std::string& split_name) const;
};

// Split index feeds the per-sample seed stream, so each sample is a pure
// function of (dataset seed, split, index) regardless of thread count.
DatasetBundle make_dataset(const DatasetConfig& cfg, int threads = 1);

// Writes manifest.json plus one binary file per split into dir (created if
// missing). The manifest records an FNV-1a digest of each payload.
void write_dataset(const std::string& dir, const DatasetBundle& ds);

// Round-trips what write_dataset produced; throws on digest or shape
// mismatch so a truncated or edited payload cannot load silently.
DatasetBundle load_dataset(const std::string& dir);

// Digest over a split's payload bytes; identical content => identical value.
std::uint64_t split_digest(const std::vector<Sample>& split);

}  // namespace scai
