#pragma once

// Inference and label-free adaptation. Everything in this header operates on
// UnlabeledSample, which carries only what a detector would emit; ground
// truth cannot leak in because it is not present in the type.

#include <optional>

#include "scai/networks.hpp"
#include "scai/training.hpp"

namespace scai {

struct UnlabeledSample {
    std::vector<Coord> base;        // detected peak locations
    std::vector<float> attenuation; // detected peak heights

    static UnlabeledSample from(const Sample& s) { return {s.base, s.attenuation}; }
};

// One rendered observed map per joint (attenuation applied).
std::vector<Tensor> render_observed_maps(const UnlabeledSample& s, const GroupSchema& schema,
                                         const HeatmapGeometry& geom);

// Clamps negatives to zero (network outputs are unconstrained) and decodes.
std::optional<DecodedPeak> decode_map(const Tensor& map);

// One group's prediction-feedback-correction pass.
//   predicted: distal map from the predictor
//   e_pre:     feedback discrepancy of the predicted map; conditions the
//              correction net (zeroed in FeedbackMode::zeroed)
//   corrected: predicted + correction residual
//   e_post:    feedback discrepancy of the corrected map; the self-assessment
struct GroupResult {
    float e_pre = 0.f;
    float e_post = 0.f;
    std::optional<DecodedPeak> base_peak;       // decoded observed distal map
    std::optional<DecodedPeak> predicted_peak;  // decoded predictor output
    std::optional<DecodedPeak> corrected_peak;  // decoded corrected output
};

GroupResult sci_infer_group(const Model& model, std::size_t gi, const std::vector<Tensor>& maps,
                            FeedbackMode mode = FeedbackMode::full);

struct AdaptConfig {
    int epochs = 10;
    double lr = 1e-4;
    // Each batch adapts a fresh copy of the deployed correction nets; carrying
    // an adapted model into the next batch is out of scope, so validate()
    // rejects false rather than silently changing the protocol.
    bool restore_per_batch = true;
    int threads = 1;

    void validate() const;
};

// Per-epoch adaptation trace for one batch. Entry e holds metrics measured
// BEFORE step e, so entry 0 is the unadapted model and the last entry (index
// epochs) is the final state; decoded[e][i] is instance i's corrected-map
// decode at that point. Instance order matches the instances() layout:
// sample-major, group-minor.
struct BatchAdaptResult {
    std::vector<double> self_error;               // length epochs + 1, batch means
    std::vector<std::vector<std::optional<DecodedPeak>>> decoded;  // [epoch][instance]
};

// Adapts copies of the correction nets on one batch by minimizing the mean
// feedback discrepancy; the model itself is never modified (the "restore"
// protocol is trivially exact) and a fresh optimizer is created per batch.
// Gradients are reduced in a canonical content order, so permuting the batch
// changes nothing, bit for bit.
BatchAdaptResult sai_adapt(const Model& model, const std::vector<UnlabeledSample>& batch,
                           const AdaptConfig& cfg);

}  // namespace scai
