#pragma once

// Experiment configuration: one JSON file drives data generation, training,
// and evaluation. Unknown keys are rejected everywhere; sections may be
// omitted to take defaults, and the fully resolved config can be written
// back so a run's inputs are always on disk.

#include "scai/inference.hpp"
#include "scai/json_io.hpp"
#include "scai/training.hpp"

namespace scai {

struct EvalConfig {
    int sci_samples = 2000;     // samples for the single-pass inference report
    int correlate_batch = 64;   // samples per correlation batch
    int adapt_batches = 20;     // full batches used for adaptation curves
    int search_samples = 200;   // samples for the local-search comparison
    int ablation_samples = 1600;
    double tau = 0.1;

    void validate() const;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    TrainConfig train;
    AdaptConfig adapt;
    EvalConfig eval;
    int threads = 0;  // 0 = use all hardware threads

    static ExperimentConfig defaults(const std::string& schema_name = "coco_like");
    void validate() const;
};

ordered_json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const ordered_json& j);

ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const std::string& path, const ExperimentConfig& cfg);

}  // namespace scai
