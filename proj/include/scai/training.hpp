#pragma once

// Three-stage training: supervised predictor pretraining, supervised
// feedback pretraining (ground-truth distal as input), then the joint stage
// where the predictor is frozen and the correction and feedback nets update
// from the same batch. Every stage derives its randomness independently from
// the master seed, so running stages in one process or across checkpoint
// save/load boundaries produces bit-identical parameters.

#include "scai/common.hpp"
#include "scai/dataset.hpp"
#include "scai/losses.hpp"

namespace scai {

// full:   the correction net conditions on the real error map and the
//         feedback net trains in the joint stage.
// frozen: the error map is real but the feedback net keeps its pretrained
//         parameters through the joint stage.
// zeroed: the error channel is all-zero and the feedback net neither runs
//         nor updates; the "correction without feedback" ablation variant.
enum class FeedbackMode { full, frozen, zeroed };

struct TrainConfig {
    int pretrain_epochs = 6;
    int joint_epochs = 4;
    int batch_size = 32;
    double pretrain_lr = 1e-3;
    double joint_lr = 1e-4;
    LossWeights<float> loss;
    std::uint64_t seed = 7;
    int threads = 1;

    void validate() const;
};

// Model initialization seed derived from the training seed; shared by every
// entry point so one config always trains the same model.
inline std::uint64_t model_init_seed(const TrainConfig& cfg) {
    return mix_seed(cfg.seed, 0x6d6f64656cull);
}

struct TrainRow {
    std::string stage;
    int epoch = 0;
    std::string group;
    double loss = 0;           // stage objective (joint: the correction loss)
    double l0 = 0, l1 = 0, l2 = 0, feedback_loss = 0;  // joint stage only
    double val_pck = 0;        // corrected-map distal PCK on the validation split
};

struct TrainReport {
    std::vector<TrainRow> rows;
    void append(const TrainReport& other) {
        rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    }
};

void pretrain_predictor(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                        TrainReport& report);
void pretrain_feedback(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                       TrainReport& report);
// Throws if the predictor's parameters change during the stage, or if the
// feedback net's parameters change under a mode that does not train it.
void joint_train(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                 TrainReport& report, FeedbackMode mode = FeedbackMode::full);

TrainReport train_all_stages(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                             FeedbackMode mode = FeedbackMode::full);

void write_train_csv(const std::string& path, const TrainReport& report);

}  // namespace scai
