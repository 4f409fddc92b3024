#pragma once

// Label-side evaluation: PCK scoring, self-error/accuracy correlation, the
// ablation ladder, the local-search alternative to the learned correction,
// and per-batch adaptation curves. Labels live only here; inference code
// never sees them.

#include "scai/inference.hpp"

namespace scai {

// Pearson correlation; returns 0 when either series has zero variance.
// Throws when sizes differ or fewer than two points are given.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct GroupEvalRecord {
    int sample = 0;
    int group = 0;
    std::uint8_t occluded = 0;  // ground-truth flag, analysis only
    float torso = 0.f;
    float e_pre = 0.f, e_post = 0.f;
    // Pixel distance from each decode to the ground-truth distal joint;
    // +inf when the map had no decodable peak.
    float err_base = 0.f, err_pred = 0.f, err_corr = 0.f;
    std::uint8_t hit_base = 0, hit_pred = 0, hit_corr = 0;  // within tau * torso
};

struct EvalOptions {
    FeedbackMode mode = FeedbackMode::full;
    double tau = 0.1;
    int threads = 1;
};

std::vector<GroupEvalRecord> evaluate_sci(const Model& model, const std::vector<Sample>& samples,
                                          const EvalOptions& opts = {});

enum class PeakKind { base, predicted, corrected };
double distal_pck(const std::vector<GroupEvalRecord>& records, PeakKind kind);
double mean_self_error(const std::vector<GroupEvalRecord>& records, bool post);

struct CorrelationRow {
    int batch = 0;
    double mean_e_post = 0, pck_corrected = 0;
    double mean_e_pre = 0, pck_predicted = 0;
};

struct CorrelationReport {
    std::vector<CorrelationRow> rows;
    double r_post_corrected = 0;  // headline pairing: self-assessment vs output accuracy
    double r_pre_predicted = 0;
    bool valid = false;  // at least 30 batches contributed
};

// Groups records into batches of `samples_per_batch` consecutive samples
// (trailing partial batch dropped) and correlates batch means.
CorrelationReport correlation_report(const std::vector<GroupEvalRecord>& records,
                                     int samples_per_batch);

// --- local search over candidate distal positions -------------------------

struct SearchOptions {
    int steps = 5;  // greedy rounds over the one-pixel 8-neighborhood
    double tau = 0.1;
    int threads = 1;
};

struct SearchRecord {
    int sample = 0, group = 0;
    float cost = 0.f;   // final feedback discrepancy of the best candidate
    int evals = 0;      // feedback-net evaluations spent
    float err = 0.f;    // pixel distance of the best candidate to ground truth
    std::uint8_t hit = 0;
};

// Gradient-free alternative to the learned correction: starting from the
// predictor's decode, greedily move a rendered candidate peak through its
// one-pixel 8-neighborhood to minimize the feedback discrepancy, stopping
// after `steps` rounds or at a local minimum. Every discrepancy evaluation
// is one feedback-net forward, counted in SearchRecord::evals.
std::vector<SearchRecord> local_search_refine(const Model& model,
                                              const std::vector<Sample>& samples,
                                              const SearchOptions& opts = {});

// --- adaptation curves -----------------------------------------------------

struct AdaptCurve {
    int batch = 0;
    std::vector<double> self_error;  // entry 0 = before adaptation
    std::vector<double> pck;
};

// Runs batch adaptation over consecutive full batches of `samples` and
// scores each epoch's decodes against the labels.
std::vector<AdaptCurve> adaptation_curves(const Model& model, const std::vector<Sample>& samples,
                                          const AdaptConfig& cfg, int batch_size,
                                          double tau = 0.1);

// PCK of one adaptation epoch's decodes (instances sample-major by group).
double batch_pck(const std::vector<std::optional<DecodedPeak>>& decoded,
                 const std::vector<Sample>& batch_samples, const GroupSchema& schema, double tau);

// --- ablation ladder -------------------------------------------------------

struct AblationRow {
    std::string variant;
    double pck = 0;  // NaN marks a variant whose training diverged
};

// Rungs, each adding one ingredient on the last:
//   baseline                     decoded observed distal maps
//   correction_zero_error        correction trained with an all-zero error channel
//   correction_frozen_feedback   real error channel, feedback kept at its pretrain state
//   correction_joint_feedback    correction and feedback trained together
//   adaptive                     the joint model plus per-batch adaptation
struct AblationReport {
    std::vector<AblationRow> rows;
    // Per-batch traces behind the adaptive rung, for downstream analysis.
    std::vector<AdaptCurve> adaptive_curves;
};

// Trains the ladder variants (sharing pretraining where the recipe allows),
// evaluates them on the first eval_samples of the test split, and saves the
// trained checkpoints plus a CSV under out_dir. adapt_batch samples per
// adaptation batch for the final rung. A variant whose training throws gets
// a NaN row; the remaining rungs still run.
AblationReport run_ablation(const DatasetBundle& ds, const TrainConfig& train_cfg,
                            const AdaptConfig& adapt_cfg, int eval_samples, int adapt_batch,
                            const std::string& out_dir);

// --- report files ----------------------------------------------------------

void write_eval_csv(const std::string& path, const std::vector<GroupEvalRecord>& records);
void write_correlation_csv(const std::string& path, const CorrelationReport& report);
void write_ablation_csv(const std::string& path, const AblationReport& report);
void write_adapt_csv(const std::string& path, const std::vector<AdaptCurve>& curves);
void write_search_csv(const std::string& path, const std::vector<SearchRecord>& records);

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};

// Minimal self-contained SVG line/scatter plot.
void write_svg_plot(const std::string& path, const std::vector<SvgSeries>& series,
                    const std::string& x_label, const std::string& y_label,
                    const std::string& title, bool points_only = false);

}  // namespace scai
