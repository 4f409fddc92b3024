#include "scai/training.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace scai {

namespace {

constexpr std::uint64_t kPredictorStage = 0x7072656431ull;
constexpr std::uint64_t kFeedbackStage = 0x6665656431ull;
constexpr std::uint64_t kJointStage = 0x6a6f696e31ull;

// Shuffled index batches for one (stage, epoch, group); the last batch may
// be short. Order depends only on the seeds, never on thread count.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size,
                                                    std::uint64_t stage_seed, int epoch,
                                                    std::size_t gi) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed(mix_seed(stage_seed, std::uint64_t(epoch)), 0x67726f7570ull + gi));
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += std::size_t(batch_size)) {
        const std::size_t end = std::min(n, start + std::size_t(batch_size));
        batches.emplace_back(order.begin() + std::ptrdiff_t(start),
                             order.begin() + std::ptrdiff_t(end));
    }
    return batches;
}

// Renders the per-joint baseline maps a group needs, leaving other slots
// empty. Returned vector is indexed by joint id.
std::vector<Tensor> group_base_maps(const Sample& s, const GroupSchema& schema, std::size_t gi,
                                    const HeatmapGeometry& geom) {
    std::vector<Tensor> maps((std::size_t)schema.keypoint_count);
    for (int p : schema.group(gi).proximals) maps[(std::size_t)p] = baseline_heatmap(s, p, geom).to_tensor();
    return maps;
}

struct StageStats {
    double loss = 0, l0 = 0, l1 = 0, l2 = 0, feedback_loss = 0;
    std::size_t count = 0;
    void add(const StageStats& o) {
        loss += o.loss;
        l0 += o.l0;
        l1 += o.l1;
        l2 += o.l2;
        feedback_loss += o.feedback_loss;
        count += o.count;
    }
};

TrainRow make_row(const std::string& stage, int epoch, const std::string& group,
                  const StageStats& s) {
    TrainRow r;
    r.stage = stage;
    r.epoch = epoch;
    r.group = group;
    const double n = s.count ? double(s.count) : 1.0;
    r.loss = s.loss / n;
    r.l0 = s.l0 / n;
    r.l1 = s.l1 / n;
    r.l2 = s.l2 / n;
    r.feedback_loss = s.feedback_loss / n;
    if (!std::isfinite(r.loss))
        throw std::runtime_error("training diverged: non-finite loss in stage " + stage +
                                 " epoch " + std::to_string(epoch) + " group " + group);
    return r;
}

constexpr double kValTau = 0.1;

// Corrected-map distal PCK of one group over the validation split, the
// per-epoch progress column. While the correction net has never been updated
// (both pretraining stages) the corrected map equals the prediction, so the
// error channel and correction forward are skipped.
double val_group_pck(const Model& model, const DatasetBundle& ds, std::size_t gi,
                     bool correction_live, bool condition, int threads) {
    const GroupSchema& schema = model.schema;
    const HeatmapGeometry geom = model.geom;
    const Group& group = schema.group(gi);
    const GroupNets& nets = model.groups[gi];
    std::vector<std::uint8_t> hits(ds.val.size(), 0);
    parallel_for(ds.val.size(), threads, [&](std::size_t i) {
        const Sample& s = ds.val[i];
        const auto maps = group_base_maps(s, schema, gi, geom);
        Tensor out = nets.predictor.forward(predictor_input(schema, gi, maps));
        if (correction_live) {
            Tensor e_pre = Tensor::zeros(out.shape);
            if (condition) {
                const Tensor recon =
                    nets.feedback.forward(feedback_input(schema, gi, maps, out));
                const Tensor& anchor = maps[(std::size_t)group.proximals[0]];
                for (std::size_t px = 0; px < e_pre.numel(); ++px)
                    e_pre.data[px] = recon.data[px] - anchor.data[px];
            }
            const Tensor residual = nets.correction.forward(correction_input(out, e_pre));
            for (std::size_t px = 0; px < out.numel(); ++px) out.data[px] += residual.data[px];
        }
        Heatmap h(geom.width, geom.height);
        for (std::size_t px = 0; px < out.numel(); ++px)
            h.values[px] = out.data[px] > 0.f ? out.data[px] : 0.f;
        const auto peak = decode_peak(h);
        if (!peak) return;
        const Coord& gt = s.gt[(std::size_t)group.distal];
        const float dx = peak->coord.x - gt.x, dy = peak->coord.y - gt.y;
        if (std::sqrt(dx * dx + dy * dy) <= float(kValTau) * s.torso_len) hits[i] = 1;
    });
    double total = 0;
    for (auto hit : hits) total += hit;
    return ds.val.empty() ? 0.0 : total / double(ds.val.size());
}

std::uint64_t feedback_param_hash(const Model& model) {
    Fnv1a64 h;
    for (const auto& g : model.groups) {
        for (const auto& w : g.feedback.weights)
            h.update(w.data.data(), w.data.size() * sizeof(float));
        for (const auto& b : g.feedback.biases)
            h.update(b.data.data(), b.data.size() * sizeof(float));
    }
    return h.digest();
}

// Supervised pretraining shared by the predictor and feedback stages; the
// two differ only in how an instance's (input, target) pair is assembled.
template <class MakePair>
void pretrain_stage(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                    TrainReport& report, const std::string& stage_name,
                    std::uint64_t stage_salt, ConvNet GroupNets::*net_member,
                    const MakePair& make_pair) {
    const std::uint64_t stage_seed = mix_seed(cfg.seed, stage_salt);
    const int threads = resolve_threads(cfg.threads);
    std::vector<NetAdam> adams;
    for (auto& g : model.groups)
        adams.push_back(NetAdam::for_net(g.*net_member, AdamConfig{cfg.pretrain_lr}));

    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        for (std::size_t gi = 0; gi < model.groups.size(); ++gi) {
            ConvNet& net = model.groups[gi].*net_member;
            StageStats epoch_stats;
            for (const auto& batch :
                 epoch_batches(ds.train.size(), cfg.batch_size, stage_seed, epoch, gi)) {
                std::vector<NetGrads> slots(batch.size(), NetGrads::zeros_like(net));
                std::vector<float> losses(batch.size(), 0.f);
                parallel_for(batch.size(), threads, [&](std::size_t i) {
                    const Sample& s = ds.train[batch[i]];
                    const auto [input, target] = make_pair(s, gi);
                    Tape tape;
                    auto inst = build_supervised(tape, net, input, target);
                    tape.backward(inst.loss);
                    slots[i].accumulate(tape, inst.bound);
                    losses[i] = tape.value(inst.loss).data[0];
                });
                NetGrads grads = NetGrads::zeros_like(net);
                for (const auto& slot : slots) grads.add(slot);
                grads.scale(1.f / float(batch.size()));
                adams[gi].step(net, grads);
                for (float l : losses) {
                    epoch_stats.loss += l;
                    epoch_stats.count += 1;
                }
            }
            TrainRow row = make_row(stage_name, epoch, model.schema.group(gi).name, epoch_stats);
            row.val_pck = val_group_pck(model, ds, gi, false, false, threads);
            report.rows.push_back(std::move(row));
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (pretrain_epochs < 0 || joint_epochs < 0)
        throw std::invalid_argument("train: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(pretrain_lr > 0) || !(joint_lr > 0))
        throw std::invalid_argument("train: learning rates must be positive");
    if (loss.a < 0 || loss.b < 0 || loss.lambda < 0)
        throw std::invalid_argument("train: loss weights must be >= 0");
    if (!(loss.b + loss.lambda > 0))
        throw std::invalid_argument("train: corrected-map weight b + lambda must be positive");
    if (threads < 0) throw std::invalid_argument("train: threads must be >= 0");
}

void pretrain_predictor(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                        TrainReport& report) {
    cfg.validate();
    const GroupSchema& schema = model.schema;
    const HeatmapGeometry geom = model.geom;
    pretrain_stage(model, ds, cfg, report, "pretrain_predictor", kPredictorStage,
                   &GroupNets::predictor, [&](const Sample& s, std::size_t gi) {
                       const auto maps = group_base_maps(s, schema, gi, geom);
                       return std::pair<Tensor, Tensor>(
                           predictor_input(schema, gi, maps),
                           render_gt_map(s, schema.group(gi).distal, geom));
                   });
}

void pretrain_feedback(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                       TrainReport& report) {
    cfg.validate();
    const GroupSchema& schema = model.schema;
    const HeatmapGeometry geom = model.geom;
    // Input uses the ground-truth distal map: the feedback net learns what a
    // consistent figure looks like, so a wrong distal map later yields a bad
    // reconstruction, which is exactly the signal.
    pretrain_stage(model, ds, cfg, report, "pretrain_feedback", kFeedbackStage,
                   &GroupNets::feedback, [&](const Sample& s, std::size_t gi) {
                       const auto maps = group_base_maps(s, schema, gi, geom);
                       const Tensor distal = render_gt_map(s, schema.group(gi).distal, geom);
                       return std::pair<Tensor, Tensor>(
                           feedback_input(schema, gi, maps, distal),
                           render_gt_map(s, schema.group(gi).proximals[0], geom));
                   });
}

void joint_train(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                 TrainReport& report, FeedbackMode mode) {
    cfg.validate();
    const GroupSchema& schema = model.schema;
    const HeatmapGeometry geom = model.geom;
    const bool condition = mode != FeedbackMode::zeroed;
    const bool train_fb = mode == FeedbackMode::full;
    const std::uint64_t stage_seed = mix_seed(cfg.seed, kJointStage);
    const int threads = resolve_threads(cfg.threads);
    const std::uint64_t predictor_before = model.predictor_param_hash();
    const std::uint64_t feedback_before = feedback_param_hash(model);
    const LossWeights<float> w = cfg.loss;

    std::vector<NetAdam> corr_adams, fb_adams;
    for (auto& g : model.groups) {
        corr_adams.push_back(NetAdam::for_net(g.correction, AdamConfig{cfg.joint_lr}));
        fb_adams.push_back(NetAdam::for_net(g.feedback, AdamConfig{cfg.joint_lr}));
    }

    for (int epoch = 0; epoch < cfg.joint_epochs; ++epoch) {
        for (std::size_t gi = 0; gi < model.groups.size(); ++gi) {
            GroupNets& nets = model.groups[gi];
            const Group& group = schema.group(gi);
            const int anchor = group.proximals[0];
            StageStats epoch_stats;
            for (const auto& batch :
                 epoch_batches(ds.train.size(), cfg.batch_size, stage_seed, epoch, gi)) {
                std::vector<NetGrads> corr_slots(batch.size(),
                                                 NetGrads::zeros_like(nets.correction));
                std::vector<NetGrads> fb_slots(batch.size(), NetGrads::zeros_like(nets.feedback));
                std::vector<StageStats> stats(batch.size());
                parallel_for(batch.size(), threads, [&](std::size_t i) {
                    const Sample& s = ds.train[batch[i]];
                    const auto maps = group_base_maps(s, schema, gi, geom);
                    const Tensor predicted =
                        nets.predictor.forward(predictor_input(schema, gi, maps));
                    Tensor e_pre = Tensor::zeros(predicted.shape);
                    if (condition) {
                        const Tensor recon =
                            nets.feedback.forward(feedback_input(schema, gi, maps, predicted));
                        for (std::size_t px = 0; px < e_pre.numel(); ++px)
                            e_pre.data[px] = recon.data[px] - maps[(std::size_t)anchor].data[px];
                    }
                    const Tensor fb_pref = feedback_prefix(schema, gi, maps);
                    const Tensor gt_distal = render_gt_map(s, group.distal, geom);
                    const Tensor gt_anchor = render_gt_map(s, anchor, geom);
                    Tape tape;
                    auto ji = build_joint_instance(tape, nets.correction, nets.feedback, w,
                                                   predicted, e_pre, fb_pref, gt_distal,
                                                   gt_anchor, maps[(std::size_t)anchor],
                                                   condition, train_fb);
                    tape.backward(ji.objective);
                    corr_slots[i].accumulate(tape, ji.correction_bound);
                    if (train_fb) fb_slots[i].accumulate(tape, ji.feedback_bound);
                    stats[i] = {ji.correction_loss, ji.l0, ji.l1, ji.l2, ji.feedback_loss, 1};
                });
                NetGrads corr_grads = NetGrads::zeros_like(nets.correction);
                for (const auto& slot : corr_slots) corr_grads.add(slot);
                corr_grads.scale(1.f / float(batch.size()));
                corr_adams[gi].step(nets.correction, corr_grads);
                if (train_fb) {
                    NetGrads fb_grads = NetGrads::zeros_like(nets.feedback);
                    for (const auto& slot : fb_slots) fb_grads.add(slot);
                    fb_grads.scale(1.f / float(batch.size()));
                    fb_adams[gi].step(nets.feedback, fb_grads);
                }
                for (const auto& st : stats) epoch_stats.add(st);
            }
            TrainRow row = make_row("joint", epoch, group.name, epoch_stats);
            row.val_pck = val_group_pck(model, ds, gi, true, condition, threads);
            report.rows.push_back(std::move(row));
        }
    }

    if (model.predictor_param_hash() != predictor_before)
        throw std::logic_error("joint stage must not modify the predictor");
    if (!train_fb && feedback_param_hash(model) != feedback_before)
        throw std::logic_error("joint stage must not modify a frozen feedback net");
}

TrainReport train_all_stages(Model& model, const DatasetBundle& ds, const TrainConfig& cfg,
                             FeedbackMode mode) {
    TrainReport report;
    pretrain_predictor(model, ds, cfg, report);
    if (mode != FeedbackMode::zeroed) pretrain_feedback(model, ds, cfg, report);
    joint_train(model, ds, cfg, report, mode);
    return report;
}

void write_train_csv(const std::string& path, const TrainReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "stage,epoch,group,loss,pre_correction,corrected,twice_corrected,feedback,val_pck\n";
    for (const auto& r : report.rows)
        out << r.stage << "," << r.epoch << "," << r.group << "," << r.loss << "," << r.l0 << ","
            << r.l1 << "," << r.l2 << "," << r.feedback_loss << "," << r.val_pck << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace scai
