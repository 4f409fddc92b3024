#include "scai/inference.hpp"

#include <algorithm>
#include <stdexcept>

namespace scai {

namespace {

float l2_norm_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l2_norm_diff");
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return float(std::sqrt(acc));
}

Tensor subtract(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "subtract");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b.data[i];
    return out;
}

std::uint64_t sample_digest(const UnlabeledSample& s) {
    Fnv1a64 h;
    for (std::size_t k = 0; k < s.base.size(); ++k) {
        h.update(&s.base[k].x, sizeof(float));
        h.update(&s.base[k].y, sizeof(float));
        const std::uint8_t vis = s.base[k].visible ? 1 : 0;
        h.update(&vis, 1);
        h.update(&s.attenuation[k], sizeof(float));
    }
    return h.digest();
}

}  // namespace

std::vector<Tensor> render_observed_maps(const UnlabeledSample& s, const GroupSchema& schema,
                                         const HeatmapGeometry& geom) {
    if ((int)s.base.size() != schema.keypoint_count ||
        s.attenuation.size() != s.base.size())
        throw std::invalid_argument("render_observed_maps: sample size mismatch");
    std::vector<Tensor> maps;
    maps.reserve(s.base.size());
    for (std::size_t k = 0; k < s.base.size(); ++k) {
        Heatmap h = render_gaussian(s.base[k], geom);
        const float a = s.attenuation[k];
        if (a != 1.f)
            for (auto& v : h.values) v *= a;
        maps.push_back(h.to_tensor());
    }
    return maps;
}

std::optional<DecodedPeak> decode_map(const Tensor& map) {
    if (map.shape.size() != 3 || map.shape[0] != 1)
        throw std::invalid_argument("decode_map: expected a [1,H,W] map");
    Heatmap h(map.shape[2], map.shape[1]);
    for (std::size_t i = 0; i < map.numel(); ++i)
        h.values[i] = map.data[i] > 0.f ? map.data[i] : 0.f;
    return decode_peak(h);
}

GroupResult sci_infer_group(const Model& model, std::size_t gi, const std::vector<Tensor>& maps,
                            FeedbackMode mode) {
    const GroupSchema& schema = model.schema;
    const GroupNets& nets = model.groups.at(gi);
    const Group& group = schema.group(gi);
    const Tensor& anchor_map = maps.at((std::size_t)group.proximals[0]);
    const bool full = mode != FeedbackMode::zeroed;

    GroupResult r;
    r.base_peak = decode_map(maps.at((std::size_t)group.distal));

    const Tensor predicted = nets.predictor.forward(predictor_input(schema, gi, maps));
    r.predicted_peak = decode_map(predicted);

    Tensor e_pre = Tensor::zeros(predicted.shape);
    if (full) {
        const Tensor recon = nets.feedback.forward(feedback_input(schema, gi, maps, predicted));
        e_pre = subtract(recon, anchor_map);
        r.e_pre = l2_norm_diff(recon, anchor_map);
    }

    const Tensor residual = nets.correction.forward(correction_input(predicted, e_pre));
    Tensor corrected = predicted;
    for (std::size_t i = 0; i < corrected.numel(); ++i) corrected.data[i] += residual.data[i];
    r.corrected_peak = decode_map(corrected);

    if (full) {
        const Tensor recon = nets.feedback.forward(feedback_input(schema, gi, maps, corrected));
        r.e_post = l2_norm_diff(recon, anchor_map);
    }
    return r;
}

void AdaptConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("adapt: epochs must be >= 0");
    if (!(lr > 0)) throw std::invalid_argument("adapt: lr must be positive");
    if (!restore_per_batch)
        throw std::invalid_argument("adapt: restore_per_batch must stay true; "
                                    "cross-batch carry-over is not supported");
    if (threads < 0) throw std::invalid_argument("adapt: threads must be >= 0");
}

BatchAdaptResult sai_adapt(const Model& model, const std::vector<UnlabeledSample>& batch,
                           const AdaptConfig& cfg) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("sai_adapt: empty batch");
    const GroupSchema& schema = model.schema;
    const HeatmapGeometry geom = model.geom;
    const std::size_t n_groups = model.groups.size();
    const std::size_t n_inst = batch.size() * n_groups;
    const int threads = resolve_threads(cfg.threads);

    // Fixed conditioning per instance: the predictor and the pre-correction
    // error never change during adaptation, so compute them once.
    struct InstanceCache {
        std::size_t gi = 0;
        Tensor predicted, e_pre, fb_pref, obs_anchor;
    };
    std::vector<InstanceCache> cache(n_inst);
    parallel_for(batch.size(), threads, [&](std::size_t si) {
        const auto maps = render_observed_maps(batch[si], schema, geom);
        for (std::size_t gi = 0; gi < n_groups; ++gi) {
            InstanceCache& c = cache[si * n_groups + gi];
            c.gi = gi;
            const GroupNets& nets = model.groups[gi];
            c.obs_anchor = maps[(std::size_t)schema.group(gi).proximals[0]];
            c.predicted = nets.predictor.forward(predictor_input(schema, gi, maps));
            const Tensor recon =
                nets.feedback.forward(feedback_input(schema, gi, maps, c.predicted));
            c.e_pre = subtract(recon, c.obs_anchor);
            c.fb_pref = feedback_prefix(schema, gi, maps);
        }
    });

    // Canonical instance order for all reductions: batch content, not batch
    // position, decides summation order. Equal keys carry bitwise-equal
    // contributions, so their relative order cannot matter.
    std::vector<std::size_t> canon(n_inst);
    for (std::size_t i = 0; i < n_inst; ++i) canon[i] = i;
    std::vector<std::uint64_t> keys(batch.size());
    for (std::size_t si = 0; si < batch.size(); ++si) keys[si] = sample_digest(batch[si]);
    std::stable_sort(canon.begin(), canon.end(), [&](std::size_t a, std::size_t b) {
        const std::uint64_t ka = keys[a / n_groups], kb = keys[b / n_groups];
        if (ka != kb) return ka < kb;
        return cache[a].gi < cache[b].gi;
    });

    std::vector<ConvNet> corr(n_groups);
    std::vector<NetAdam> adams;
    for (std::size_t gi = 0; gi < n_groups; ++gi) {
        corr[gi] = model.groups[gi].correction;  // adapt a copy; model stays intact
        adams.push_back(NetAdam::for_net(corr[gi], AdamConfig{cfg.lr}));
    }

    BatchAdaptResult result;
    result.self_error.assign((std::size_t)cfg.epochs + 1, 0.0);
    result.decoded.assign((std::size_t)cfg.epochs + 1,
                          std::vector<std::optional<DecodedPeak>>(n_inst));

    std::vector<float> losses(n_inst, 0.f);
    std::vector<NetGrads> slots;

    auto measure = [&](int epoch, bool with_grads) {
        if (with_grads) {
            slots.clear();
            for (std::size_t i = 0; i < n_inst; ++i)
                slots.push_back(NetGrads::zeros_like(corr[cache[i].gi]));
        }
        parallel_for(n_inst, threads, [&](std::size_t i) {
            const InstanceCache& c = cache[i];
            const GroupNets& nets = model.groups[c.gi];
            if (with_grads) {
                Tape tape;
                auto inst = build_adapt_instance(tape, corr[c.gi], nets.feedback, c.predicted,
                                                 c.e_pre, c.fb_pref, c.obs_anchor);
                tape.backward(inst.loss);
                slots[i].accumulate(tape, inst.correction_bound);
                losses[i] = tape.value(inst.loss).data[0];
                result.decoded[(std::size_t)epoch][i] = decode_map(tape.value(inst.corrected));
            } else {
                const Tensor residual =
                    corr[c.gi].forward(correction_input(c.predicted, c.e_pre));
                Tensor corrected = c.predicted;
                for (std::size_t px = 0; px < corrected.numel(); ++px)
                    corrected.data[px] += residual.data[px];
                const Tensor gin = stack_maps<float>({&c.fb_pref, &corrected});
                const Tensor recon = nets.feedback.forward(gin);
                losses[i] = l2_norm_diff(recon, c.obs_anchor);
                result.decoded[(std::size_t)epoch][i] = decode_map(corrected);
            }
        });
        double total = 0;
        for (std::size_t i : canon) total += losses[i];
        result.self_error[(std::size_t)epoch] = total / double(n_inst);
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        measure(epoch, true);
        for (std::size_t gi = 0; gi < n_groups; ++gi) {
            NetGrads grads = NetGrads::zeros_like(corr[gi]);
            std::size_t count = 0;
            for (std::size_t i : canon)
                if (cache[i].gi == gi) {
                    grads.add(slots[i]);
                    ++count;
                }
            grads.scale(1.f / float(count));
            adams[gi].step(corr[gi], grads);
        }
    }
    measure(cfg.epochs, false);
    return result;
}

}  // namespace scai
