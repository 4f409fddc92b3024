#pragma once

// Tape graph builders for the three learning problems: supervised
// pretraining, the joint correction/feedback stage, and label-free batch
// adaptation. Templated on the scalar type so the double instantiation can
// be checked against finite differences.

#include "scai/networks.hpp"

namespace scai {

template <class T>
struct LossWeights {
    T a = T(0.85);      // pre-correction term (no correction-net gradient)
    T b = T(0.65);      // corrected-map term
    T lambda = T(0.45); // improvement term; its second-iteration loss is held constant
};

template <class T>
TensorT<T> stack_maps(const std::vector<const TensorT<T>*>& parts) {
    int ctotal = 0;
    const Shape& s0 = parts.at(0)->shape;
    if (s0.size() != 3) throw std::invalid_argument("stack_maps: inputs must be [C,H,W]");
    for (const auto* p : parts) {
        if (p->shape.size() != 3 || p->shape[1] != s0[1] || p->shape[2] != s0[2])
            throw std::invalid_argument("stack_maps: spatial shape mismatch");
        ctotal += p->shape[0];
    }
    TensorT<T> out({ctotal, s0[1], s0[2]});
    std::size_t off = 0;
    for (const auto* p : parts) {
        std::copy(p->data.begin(), p->data.end(), out.data.begin() + off);
        off += p->numel();
    }
    return out;
}

template <class T>
T l2_distance(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "l2_distance");
    T acc = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const T d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

template <class T>
struct SupervisedInstance {
    typename ConvNetT<T>::Bound bound;
    Var loss;
};

// ||net(input) - target||_2; both pretraining stages use this shape.
template <class T>
SupervisedInstance<T> build_supervised(TapeT<T>& tape, const ConvNetT<T>& net,
                                       const TensorT<T>& input, const TensorT<T>& target) {
    SupervisedInstance<T> r;
    const Var in = tape.input(input, false);
    r.bound = net.forward_on_tape(tape, in, true);
    const Var tgt = tape.input(target, false);
    r.loss = tape.l2norm(tape.sub(r.bound.out, tgt));
    return r;
}

// One joint-stage instance. The correction net learns through the corrected
// map's distance to the target: the pre-correction term is constant with
// respect to it, and the improvement term contributes the same gradient as
// the corrected-map term because its second-iteration distance is held
// constant, so the backward target scales that distance by (b + lambda).
// The feedback net learns its anchor reconstruction on a detached copy of
// the corrected map, which keeps the two parameter sets' gradients exactly
// separate while needing only one backward pass.
template <class T>
struct JointInstance {
    typename ConvNetT<T>::Bound correction_bound;
    typename ConvNetT<T>::Bound feedback_bound;  // bound only when train_feedback
    Var objective;
    T l0 = T(0);          // ||predicted - target||
    T l1 = T(0);          // ||corrected - target||
    T l2 = T(0);          // ||corrected twice - target||, reporting only
    T correction_loss = T(0);   // a*l0 + b*l1 + lambda*(l1 - l2)
    T feedback_loss = T(0);  // ||reconstructed anchor - target anchor||
};

// condition: the error channels are real (the feedback net produced e_pre and
// produces the second-iteration error); train_feedback additionally puts the
// reconstruction loss in the objective with the feedback parameters bound
// trainable. train_feedback implies condition.
template <class T>
JointInstance<T> build_joint_instance(TapeT<T>& tape, const ConvNetT<T>& correction,
                                      const ConvNetT<T>& feedback, const LossWeights<T>& w,
                                      const TensorT<T>& predicted, const TensorT<T>& e_pre,
                                      const TensorT<T>& feedback_pref, const TensorT<T>& gt_distal,
                                      const TensorT<T>& gt_anchor, const TensorT<T>& obs_anchor,
                                      bool condition, bool train_feedback) {
    if (train_feedback && !condition)
        throw std::invalid_argument("joint instance: training the feedback net requires conditioning");
    JointInstance<T> r;
    const Var cin = tape.input(stack_maps<T>({&predicted, &e_pre}), false);
    r.correction_bound = correction.forward_on_tape(tape, cin, true);
    const Var hd = tape.input(predicted, false);
    const Var corrected = tape.add(hd, r.correction_bound.out);
    const Var tgt_d = tape.input(gt_distal, false);
    const Var l1v = tape.l2norm(tape.sub(corrected, tgt_d));

    r.l0 = l2_distance(predicted, gt_distal);
    r.l1 = tape.value(l1v).data[0];
    Var objective = tape.scale(l1v, w.b + w.lambda);

    const TensorT<T> corrected_val = tape.value(corrected);
    TensorT<T> recon_val;
    if (train_feedback) {
        const Var gpre = tape.input(feedback_pref, false);
        const Var hdet = tape.input(corrected_val, false);
        const Var gin = tape.concat_channels({gpre, hdet});
        r.feedback_bound = feedback.forward_on_tape(tape, gin, true);
        const Var tgt_a = tape.input(gt_anchor, false);
        const Var lg = tape.l2norm(tape.sub(r.feedback_bound.out, tgt_a));
        r.feedback_loss = tape.value(lg).data[0];
        objective = tape.add(objective, lg);
        recon_val = tape.value(r.feedback_bound.out);
    } else if (condition) {
        const TensorT<T> gin = stack_maps<T>({&feedback_pref, &corrected_val});
        recon_val = feedback.forward(gin);
        r.feedback_loss = l2_distance(recon_val, gt_anchor);
    }
    TensorT<T> e_second = TensorT<T>::zeros(e_pre.shape);
    if (condition) {
        check_same_shape(recon_val, obs_anchor, "joint e_second");
        for (std::size_t i = 0; i < e_second.numel(); ++i)
            e_second.data[i] = recon_val.data[i] - obs_anchor.data[i];
    }
    r.objective = objective;

    // Second correction iteration, evaluated without gradients: it only
    // feeds the reported improvement term.
    TensorT<T> second_in = stack_maps<T>({&corrected_val, &e_second});
    TensorT<T> residual2 = correction.forward(second_in);
    for (std::size_t i = 0; i < residual2.numel(); ++i) residual2.data[i] += corrected_val.data[i];
    r.l2 = l2_distance(residual2, gt_distal);
    r.correction_loss = w.a * r.l0 + w.b * r.l1 + w.lambda * (r.l1 - r.l2);
    return r;
}

// One adaptation instance: minimize the feedback discrepancy of the
// corrected map against the observed anchor. No labels enter this graph;
// the feedback net is bound frozen so only correction parameters train.
template <class T>
struct AdaptInstance {
    typename ConvNetT<T>::Bound correction_bound;
    Var corrected;
    Var loss;
};

template <class T>
AdaptInstance<T> build_adapt_instance(TapeT<T>& tape, const ConvNetT<T>& correction,
                                      const ConvNetT<T>& feedback, const TensorT<T>& predicted,
                                      const TensorT<T>& e_pre, const TensorT<T>& feedback_pref,
                                      const TensorT<T>& obs_anchor) {
    AdaptInstance<T> r;
    const Var cin = tape.input(stack_maps<T>({&predicted, &e_pre}), false);
    r.correction_bound = correction.forward_on_tape(tape, cin, true);
    const Var hd = tape.input(predicted, false);
    r.corrected = tape.add(hd, r.correction_bound.out);
    const Var gpre = tape.input(feedback_pref, false);
    const Var gin = tape.concat_channels({gpre, r.corrected});
    const auto gb = feedback.forward_on_tape(tape, gin, false);
    const Var obs = tape.input(obs_anchor, false);
    r.loss = tape.l2norm(tape.sub(gb.out, obs));
    return r;
}

}  // namespace scai
