#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>

#include "doctest.h"
#include "scai/losses.hpp"

using namespace scai;

namespace {

using TD = TensorT<double>;
using NetD = ConvNetT<double>;

TD rand_map(int c, int h, int w, Rng& rng, double lo = -0.3, double hi = 1.0) {
    TD t({c, h, w});
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

struct Fixture {
    NetD correction = NetD::init(NetSpec::standard(2, 6, 1, 3, {1, 2}), 11);
    NetD feedback = NetD::init(NetSpec::standard(3, 6, 1, 3, {1, 2}), 12);
    Rng rng{210};
    TD predicted = rand_map(1, 12, 12, rng);
    TD e_pre = rand_map(1, 12, 12, rng, -0.5, 0.5);
    TD pref = rand_map(2, 12, 12, rng);
    TD gt_distal = rand_map(1, 12, 12, rng, 0.0, 1.0);
    TD gt_anchor = rand_map(1, 12, 12, rng, 0.0, 1.0);
    TD obs_anchor = rand_map(1, 12, 12, rng, 0.0, 1.0);

    JointInstance<double> build(TapeT<double>& tape, const LossWeights<double>& w,
                                bool condition, bool train_fb) const {
        return build_joint_instance(tape, correction, feedback, w, predicted, e_pre, pref,
                                    gt_distal, gt_anchor, obs_anchor, condition, train_fb);
    }
};

// Central finite difference over randomly chosen parameters of one net,
// against gradients already accumulated for it. Returns the worst relative
// error, with the same small-denominator floor the tape self-check uses.
double worst_param_fd(NetD& net, const NetGradsT<double>& grads,
                      const std::function<double()>& value, Rng& rng, int coords,
                      double eps = 1e-5) {
    double worst = 0;
    for (int c = 0; c < coords; ++c) {
        const std::size_t l = rng.below(net.weights.size());
        const bool bias = rng.below(4) == 0;
        auto& data = bias ? net.biases[l].data : net.weights[l].data;
        const auto& gdata = bias ? grads.biases[l].data : grads.weights[l].data;
        const std::size_t i = rng.below(data.size());
        const double keep = data[i];
        data[i] = keep + eps;
        const double fp = value();
        data[i] = keep - eps;
        const double fm = value();
        data[i] = keep;
        const double fd = (fp - fm) / (2 * eps);
        const double denom = std::max({std::abs(fd), std::abs(gdata[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - gdata[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("l2 distance is the euclidean norm of the difference") {
    const TD a({2, 1, 1}, {3.0, 0.0});
    const TD b({2, 1, 1}, {0.0, 4.0});
    CHECK(l2_distance(a, b) == doctest::Approx(5.0));
    CHECK(l2_distance(a, a) == 0.0);
    const TD c({1, 1, 2}, {0.0, 0.0});
    CHECK_THROWS_AS(l2_distance(a, c), std::invalid_argument);
}

TEST_CASE("stack_maps concatenates channel blocks in order") {
    const TD a = TD::full({1, 2, 2}, 1.0);
    const TD b = TD::full({2, 2, 2}, 2.0);
    const TD s = stack_maps<double>({&a, &b});
    REQUIRE(s.shape == Shape{3, 2, 2});
    CHECK(s.data[0] == 1.0);
    CHECK(s.data[4] == 2.0);
    CHECK(s.data[11] == 2.0);
    const TD bad = TD::full({1, 3, 2}, 0.0);
    CHECK_THROWS_AS(stack_maps<double>({&a, &bad}), std::invalid_argument);
}

TEST_CASE("supervised loss equals the distance recount and its gradient checks") {
    Fixture f;
    NetD pred_net = NetD::init(NetSpec::standard(3, 6, 1, 3, {1, 2}), 13);
    const TD input = stack_maps<double>({&f.pref, &f.predicted});

    TapeT<double> tape;
    const auto inst = build_supervised(tape, pred_net, input, f.gt_distal);
    const double loss = tape.value(inst.loss).data[0];
    CHECK(loss == doctest::Approx(l2_distance(pred_net.forward(input), f.gt_distal))
                      .epsilon(1e-9));

    tape.backward(inst.loss);
    NetGradsT<double> g = NetGradsT<double>::zeros_like(pred_net);
    g.accumulate(tape, inst.bound);
    Rng coord_rng(1);
    const double worst = worst_param_fd(
        pred_net, g,
        [&] {
            TapeT<double> t2;
            return t2.value(build_supervised(t2, pred_net, input, f.gt_distal).loss).data[0];
        },
        coord_rng, 24);
    CHECK(worst < 1e-3);
}

TEST_CASE("joint loss recount from plain forward passes") {
    Fixture f;
    const LossWeights<double> w;
    TapeT<double> tape;
    const auto inst = f.build(tape, w, true, true);

    // Recount every term without the tape.
    const TD cin = stack_maps<double>({&f.predicted, &f.e_pre});
    TD corrected = f.correction.forward(cin);
    for (std::size_t i = 0; i < corrected.numel(); ++i) corrected.data[i] += f.predicted.data[i];
    const double l0 = l2_distance(f.predicted, f.gt_distal);
    const double l1 = l2_distance(corrected, f.gt_distal);
    const TD gin = stack_maps<double>({&f.pref, &corrected});
    const TD recon = f.feedback.forward(gin);
    const double lg = l2_distance(recon, f.gt_anchor);
    TD e2(recon.shape);
    for (std::size_t i = 0; i < e2.numel(); ++i)
        e2.data[i] = recon.data[i] - f.obs_anchor.data[i];
    const TD cin2 = stack_maps<double>({&corrected, &e2});
    TD corrected2 = f.correction.forward(cin2);
    for (std::size_t i = 0; i < corrected2.numel(); ++i)
        corrected2.data[i] += corrected.data[i];
    const double l2 = l2_distance(corrected2, f.gt_distal);

    const double rtol = 1e-6;
    CHECK(inst.l0 == doctest::Approx(l0).epsilon(rtol));
    CHECK(inst.l1 == doctest::Approx(l1).epsilon(rtol));
    CHECK(inst.l2 == doctest::Approx(l2).epsilon(rtol));
    CHECK(inst.feedback_loss == doctest::Approx(lg).epsilon(rtol));
    CHECK(inst.correction_loss ==
          doctest::Approx(w.a * l0 + w.b * l1 + w.lambda * (l1 - l2)).epsilon(rtol));
    CHECK(tape.value(inst.objective).data[0] ==
          doctest::Approx((w.b + w.lambda) * l1 + lg).epsilon(rtol));
}

TEST_CASE("reported loss is linear in the three weights") {
    Fixture f;
    LossWeights<double> w;
    TapeT<double> t0;
    const auto base = f.build(t0, w, true, false);

    LossWeights<double> only_a{1.0, 0.0, 0.0};
    LossWeights<double> only_b{0.0, 1.0, 0.0};
    LossWeights<double> only_l{0.0, 0.0, 1.0};
    TapeT<double> ta, tb, tl;
    CHECK(f.build(ta, only_a, true, false).correction_loss == doctest::Approx(base.l0));
    CHECK(f.build(tb, only_b, true, false).correction_loss == doctest::Approx(base.l1));
    CHECK(f.build(tl, only_l, true, false).correction_loss ==
          doctest::Approx(base.l1 - base.l2));
    CHECK(base.correction_loss ==
          doctest::Approx(w.a * base.l0 + w.b * base.l1 + w.lambda * (base.l1 - base.l2)));
}

TEST_CASE("default weights match the published operating point") {
    const LossWeights<float> w;
    CHECK(w.a == 0.85f);
    CHECK(w.b == 0.65f);
    CHECK(w.lambda == 0.45f);
}

TEST_CASE("unconditioned instances keep the error channel silent") {
    Fixture f;
    const LossWeights<double> w;
    TapeT<double> tape;
    TD zero_e = TD::zeros(f.e_pre.shape);
    const auto inst = build_joint_instance(tape, f.correction, f.feedback, w, f.predicted,
                                           zero_e, f.pref, f.gt_distal, f.gt_anchor,
                                           f.obs_anchor, false, false);
    CHECK(inst.feedback_loss == 0.0);
    CHECK(tape.value(inst.objective).data[0] ==
          doctest::Approx((w.b + w.lambda) * inst.l1).epsilon(1e-9));

    // The second iteration must have used a zero error map: recount it.
    const TD cin = stack_maps<double>({&f.predicted, &zero_e});
    TD corrected = f.correction.forward(cin);
    for (std::size_t i = 0; i < corrected.numel(); ++i) corrected.data[i] += f.predicted.data[i];
    TD zero2 = TD::zeros(f.e_pre.shape);
    const TD cin2 = stack_maps<double>({&corrected, &zero2});
    TD corrected2 = f.correction.forward(cin2);
    for (std::size_t i = 0; i < corrected2.numel(); ++i)
        corrected2.data[i] += corrected.data[i];
    CHECK(inst.l2 == doctest::Approx(l2_distance(corrected2, f.gt_distal)).epsilon(1e-9));

    CHECK_THROWS_AS(f.build(tape, w, false, true), std::invalid_argument);
}

TEST_CASE("correction gradient of the joint objective passes finite differences") {
    Fixture f;
    const LossWeights<double> w;
    // train_feedback off: the objective is then an exact function of the
    // correction parameters, so finite differences applies directly.
    TapeT<double> tape;
    const auto inst = f.build(tape, w, true, false);
    tape.backward(inst.objective);
    NetGradsT<double> g = NetGradsT<double>::zeros_like(f.correction);
    g.accumulate(tape, inst.correction_bound);

    Rng coord_rng(2);
    const double worst = worst_param_fd(
        f.correction, g,
        [&] {
            TapeT<double> t2;
            return t2.value(f.build(t2, w, true, false).objective).data[0];
        },
        coord_rng, 24);
    CHECK(worst < 1e-3);
}

TEST_CASE("feedback gradient of the joint objective passes finite differences") {
    Fixture f;
    const LossWeights<double> w;
    TapeT<double> tape;
    const auto inst = f.build(tape, w, true, true);
    tape.backward(inst.objective);
    NetGradsT<double> g = NetGradsT<double>::zeros_like(f.feedback);
    g.accumulate(tape, inst.feedback_bound);

    // The feedback net sees a detached corrected map, so perturbing feedback
    // parameters changes the objective only through the reconstruction term.
    Rng coord_rng(3);
    const double worst = worst_param_fd(
        f.feedback, g,
        [&] {
            TapeT<double> t2;
            return t2.value(f.build(t2, w, true, true).objective).data[0];
        },
        coord_rng, 24);
    CHECK(worst < 1e-3);
}

TEST_CASE("the corrected map is detached from the feedback term") {
    Fixture f;
    const LossWeights<double> w;
    // Gradients for the correction net must be identical whether or not the
    // feedback term is in the objective: the reconstruction sees a detached
    // copy, so no gradient may leak back into the correction parameters.
    auto correction_grads = [&](bool train_fb) {
        TapeT<double> tape;
        const auto inst = f.build(tape, w, true, train_fb);
        tape.backward(inst.objective);
        NetGradsT<double> g = NetGradsT<double>::zeros_like(f.correction);
        g.accumulate(tape, inst.correction_bound);
        return g;
    };
    const NetGradsT<double> with_fb = correction_grads(true);
    const NetGradsT<double> without = correction_grads(false);
    for (std::size_t l = 0; l < with_fb.weights.size(); ++l) {
        CHECK(with_fb.weights[l].data == without.weights[l].data);
        CHECK(with_fb.biases[l].data == without.biases[l].data);
    }
}

TEST_CASE("adaptation loss recounts and needs no labels") {
    Fixture f;
    TapeT<double> tape;
    const auto inst = build_adapt_instance(tape, f.correction, f.feedback, f.predicted,
                                           f.e_pre, f.pref, f.obs_anchor);

    const TD cin = stack_maps<double>({&f.predicted, &f.e_pre});
    TD corrected = f.correction.forward(cin);
    for (std::size_t i = 0; i < corrected.numel(); ++i) corrected.data[i] += f.predicted.data[i];
    const TD gin = stack_maps<double>({&f.pref, &corrected});
    const TD recon = f.feedback.forward(gin);
    CHECK(tape.value(inst.loss).data[0] ==
          doctest::Approx(l2_distance(recon, f.obs_anchor)).epsilon(1e-9));
    for (std::size_t i = 0; i < corrected.numel(); ++i)
        CHECK(tape.value(inst.corrected).data[i] == doctest::Approx(corrected.data[i]));
}

TEST_CASE("adaptation gradients flow through the frozen feedback net") {
    Fixture f;
    TapeT<double> tape;
    const auto inst = build_adapt_instance(tape, f.correction, f.feedback, f.predicted,
                                           f.e_pre, f.pref, f.obs_anchor);
    tape.backward(inst.loss);
    NetGradsT<double> g = NetGradsT<double>::zeros_like(f.correction);
    g.accumulate(tape, inst.correction_bound);

    double gnorm = 0;
    for (const auto& wl : g.weights)
        for (double v : wl.data) gnorm += v * v;
    CHECK(gnorm > 0);  // the frozen net passes input gradients through

    Rng coord_rng(4);
    const double worst = worst_param_fd(
        f.correction, g,
        [&] {
            TapeT<double> t2;
            return t2
                .value(build_adapt_instance(t2, f.correction, f.feedback, f.predicted, f.e_pre,
                                            f.pref, f.obs_anchor)
                           .loss)
                .data[0];
        },
        coord_rng, 24);
    CHECK(worst < 1e-3);
}
