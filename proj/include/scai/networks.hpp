#pragma once

// Small dilated conv networks and the per-group model triple:
//   predictor  (proximal maps -> distal map)
//   feedback   (proximal maps + distal map -> anchor map)
//   correction (distal map + error map -> additive residual)
// All stride-1, same-padding, square kernels; dilations grow the receptive
// field enough to cover anchor-to-distal distances on a 64x64 map.

#include <cstdint>
#include <string>
#include <vector>

#include "scai/adam.hpp"
#include "scai/common.hpp"
#include "scai/schema.hpp"
#include "scai/synth.hpp"
#include "scai/tape.hpp"

namespace scai {

struct ConvLayerSpec {
    int out_channels = 16;
    int kernel = 3;
    int dilation = 1;
};

struct NetSpec {
    int in_channels = 0;
    std::vector<ConvLayerSpec> layers;  // ReLU between layers, none after last

    static NetSpec standard(int in_channels, int hidden, int out_channels, int kernel,
                            const std::vector<int>& dilations);
    std::size_t layer_count() const { return layers.size(); }
};

template <typename T>
struct ConvNetT {
    NetSpec spec;
    std::vector<TensorT<T>> weights;  // [Cout,Cin,K,K] per layer
    std::vector<TensorT<T>> biases;   // [Cout] per layer

    static ConvNetT init(const NetSpec& spec, std::uint64_t seed) {
        ConvNetT net;
        net.spec = spec;
        Rng rng(seed);
        int cin = spec.in_channels;
        for (const auto& l : spec.layers) {
            const double stddev = std::sqrt(2.0 / ((double)cin * l.kernel * l.kernel));
            TensorT<T> w = TensorT<T>::zeros({l.out_channels, cin, l.kernel, l.kernel});
            for (auto& v : w.data) v = (T)(stddev * rng.normal());
            net.weights.push_back(std::move(w));
            net.biases.push_back(TensorT<T>::zeros({l.out_channels}));
            cin = l.out_channels;
        }
        return net;
    }

    // Zeroing the last layer makes the net's initial output identically zero;
    // used for the correction net so training starts from "no correction".
    void zero_last_layer() {
        for (auto& v : weights.back().data) v = T(0);
        for (auto& v : biases.back().data) v = T(0);
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += w.numel();
        for (const auto& b : biases) n += b.numel();
        return n;
    }

    TensorT<T> forward(const TensorT<T>& in) const {
        TensorT<T> x;
        conv2d_forward(in, weights[0], biases[0], spec.layers[0].dilation, x);
        for (std::size_t l = 1; l < weights.size(); ++l) {
            for (auto& v : x.data) v = v > T(0) ? v : T(0);
            TensorT<T> y;
            conv2d_forward(x, weights[l], biases[l], spec.layers[l].dilation, y);
            x = std::move(y);
        }
        return x;
    }

    struct Bound {
        std::vector<Var> weights, biases;
        Var out;
    };

    // Binds parameters to the tape (gradients only when trainable) and runs
    // the forward pass starting from `in`.
    Bound forward_on_tape(TapeT<T>& tape, Var in, bool trainable) const {
        Bound b;
        Var x = in;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (l > 0) x = tape.relu(x);
            const Var w = tape.input(weights[l], trainable);
            const Var bias = tape.input(biases[l], trainable);
            b.weights.push_back(w);
            b.biases.push_back(bias);
            x = tape.conv2d(x, w, bias, spec.layers[l].dilation);
        }
        b.out = x;
        return b;
    }

    template <typename U>
    ConvNetT<U> cast() const {
        ConvNetT<U> out;
        out.spec = spec;
        for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<U>());
        return out;
    }
};

using ConvNet = ConvNetT<float>;

template <typename T>
struct NetGradsT {
    std::vector<TensorT<T>> weights, biases;

    static NetGradsT zeros_like(const ConvNetT<T>& net) {
        NetGradsT g;
        for (const auto& w : net.weights) g.weights.push_back(TensorT<T>::zeros(w.shape));
        for (const auto& b : net.biases) g.biases.push_back(TensorT<T>::zeros(b.shape));
        return g;
    }

    void accumulate(TapeT<T>& tape, const typename ConvNetT<T>::Bound& bound) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            const auto& gw = tape.grad(bound.weights[l]);
            for (std::size_t i = 0; i < gw.numel(); ++i) weights[l].data[i] += gw.data[i];
            const auto& gb = tape.grad(bound.biases[l]);
            for (std::size_t i = 0; i < gb.numel(); ++i) biases[l].data[i] += gb.data[i];
        }
    }

    void add(const NetGradsT& other) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (std::size_t i = 0; i < weights[l].numel(); ++i)
                weights[l].data[i] += other.weights[l].data[i];
            for (std::size_t i = 0; i < biases[l].numel(); ++i)
                biases[l].data[i] += other.biases[l].data[i];
        }
    }

    void scale(T s) {
        for (auto& w : weights)
            for (auto& v : w.data) v *= s;
        for (auto& b : biases)
            for (auto& v : b.data) v *= s;
    }
};

using NetGrads = NetGradsT<float>;

struct NetAdam {
    AdamConfig cfg;
    std::vector<AdamState> weights, biases;

    static NetAdam for_net(const ConvNet& net, const AdamConfig& cfg);
    void step(ConvNet& net, const NetGrads& grads);
};

struct ModelHyper {
    int hidden = 16;
    int kernel = 3;
    std::vector<int> dilations = {1, 3, 6, 9};
};

struct GroupNets {
    ConvNet predictor;
    ConvNet feedback;
    ConvNet correction;  // last layer zero-initialized
};

struct Model {
    GroupSchema schema;
    HeatmapGeometry geom;
    ModelHyper hyper;
    std::vector<GroupNets> groups;

    static Model init(const GroupSchema& schema, const HeatmapGeometry& geom,
                      const ModelHyper& hyper, std::uint64_t seed);
    std::uint64_t param_hash() const;
    std::uint64_t predictor_param_hash() const;
};

// Checkpoints are a JSON header plus a little-endian f32 payload whose
// digest is recorded in the header; loads verify it, so corruption fails
// loudly instead of producing a silently different model.
void save_model(const std::string& dir, const std::string& name, const Model& model);
Model load_model(const std::string& dir, const std::string& name);

// Channel stacking --------------------------------------------------------
// Predictor input:  [anchor, second proximal, third proximal or zeros]
// Feedback input:   [second proximal, third proximal or zeros, distal]
// Correction input: [predicted distal, error map]
// Fixed channel counts keep one architecture across 2- and 3-proximal groups.

Tensor predictor_input(const GroupSchema& s, std::size_t gi, const std::vector<Tensor>& joint_maps);
// The constant proximal prefix of the feedback stack (channels 0..1).
Tensor feedback_prefix(const GroupSchema& s, std::size_t gi, const std::vector<Tensor>& joint_maps);
Tensor feedback_input(const GroupSchema& s, std::size_t gi, const std::vector<Tensor>& joint_maps,
                   const Tensor& distal);
Tensor correction_input(const Tensor& predicted, const Tensor& error_map);

// One rendered baseline map per joint, attenuation applied.
std::vector<Tensor> render_base_maps(const Sample& s, const GroupSchema& schema,
                                     const HeatmapGeometry& geom);
Tensor render_gt_map(const Sample& s, int k, const HeatmapGeometry& geom);

}  // namespace scai
