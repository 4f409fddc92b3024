#include "scai/networks.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "scai/json_io.hpp"

namespace scai {

NetSpec NetSpec::standard(int in_channels, int hidden, int out_channels, int kernel,
                          const std::vector<int>& dilations) {
    if (dilations.empty()) throw std::invalid_argument("net spec: needs at least one layer");
    NetSpec s;
    s.in_channels = in_channels;
    for (std::size_t i = 0; i < dilations.size(); ++i) {
        const bool last = i + 1 == dilations.size();
        s.layers.push_back({last ? out_channels : hidden, kernel, dilations[i]});
    }
    return s;
}

NetAdam NetAdam::for_net(const ConvNet& net, const AdamConfig& cfg) {
    NetAdam a;
    a.cfg = cfg;
    for (const auto& w : net.weights) a.weights.push_back(AdamState(w.shape));
    for (const auto& b : net.biases) a.biases.push_back(AdamState(b.shape));
    return a;
}

void NetAdam::step(ConvNet& net, const NetGrads& grads) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        adam_step(net.weights[l], grads.weights[l], weights[l], cfg);
        adam_step(net.biases[l], grads.biases[l], biases[l], cfg);
    }
}

namespace {

// Per-net init seeds: (group, role) salted independently so adding a group
// or reordering roles cannot silently shift another net's initial weights.
std::uint64_t net_seed(std::uint64_t model_seed, std::size_t group, int role) {
    return mix_seed(mix_seed(model_seed, 0x6E65'7473ull), group * 8 + (std::uint64_t)role);
}

void hash_net(Fnv1a64& h, const ConvNet& net) {
    for (const auto& w : net.weights) h.update(w.data.data(), w.numel() * sizeof(float));
    for (const auto& b : net.biases) h.update(b.data.data(), b.numel() * sizeof(float));
}

void append_net(std::vector<float>& out, const ConvNet& net) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        out.insert(out.end(), net.weights[l].data.begin(), net.weights[l].data.end());
        out.insert(out.end(), net.biases[l].data.begin(), net.biases[l].data.end());
    }
}

void consume_net(const std::vector<float>& in, std::size_t& pos, ConvNet& net) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        auto& w = net.weights[l];
        if (pos + w.numel() > in.size()) throw std::runtime_error("model payload truncated");
        std::memcpy(w.data.data(), in.data() + pos, w.numel() * sizeof(float));
        pos += w.numel();
        auto& b = net.biases[l];
        if (pos + b.numel() > in.size()) throw std::runtime_error("model payload truncated");
        std::memcpy(b.data.data(), in.data() + pos, b.numel() * sizeof(float));
        pos += b.numel();
    }
}

}  // namespace

Model Model::init(const GroupSchema& schema, const HeatmapGeometry& geom,
                  const ModelHyper& hyper, std::uint64_t seed) {
    schema.validate();
    Model m;
    m.schema = schema;
    m.geom = geom;
    m.hyper = hyper;
    const NetSpec predictor_spec = NetSpec::standard(3, hyper.hidden, 1, hyper.kernel, hyper.dilations);
    const NetSpec feedback_spec = predictor_spec;
    const NetSpec correction_spec = NetSpec::standard(2, hyper.hidden, 1, hyper.kernel, hyper.dilations);
    for (std::size_t gi = 0; gi < schema.group_count(); ++gi) {
        GroupNets g;
        g.predictor = ConvNet::init(predictor_spec, net_seed(seed, gi, 0));
        g.feedback = ConvNet::init(feedback_spec, net_seed(seed, gi, 1));
        g.correction = ConvNet::init(correction_spec, net_seed(seed, gi, 2));
        // Untrained nets output exactly zero; in particular the correction
        // starts as a no-op on the prediction it is added to.
        g.predictor.zero_last_layer();
        g.feedback.zero_last_layer();
        g.correction.zero_last_layer();
        m.groups.push_back(std::move(g));
    }
    return m;
}

std::uint64_t Model::param_hash() const {
    Fnv1a64 h;
    for (const auto& g : groups) {
        hash_net(h, g.predictor);
        hash_net(h, g.feedback);
        hash_net(h, g.correction);
    }
    return h.digest();
}

std::uint64_t Model::predictor_param_hash() const {
    Fnv1a64 h;
    for (const auto& g : groups) hash_net(h, g.predictor);
    return h.digest();
}

void save_model(const std::string& dir, const std::string& name, const Model& model) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<float> payload;
    for (const auto& g : model.groups) {
        append_net(payload, g.predictor);
        append_net(payload, g.feedback);
        append_net(payload, g.correction);
    }
    const std::string bin_name = name + ".bin";
    {
        std::ofstream out(fs::path(dir) / bin_name, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write model payload");
        out.write(reinterpret_cast<const char*>(payload.data()),
                  (std::streamsize)(payload.size() * sizeof(float)));
        if (!out) throw std::runtime_error("failed writing model payload");
    }
    ordered_json header;
    header["format"] = "scai-lab-model";
    header["format_version"] = 1;
    header["heatmap"] = geometry_to_json(model.geom);
    header["schema"] = schema_to_json(model.schema);
    header["hyper"] = {{"hidden", model.hyper.hidden},
                       {"kernel", model.hyper.kernel},
                       {"dilations", model.hyper.dilations}};
    header["payload"] = bin_name;
    header["payload_floats"] = payload.size();
    header["param_digest"] = hex64(fnv1a64(payload.data(), payload.size() * sizeof(float)));
    std::ofstream out(fs::path(dir) / (name + ".json"), std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write model header");
    out << header.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing model header");
}

Model load_model(const std::string& dir, const std::string& name) {
    namespace fs = std::filesystem;
    std::ifstream hin(fs::path(dir) / (name + ".json"));
    if (!hin) throw std::runtime_error("cannot open model header " + name + ".json in " + dir);
    ordered_json header = ordered_json::parse(hin);
    if (header.value("format", "") != std::string("scai-lab-model"))
        throw std::runtime_error("not a model header");
    if (header.value("format_version", 0) != 1)
        throw std::runtime_error("unsupported model format version");

    ModelHyper hyper;
    hyper.hidden = header.at("hyper").at("hidden").get<int>();
    hyper.kernel = header.at("hyper").at("kernel").get<int>();
    hyper.dilations = header.at("hyper").at("dilations").get<std::vector<int>>();
    Model m = Model::init(schema_from_json(header.at("schema")),
                          geometry_from_json(header.at("heatmap")), hyper, 0);

    const auto bin_path = fs::path(dir) / header.at("payload").get<std::string>();
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open model payload " + bin_path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)),
                            std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(float) != 0) throw std::runtime_error("model payload misaligned");
    std::vector<float> payload(bytes.size() / sizeof(float));
    std::memcpy(payload.data(), bytes.data(), bytes.size());

    if (payload.size() != header.at("payload_floats").get<std::size_t>())
        throw std::runtime_error("model payload has wrong size");
    const std::string digest = hex64(fnv1a64(payload.data(), payload.size() * sizeof(float)));
    if (digest != header.at("param_digest").get<std::string>())
        throw std::runtime_error("model payload digest mismatch (corrupt checkpoint)");

    std::size_t pos = 0;
    for (auto& g : m.groups) {
        consume_net(payload, pos, g.predictor);
        consume_net(payload, pos, g.feedback);
        consume_net(payload, pos, g.correction);
    }
    if (pos != payload.size()) throw std::runtime_error("model payload has trailing data");
    return m;
}

namespace {

Tensor stack3(const Tensor* a, const Tensor* b, const Tensor* c, int h, int w) {
    Tensor out = Tensor::zeros({3, h, w});
    const std::size_t plane = (std::size_t)h * w;
    const Tensor* maps[3] = {a, b, c};
    for (int ch = 0; ch < 3; ++ch)
        if (maps[ch])
            std::memcpy(out.data.data() + ch * plane, maps[ch]->data.data(),
                        plane * sizeof(float));
    return out;
}

void check_map(const Tensor& t, int h, int w, const char* what) {
    if (t.shape != Shape{1, h, w})
        throw std::invalid_argument(std::string(what) + ": expected a [1,H,W] map");
}

}  // namespace

Tensor predictor_input(const GroupSchema& s, std::size_t gi, const std::vector<Tensor>& joint_maps) {
    const Group& g = s.group(gi);
    const Tensor& anchor = joint_maps.at(g.proximals[0]);
    const int h = anchor.shape[1], w = anchor.shape[2];
    const Tensor* second = &joint_maps.at(g.proximals[1]);
    const Tensor* third = g.proximals.size() > 2 ? &joint_maps.at(g.proximals[2]) : nullptr;
    return stack3(&anchor, second, third, h, w);
}

Tensor feedback_prefix(const GroupSchema& s, std::size_t gi, const std::vector<Tensor>& joint_maps) {
    const Group& g = s.group(gi);
    const Tensor& second = joint_maps.at(g.proximals[1]);
    const int h = second.shape[1], w = second.shape[2];
    const Tensor* third = g.proximals.size() > 2 ? &joint_maps.at(g.proximals[2]) : nullptr;
    Tensor out = Tensor::zeros({2, h, w});
    const std::size_t plane = (std::size_t)h * w;
    std::memcpy(out.data.data(), second.data.data(), plane * sizeof(float));
    if (third) std::memcpy(out.data.data() + plane, third->data.data(), plane * sizeof(float));
    return out;
}

Tensor feedback_input(const GroupSchema& s, std::size_t gi, const std::vector<Tensor>& joint_maps,
                   const Tensor& distal) {
    const Tensor prefix = feedback_prefix(s, gi, joint_maps);
    const int h = prefix.shape[1], w = prefix.shape[2];
    check_map(distal, h, w, "feedback_input distal");
    Tensor out = Tensor::zeros({3, h, w});
    const std::size_t plane = (std::size_t)h * w;
    std::memcpy(out.data.data(), prefix.data.data(), 2 * plane * sizeof(float));
    std::memcpy(out.data.data() + 2 * plane, distal.data.data(), plane * sizeof(float));
    return out;
}

Tensor correction_input(const Tensor& predicted, const Tensor& error_map) {
    const int h = predicted.shape.size() == 3 ? predicted.shape[1] : 0;
    const int w = predicted.shape.size() == 3 ? predicted.shape[2] : 0;
    check_map(predicted, h, w, "correction_input predicted");
    check_map(error_map, h, w, "correction_input error");
    Tensor out = Tensor::zeros({2, h, w});
    const std::size_t plane = (std::size_t)h * w;
    std::memcpy(out.data.data(), predicted.data.data(), plane * sizeof(float));
    std::memcpy(out.data.data() + plane, error_map.data.data(), plane * sizeof(float));
    return out;
}

std::vector<Tensor> render_base_maps(const Sample& s, const GroupSchema& schema,
                                     const HeatmapGeometry& geom) {
    std::vector<Tensor> maps;
    maps.reserve((std::size_t)schema.keypoint_count);
    for (int k = 0; k < schema.keypoint_count; ++k)
        maps.push_back(baseline_heatmap(s, k, geom).to_tensor());
    return maps;
}

Tensor render_gt_map(const Sample& s, int k, const HeatmapGeometry& geom) {
    return gt_heatmap(s, k, geom).to_tensor();
}

}  // namespace scai
