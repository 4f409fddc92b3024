#include "scai/json_io.hpp"

#include <stdexcept>

namespace scai {

void reject_unknown_keys(const ordered_json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
    if (!j.is_object()) throw std::runtime_error(where + ": expected an object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const auto& k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw std::runtime_error(where + ": unknown key \"" + item.key() + "\"");
    }
}

ordered_json geometry_to_json(const HeatmapGeometry& g) {
    return {{"width", g.width}, {"height", g.height}, {"sigma", g.sigma}};
}

HeatmapGeometry geometry_from_json(const ordered_json& j) {
    reject_unknown_keys(j, {"width", "height", "sigma"}, "heatmap");
    HeatmapGeometry g;
    g.width = j.at("width").get<int>();
    g.height = j.at("height").get<int>();
    g.sigma = j.at("sigma").get<float>();
    return g;
}

ordered_json schema_to_json(const GroupSchema& s) {
    ordered_json j;
    j["name"] = s.name;
    j["keypoint_count"] = s.keypoint_count;
    j["joint_names"] = s.joint_names;
    j["torso"] = {s.torso[0], s.torso[1]};
    j["root_joint"] = s.root_joint;
    j["root_box"] = {{"x_min", s.root_box.x_min},
                     {"x_max", s.root_box.x_max},
                     {"y_min", s.root_box.y_min},
                     {"y_max", s.root_box.y_max}};
    ordered_json groups = ordered_json::array();
    for (const auto& g : s.groups)
        groups.push_back({{"name", g.name}, {"distal", g.distal}, {"proximals", g.proximals}});
    j["groups"] = groups;
    ordered_json bones = ordered_json::array();
    for (const auto& b : s.bones)
        bones.push_back({{"parent", b.parent},
                         {"child", b.child},
                         {"len", {b.len_min, b.len_max}},
                         {"relative", b.relative},
                         {"angle_center", b.angle_center},
                         {"angle_halfwidth", b.angle_halfwidth}});
    j["bones"] = bones;
    return j;
}

GroupSchema schema_from_json(const ordered_json& j) {
    // Config files may name a built-in schema; manifests and checkpoints
    // always carry the full table.
    if (j.is_string()) return GroupSchema::by_name(j.get<std::string>());
    reject_unknown_keys(j,
                        {"name", "keypoint_count", "joint_names", "torso", "root_joint",
                         "root_box", "groups", "bones"},
                        "schema");
    GroupSchema s;
    s.name = j.at("name").get<std::string>();
    s.keypoint_count = j.at("keypoint_count").get<int>();
    s.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    const auto torso = j.at("torso");
    if (!torso.is_array() || torso.size() != 2)
        throw std::runtime_error("schema: torso must be a pair");
    s.torso = {torso[0].get<int>(), torso[1].get<int>()};
    s.root_joint = j.at("root_joint").get<int>();
    const auto& rb = j.at("root_box");
    reject_unknown_keys(rb, {"x_min", "x_max", "y_min", "y_max"}, "schema.root_box");
    s.root_box = {rb.at("x_min").get<float>(), rb.at("x_max").get<float>(),
                  rb.at("y_min").get<float>(), rb.at("y_max").get<float>()};
    for (const auto& g : j.at("groups")) {
        reject_unknown_keys(g, {"name", "distal", "proximals"}, "schema.groups[]");
        s.groups.push_back({g.at("name").get<std::string>(), g.at("distal").get<int>(),
                            g.at("proximals").get<std::vector<int>>()});
    }
    for (const auto& b : j.at("bones")) {
        reject_unknown_keys(b, {"parent", "child", "len", "relative", "angle_center",
                                "angle_halfwidth"},
                            "schema.bones[]");
        const auto len = b.at("len");
        if (!len.is_array() || len.size() != 2)
            throw std::runtime_error("schema: bone len must be [min,max]");
        s.bones.push_back({b.at("parent").get<int>(), b.at("child").get<int>(),
                           len[0].get<float>(), len[1].get<float>(),
                           b.at("relative").get<bool>(), b.at("angle_center").get<float>(),
                           b.at("angle_halfwidth").get<float>()});
    }
    s.validate();
    return s;
}

ordered_json noise_to_json(const NoiseConfig& n) {
    return {{"proximal_jitter_sigma", n.proximal_jitter_sigma},
            {"distal_jitter_sigma", n.distal_jitter_sigma},
            {"occlusion_rate", n.occlusion_rate},
            {"occlusion_shift_sigma", n.occlusion_shift_sigma}};
}

NoiseConfig noise_from_json(const ordered_json& j, int group_count) {
    reject_unknown_keys(j,
                        {"proximal_jitter_sigma", "distal_jitter_sigma", "occlusion_rate",
                         "occlusion_shift_sigma"},
                        "noise");
    NoiseConfig n;
    n.proximal_jitter_sigma = j.at("proximal_jitter_sigma").get<float>();
    n.distal_jitter_sigma = j.at("distal_jitter_sigma").get<float>();
    const ordered_json& rate = j.at("occlusion_rate");
    if (rate.is_number())  // one rate for every group
        n.occlusion_rate.assign((std::size_t)group_count, rate.get<float>());
    else
        n.occlusion_rate = rate.get<std::vector<float>>();
    n.occlusion_shift_sigma = j.at("occlusion_shift_sigma").get<float>();
    return n;
}

ordered_json dataset_config_to_json(const DatasetConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    j["heatmap"] = geometry_to_json(c.geom);
    j["schema"] = schema_to_json(c.schema);
    j["noise"] = {{"train", noise_to_json(c.train_noise)}, {"test", noise_to_json(c.test_noise)}};
    j["sizes"] = {{"train", c.train_size}, {"val", c.val_size}, {"test", c.test_size}};
    return j;
}

DatasetConfig dataset_config_from_json(const ordered_json& j) {
    reject_unknown_keys(j, {"seed", "heatmap", "schema", "noise", "sizes"}, "dataset");
    DatasetConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.geom = geometry_from_json(j.at("heatmap"));
    c.schema = schema_from_json(j.at("schema"));
    reject_unknown_keys(j.at("noise"), {"train", "test"}, "dataset.noise");
    const int groups = (int)c.schema.groups.size();
    c.train_noise = noise_from_json(j.at("noise").at("train"), groups);
    c.test_noise = noise_from_json(j.at("noise").at("test"), groups);
    const auto& sz = j.at("sizes");
    reject_unknown_keys(sz, {"train", "val", "test"}, "dataset.sizes");
    c.train_size = sz.at("train").get<int>();
    c.val_size = sz.at("val").get<int>();
    c.test_size = sz.at("test").get<int>();
    c.validate();
    return c;
}

}  // namespace scai
