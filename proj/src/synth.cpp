#include "scai/synth.hpp"

#include <cmath>
#include <stdexcept>

namespace scai {

namespace {

constexpr float kPi = 3.14159265358979323846f;

void check_joint(const GroupSchema& s, int k, const char* what) {
    if (k < 0 || k >= s.keypoint_count)
        throw std::invalid_argument(std::string("schema: ") + what + " joint out of range");
}

}  // namespace

void GroupSchema::validate() const {
    if (keypoint_count <= 0) throw std::invalid_argument("schema: keypoint_count must be positive");
    if ((int)joint_names.size() != keypoint_count)
        throw std::invalid_argument("schema: joint_names size mismatch");
    if (groups.empty()) throw std::invalid_argument("schema: no groups");
    check_joint(*this, torso[0], "torso");
    check_joint(*this, torso[1], "torso");
    if (torso[0] == torso[1]) throw std::invalid_argument("schema: torso pair must be distinct");
    check_joint(*this, root_joint, "root");
    if (!(root_box.x_min <= root_box.x_max && root_box.y_min <= root_box.y_max))
        throw std::invalid_argument("schema: empty root box");

    std::vector<std::uint8_t> distal(keypoint_count, 0);
    for (const auto& g : groups) {
        check_joint(*this, g.distal, "group distal");
        if (g.proximals.size() < 2 || g.proximals.size() > 3)
            throw std::invalid_argument("schema: group needs 2 or 3 proximal joints");
        if (distal[g.distal]) throw std::invalid_argument("schema: joint is distal of two groups");
        distal[g.distal] = 1;
        for (int p : g.proximals) {
            check_joint(*this, p, "group proximal");
            if (p == g.distal)
                throw std::invalid_argument("schema: distal listed among proximals");
        }
    }
    // The anchor (first proximal) is the comparison target of the feedback
    // signal, so it must be a joint the simulator never occludes; other
    // proximals may be distals of earlier groups.
    for (const auto& g : groups)
        if (distal[g.proximals[0]])
            throw std::invalid_argument("schema: group anchor is another group's distal");

    if (bones.size() + 1 != (std::size_t)keypoint_count)
        throw std::invalid_argument("schema: bone count must be keypoint_count - 1");
    std::vector<std::uint8_t> placed(keypoint_count, 0);
    placed[root_joint] = 1;
    for (const auto& b : bones) {
        check_joint(*this, b.parent, "bone parent");
        check_joint(*this, b.child, "bone child");
        if (!placed[b.parent])
            throw std::invalid_argument("schema: bones not in topological order");
        if (placed[b.child]) throw std::invalid_argument("schema: joint placed twice");
        placed[b.child] = 1;
        if (!(b.len_min > 0.f && b.len_min <= b.len_max))
            throw std::invalid_argument("schema: bad bone length range");
        if (b.angle_halfwidth < 0.f)
            throw std::invalid_argument("schema: negative angle halfwidth");
    }
}

GroupSchema GroupSchema::coco_like() {
    GroupSchema s;
    s.name = "coco_like";
    s.keypoint_count = 12;
    s.joint_names = {"pelvis",  "chest",   "head",    "l_elbow", "l_wrist", "r_elbow",
                     "r_wrist", "l_knee",  "l_ankle", "r_knee",  "r_ankle", "nose"};
    s.torso = {0, 1};
    s.root_joint = 0;
    s.root_box = {25.f, 39.f, 30.f, 40.f};
    // The anchor (first proximal) is a joint near the distal that is never
    // itself occluded; the one-sided bend ranges below keep the distal's
    // position well determined by its proximals.
    s.groups = {
        {"head", 2, {1, 0}},      {"face", 11, {1, 2, 0}},  {"left_arm", 4, {3, 1, 0}},
        {"right_arm", 6, {5, 1, 0}}, {"left_leg", 8, {7, 0, 1}}, {"right_leg", 10, {9, 0, 1}},
    };
    s.bones = {
        {0, 1, 14.f, 20.f, false, -kPi / 2.f, 0.45f},  // pelvis -> chest
        {1, 2, 5.5f, 8.f, true, 0.f, 0.30f},           // chest -> head
        {2, 11, 2.5f, 4.f, true, 0.5f, 0.30f},         // head -> nose
        {1, 3, 6.f, 9.f, true, 2.0f, 0.90f},           // chest -> l_elbow
        {3, 4, 6.5f, 8.5f, true, 0.5f, 0.25f},         // l_elbow -> l_wrist
        {1, 5, 6.f, 9.f, true, -2.0f, 0.90f},          // chest -> r_elbow
        {5, 6, 6.5f, 8.5f, true, -0.5f, 0.25f},        // r_elbow -> r_wrist
        {0, 7, 7.f, 10.f, true, kPi - 0.25f, 0.45f},   // pelvis -> l_knee
        {7, 8, 7.f, 9.5f, true, 0.35f, 0.25f},         // l_knee -> l_ankle
        {0, 9, 7.f, 10.f, true, kPi + 0.25f, 0.45f},   // pelvis -> r_knee
        {9, 10, 7.f, 9.5f, true, -0.35f, 0.25f},       // r_knee -> r_ankle
    };
    s.validate();
    return s;
}

GroupSchema GroupSchema::crowdpose_like() {
    GroupSchema s;
    s.name = "crowdpose_like";
    s.keypoint_count = 10;
    s.joint_names = {"pelvis", "chest",  "l_elbow", "l_wrist", "r_elbow",
                     "r_wrist", "l_knee", "l_ankle", "r_knee",  "r_ankle"};
    s.torso = {0, 1};
    s.root_joint = 0;
    s.root_box = {25.f, 39.f, 30.f, 40.f};
    s.groups = {
        {"left_arm", 3, {2, 1, 0}},
        {"right_arm", 5, {4, 1, 0}},
        {"left_leg", 7, {6, 0, 1}},
        {"right_leg", 9, {8, 0, 1}},
    };
    s.bones = {
        {0, 1, 14.f, 20.f, false, -kPi / 2.f, 0.45f},
        {1, 2, 6.f, 9.f, true, 2.0f, 0.90f},
        {2, 3, 6.5f, 8.5f, true, 0.5f, 0.25f},
        {1, 4, 6.f, 9.f, true, -2.0f, 0.90f},
        {4, 5, 6.5f, 8.5f, true, -0.5f, 0.25f},
        {0, 6, 7.f, 10.f, true, kPi - 0.25f, 0.45f},
        {6, 7, 7.f, 9.5f, true, 0.35f, 0.25f},
        {0, 8, 7.f, 10.f, true, kPi + 0.25f, 0.45f},
        {8, 9, 7.f, 9.5f, true, -0.35f, 0.25f},
    };
    s.validate();
    return s;
}

GroupSchema GroupSchema::by_name(const std::string& name) {
    if (name == "coco_like") return coco_like();
    if (name == "crowdpose_like") return crowdpose_like();
    throw std::invalid_argument("unknown schema name: " + name);
}

NoiseConfig NoiseConfig::uniform_rate(const GroupSchema& schema, float rate, float prox_sigma,
                                      float dist_sigma, float shift_sigma) {
    NoiseConfig cfg;
    cfg.proximal_jitter_sigma = prox_sigma;
    cfg.distal_jitter_sigma = dist_sigma;
    cfg.occlusion_rate.assign(schema.group_count(), rate);
    cfg.occlusion_shift_sigma = shift_sigma;
    return cfg;
}

void NoiseConfig::validate(const GroupSchema& schema) const {
    if (!(proximal_jitter_sigma >= 0.f)) throw std::invalid_argument("noise: proximal sigma < 0");
    if (!(distal_jitter_sigma >= proximal_jitter_sigma))
        throw std::invalid_argument("noise: distal sigma must be >= proximal sigma");
    if (occlusion_rate.size() != schema.group_count())
        throw std::invalid_argument("noise: one occlusion rate per group required");
    for (float r : occlusion_rate)
        if (!(r >= 0.f && r <= 1.f)) throw std::invalid_argument("noise: occlusion rate outside [0,1]");
    if (!(occlusion_shift_sigma >= 0.f)) throw std::invalid_argument("noise: shift sigma < 0");
}

std::vector<Coord> sample_skeleton(const GroupSchema& schema, const HeatmapGeometry& geom,
                                   Rng& rng) {
    const float lo = 1.f;
    const float hi_x = (float)geom.width - 2.f;
    const float hi_y = (float)geom.height - 2.f;
    std::vector<Coord> joints(schema.keypoint_count);
    std::vector<float> bone_angle(schema.keypoint_count, 0.f);  // incoming angle per joint

    for (int attempt = 0; attempt < 100; ++attempt) {
        const float rx = (float)rng.uniform(schema.root_box.x_min, schema.root_box.x_max);
        const float ry = (float)rng.uniform(schema.root_box.y_min, schema.root_box.y_max);
        joints[schema.root_joint] = {rx, ry, true};
        bool ok = rx >= lo && rx <= hi_x && ry >= lo && ry <= hi_y;
        for (const auto& b : schema.bones) {
            const float len = (float)rng.uniform(b.len_min, b.len_max);
            float ang = b.angle_center +
                        (float)rng.uniform(-b.angle_halfwidth, b.angle_halfwidth);
            if (b.relative) ang += bone_angle[b.parent];
            bone_angle[b.child] = ang;
            const float x = joints[b.parent].x + len * std::cos(ang);
            const float y = joints[b.parent].y + len * std::sin(ang);
            joints[b.child] = {x, y, true};
            ok = ok && x >= lo && x <= hi_x && y >= lo && y <= hi_y;
        }
        if (ok) return joints;
    }
    // Pathological geometry or tiny maps: keep the last draw, clamped.
    for (auto& j : joints) {
        j.x = std::min(hi_x, std::max(lo, j.x));
        j.y = std::min(hi_y, std::max(lo, j.y));
    }
    return joints;
}

Sample simulate_baseline(const GroupSchema& schema, const std::vector<Coord>& gt,
                         const HeatmapGeometry& geom, const NoiseConfig& cfg, Rng& rng) {
    cfg.validate(schema);
    if ((int)gt.size() != schema.keypoint_count)
        throw std::invalid_argument("simulate_baseline: gt size mismatch");
    Sample s;
    s.gt = gt;
    s.base.resize(gt.size());
    s.attenuation.assign(gt.size(), 1.f);
    s.occluded.assign(gt.size(), 0);
    s.torso_len = torso_length(schema, gt);

    std::vector<int> group_of(schema.keypoint_count, -1);
    for (std::size_t gi = 0; gi < schema.group_count(); ++gi)
        group_of[schema.groups[gi].distal] = (int)gi;

    const float max_x = (float)geom.width - 1.f;
    const float max_y = (float)geom.height - 1.f;
    for (int k = 0; k < schema.keypoint_count; ++k) {
        const bool distal = group_of[k] >= 0;
        const float sigma = distal ? cfg.distal_jitter_sigma : cfg.proximal_jitter_sigma;
        float x = gt[k].x + sigma * (float)rng.normal();
        float y = gt[k].y + sigma * (float)rng.normal();
        if (distal) {
            const float rate = cfg.occlusion_rate[group_of[k]];
            if (rng.uniform() < rate) {
                s.occluded[k] = 1;
                x += cfg.occlusion_shift_sigma * (float)rng.normal();
                y += cfg.occlusion_shift_sigma * (float)rng.normal();
                s.attenuation[k] = (float)rng.uniform(kAttenuationMin, kAttenuationMax);
            }
        }
        s.base[k] = {std::min(max_x, std::max(0.f, x)), std::min(max_y, std::max(0.f, y)), true};
    }
    return s;
}

Sample make_sample(const GroupSchema& schema, const HeatmapGeometry& geom,
                   const NoiseConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const auto gt = sample_skeleton(schema, geom, rng);
    return simulate_baseline(schema, gt, geom, cfg, rng);
}

Heatmap baseline_heatmap(const Sample& s, int k, const HeatmapGeometry& geom) {
    Heatmap h = render_gaussian(s.base.at(k), geom);
    const float a = s.attenuation.at(k);
    if (a != 1.f)
        for (auto& v : h.values) v *= a;
    return h;
}

Heatmap gt_heatmap(const Sample& s, int k, const HeatmapGeometry& geom) {
    return render_gaussian(s.gt.at(k), geom);
}

float torso_length(const GroupSchema& schema, const std::vector<Coord>& gt) {
    const Coord& a = gt.at(schema.torso[0]);
    const Coord& b = gt.at(schema.torso[1]);
    const float dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace scai
