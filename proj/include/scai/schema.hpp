#pragma once

// Keypoint group schema and the articulated-figure model that generates
// poses. Figures are sampled as a kinematic tree: a root placed uniformly in
// an inset box, then bones with lengths and angles drawn from per-bone
// ranges. Angles can be absolute or relative to the parent bone; relative
// bends with a one-sided range keep chains "bending one way", which makes a
// group's anchor joint recoverable from its neighbors plus the distal.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scai/heatmap.hpp"

namespace scai {

struct Group {
    std::string name;
    int distal = -1;
    // proximals[0] is the anchor: the joint the feedback network is asked to
    // reconstruct. Two or three entries.
    std::vector<int> proximals;
};

struct Bone {
    int parent = -1;
    int child = -1;
    float len_min = 0.f, len_max = 0.f;
    // When relative, the angle is measured against the parent joint's
    // incoming bone; the root's children use absolute angles regardless.
    bool relative = false;
    float angle_center = 0.f;
    float angle_halfwidth = 0.f;
};

struct RootBox {
    float x_min = 0.f, x_max = 0.f, y_min = 0.f, y_max = 0.f;
};

struct GroupSchema {
    std::string name;
    int keypoint_count = 0;
    std::vector<std::string> joint_names;
    std::vector<Group> groups;
    std::array<int, 2> torso{0, 1};  // reference-length pair for PCK
    int root_joint = 0;
    RootBox root_box;
    std::vector<Bone> bones;  // topologically ordered

    // True when joint k is the distal of some group.
    bool is_distal(int k) const {
        for (const auto& g : groups)
            if (g.distal == k) return true;
        return false;
    }
    const Group& group(std::size_t gi) const { return groups[gi]; }
    std::size_t group_count() const { return groups.size(); }

    void validate() const;

    // 12 joints, 6 groups (head, face, arms, legs); the default.
    static GroupSchema coco_like();
    // 10 joints, 4 groups (arms, legs); no head chain.
    static GroupSchema crowdpose_like();

    static GroupSchema by_name(const std::string& name);
};

struct NoiseConfig {
    float proximal_jitter_sigma = 0.8f;
    float distal_jitter_sigma = 2.0f;
    // One rate per group, applied to that group's distal keypoint.
    std::vector<float> occlusion_rate;
    // Extra displacement applied to occluded keypoints on top of jitter.
    float occlusion_shift_sigma = 6.0f;

    static NoiseConfig uniform_rate(const GroupSchema& schema, float rate, float prox_sigma,
                                    float dist_sigma, float shift_sigma);
    void validate(const GroupSchema& schema) const;
};

// Occluded peaks keep a fraction of their height drawn from this range.
inline constexpr float kAttenuationMin = 0.3f;
inline constexpr float kAttenuationMax = 0.7f;

struct Sample {
    std::vector<Coord> gt;
    std::vector<Coord> base;        // baseline-detector peak locations
    std::vector<float> attenuation; // 1 when unoccluded
    std::vector<std::uint8_t> occluded;
    float torso_len = 0.f;
};

}  // namespace scai
