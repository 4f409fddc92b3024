#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "scai/common.hpp"
#include "scai/synth.hpp"

using namespace scai;

namespace {

NoiseConfig quiet(const GroupSchema& s) { return NoiseConfig::uniform_rate(s, 0.f, 0.f, 0.f, 0.f); }

double mean_err(const Sample& s, const std::vector<int>& ks) {
    double acc = 0;
    for (int k : ks)
        acc += std::hypot(s.base[k].x - s.gt[k].x, s.base[k].y - s.gt[k].y);
    return acc / ks.size();
}

}  // namespace

TEST_CASE("schemas validate and expose the documented shape") {
    for (const char* name : {"coco_like", "crowdpose_like"}) {
        const GroupSchema s = GroupSchema::by_name(name);
        s.validate();
        CHECK((int)s.joint_names.size() == s.keypoint_count);
        CHECK(s.bones.size() == std::size_t(s.keypoint_count) - 1);  // a tree
        for (const auto& g : s.groups) {
            CHECK(g.proximals.size() >= 2);
            CHECK(g.proximals.size() <= 3);
            CHECK(!s.is_distal(g.proximals[0]));  // the anchor is always observable
        }
    }
    CHECK(GroupSchema::coco_like().keypoint_count == 12);
    CHECK(GroupSchema::coco_like().group_count() == 6);
    CHECK(GroupSchema::crowdpose_like().keypoint_count == 10);
    CHECK(GroupSchema::crowdpose_like().group_count() == 4);
    CHECK_THROWS_AS(GroupSchema::by_name("mpii"), std::invalid_argument);
}

TEST_CASE("skeleton sampling is deterministic and in bounds") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    Rng a(42), b(42);
    const auto pose1 = sample_skeleton(schema, geom, a);
    const auto pose2 = sample_skeleton(schema, geom, b);
    REQUIRE(pose1.size() == std::size_t(schema.keypoint_count));
    for (std::size_t k = 0; k < pose1.size(); ++k) {
        CHECK(pose1[k].x == pose2[k].x);
        CHECK(pose1[k].y == pose2[k].y);
    }

    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const auto pose = sample_skeleton(schema, geom, rng);
        for (const auto& c : pose) {
            CHECK(c.x >= 1.f);
            CHECK(c.x <= geom.width - 2.f);
            CHECK(c.y >= 1.f);
            CHECK(c.y <= geom.height - 2.f);
            CHECK(c.visible);
        }
    }
}

TEST_CASE("bone lengths respect their configured ranges") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    Rng rng(11);
    int clamped = 0;
    for (int i = 0; i < 2000; ++i) {
        const auto pose = sample_skeleton(schema, geom, rng);
        bool exact = true;
        for (const auto& b : schema.bones) {
            const float len = std::hypot(pose[b.child].x - pose[b.parent].x,
                                         pose[b.child].y - pose[b.parent].y);
            if (len < b.len_min - 1e-3f || len > b.len_max + 1e-3f) exact = false;
        }
        if (!exact) ++clamped;  // the rare clamp fallback may shorten a bone
    }
    CHECK(clamped < 2000 / 100);
}

TEST_CASE("noise-free baseline matches ground truth after decode") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
        const Sample s = make_sample(schema, geom, quiet(schema), seed);
        for (int k = 0; k < schema.keypoint_count; ++k) {
            CHECK(s.base[k].x == doctest::Approx(s.gt[k].x).epsilon(1e-6));
            CHECK(s.base[k].y == doctest::Approx(s.gt[k].y).epsilon(1e-6));
            CHECK(s.attenuation[k] == 1.f);
            CHECK(!s.occluded[k]);
            const auto p = decode_peak(baseline_heatmap(s, k, geom));
            REQUIRE(p.has_value());
            CHECK(std::abs(p->coord.x - s.gt[k].x) <= 0.5f);
            CHECK(std::abs(p->coord.y - s.gt[k].y) <= 0.5f);
        }
    }
}

TEST_CASE("distal keypoints carry more jitter than proximal ones") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    const NoiseConfig cfg = NoiseConfig::uniform_rate(schema, 0.f, 0.8f, 2.0f, 0.f);
    std::vector<int> distals, proximals;
    for (int k = 0; k < schema.keypoint_count; ++k)
        (schema.is_distal(k) ? distals : proximals).push_back(k);
    double derr = 0, perr = 0;
    for (int i = 0; i < 1000; ++i) {
        const Sample s = make_sample(schema, geom, cfg, 1000 + i);
        derr += mean_err(s, distals);
        perr += mean_err(s, proximals);
    }
    CHECK(derr / 1000 > 2.0 * (perr / 1000));
    CHECK(perr > 0);
}

TEST_CASE("occlusion hits every group distal at rate one") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    const NoiseConfig cfg = NoiseConfig::uniform_rate(schema, 1.f, 0.f, 0.f, 6.f);
    for (int i = 0; i < 50; ++i) {
        const Sample s = make_sample(schema, geom, cfg, 77 + i);
        for (int k = 0; k < schema.keypoint_count; ++k) {
            if (schema.is_distal(k)) {
                CHECK(s.occluded[k]);
                CHECK(s.attenuation[k] >= kAttenuationMin);
                CHECK(s.attenuation[k] <= kAttenuationMax);
                const auto p = decode_peak(baseline_heatmap(s, k, geom));
                REQUIRE(p.has_value());
                CHECK(p->confidence == doctest::Approx(s.attenuation[k]).epsilon(1e-5));
            } else {
                CHECK(!s.occluded[k]);
                CHECK(s.attenuation[k] == 1.f);
            }
        }
    }
}

TEST_CASE("occlusion rate is honored per group") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    NoiseConfig cfg = NoiseConfig::uniform_rate(schema, 0.f, 0.f, 0.f, 6.f);
    cfg.occlusion_rate[0] = 0.4f;  // only the head group's distal
    const int head_distal = schema.group(0).distal;
    int hits = 0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
        const Sample s = make_sample(schema, geom, cfg, 9000 + i);
        hits += s.occluded[head_distal] ? 1 : 0;
        for (int k = 0; k < schema.keypoint_count; ++k)
            if (k != head_distal) CHECK(!s.occluded[k]);
    }
    CHECK(hits / double(n) == doctest::Approx(0.4).epsilon(0.08));
}

TEST_CASE("same seed reproduces a sample exactly") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    const NoiseConfig cfg = NoiseConfig::uniform_rate(schema, 0.3f, 0.8f, 2.0f, 6.f);
    const Sample a = make_sample(schema, geom, cfg, 123456);
    const Sample b = make_sample(schema, geom, cfg, 123456);
    REQUIRE(a.gt.size() == b.gt.size());
    for (std::size_t k = 0; k < a.gt.size(); ++k) {
        CHECK(a.gt[k].x == b.gt[k].x);
        CHECK(a.gt[k].y == b.gt[k].y);
        CHECK(a.base[k].x == b.base[k].x);
        CHECK(a.base[k].y == b.base[k].y);
        CHECK(a.base[k].visible == b.base[k].visible);
    }
    CHECK(a.attenuation == b.attenuation);
    CHECK(a.occluded == b.occluded);
    CHECK(a.torso_len == b.torso_len);

    const Sample c = make_sample(schema, geom, cfg, 123457);
    bool differs = false;
    for (std::size_t k = 0; k < a.gt.size(); ++k)
        differs = differs || a.gt[k].x != c.gt[k].x || a.gt[k].y != c.gt[k].y;
    CHECK(differs);
}

TEST_CASE("torso length is the configured reference pair's distance") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    const Sample s = make_sample(schema, geom, quiet(schema), 5);
    const auto& [a, b] = schema.torso;
    CHECK(s.torso_len == doctest::Approx(std::hypot(s.gt[a].x - s.gt[b].x,
                                                    s.gt[a].y - s.gt[b].y)));
    CHECK(s.torso_len == torso_length(schema, s.gt));
    CHECK(s.torso_len > 0.f);
}

TEST_CASE("harder noise lowers baseline pck") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    const NoiseConfig easy = NoiseConfig::uniform_rate(schema, 0.12f, 0.8f, 2.0f, 6.f);
    const NoiseConfig hard = NoiseConfig::uniform_rate(schema, 0.35f, 1.2f, 3.2f, 9.f);
    auto mean_pck = [&](const NoiseConfig& cfg, std::uint64_t salt) {
        double acc = 0;
        int n = 0;
        for (int i = 0; i < 400; ++i) {
            const Sample s = make_sample(schema, geom, cfg, mix_seed(salt, i));
            const auto p = pck(s.base, s.gt, s.torso_len, 0.1);
            if (p) acc += *p, ++n;
        }
        return acc / n;
    };
    const double easy_pck = mean_pck(easy, 10);
    const double hard_pck = mean_pck(hard, 10);
    CHECK(easy_pck > hard_pck + 0.05);
    CHECK(hard_pck > 0.1);  // still far from broken
}

TEST_CASE("distal baseline pck trails proximal baseline pck") {
    const GroupSchema schema = GroupSchema::coco_like();
    const HeatmapGeometry geom;
    const NoiseConfig cfg = NoiseConfig::uniform_rate(schema, 0.35f, 1.2f, 3.2f, 9.f);
    int dhit = 0, dtot = 0, phit = 0, ptot = 0;
    for (int i = 0; i < 1000; ++i) {
        const Sample s = make_sample(schema, geom, cfg, mix_seed(21, i));
        for (int k = 0; k < schema.keypoint_count; ++k) {
            const bool hit = std::hypot(s.base[k].x - s.gt[k].x, s.base[k].y - s.gt[k].y) <=
                             0.1 * s.torso_len;
            if (schema.is_distal(k))
                ++dtot, dhit += hit;
            else
                ++ptot, phit += hit;
        }
    }
    CHECK(double(dhit) / dtot < double(phit) / ptot - 0.1);
}

TEST_CASE("noise config validation") {
    const GroupSchema schema = GroupSchema::coco_like();
    NoiseConfig bad = NoiseConfig::uniform_rate(schema, 0.5f, 1.f, 2.f, 3.f);
    bad.occlusion_rate.pop_back();
    CHECK_THROWS_AS(bad.validate(schema), std::invalid_argument);
    NoiseConfig neg = NoiseConfig::uniform_rate(schema, 0.5f, 1.f, 2.f, 3.f);
    neg.occlusion_rate[2] = -0.1f;
    CHECK_THROWS_AS(neg.validate(schema), std::invalid_argument);
    NoiseConfig over = NoiseConfig::uniform_rate(schema, 0.5f, 1.f, 2.f, 3.f);
    over.occlusion_rate[1] = 1.5f;
    CHECK_THROWS_AS(over.validate(schema), std::invalid_argument);
}
