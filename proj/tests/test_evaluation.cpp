#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "scai/evaluation.hpp"

using namespace scai;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    DatasetBundle ds;
    TrainConfig tcfg;
    Model model;

    Fixture() {
        DatasetConfig dc;
        dc.schema = GroupSchema::crowdpose_like();
        dc.geom = HeatmapGeometry{32, 32, 2.f};
        dc.train_noise = NoiseConfig::uniform_rate(dc.schema, 0.12f, 0.8f, 2.0f, 6.f);
        dc.test_noise = NoiseConfig::uniform_rate(dc.schema, 0.35f, 1.2f, 3.2f, 9.f);
        dc.train_size = 48;
        dc.val_size = 16;
        dc.test_size = 64;
        dc.seed = 8;
        ds = make_dataset(dc);
        tcfg.pretrain_epochs = 2;
        tcfg.joint_epochs = 1;
        tcfg.batch_size = 16;
        tcfg.seed = 13;
        ModelHyper hyper;
        hyper.hidden = 8;
        hyper.dilations = {1, 3};
        model = Model::init(dc.schema, dc.geom, hyper, model_init_seed(tcfg));
        train_all_stages(model, ds, tcfg);
    }
};

const Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("pearson on hand-checked series") {
    CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
    CHECK(pearson({1, 2, 3}, {6, 4, 2}) == doctest::Approx(-1.0));
    CHECK(pearson({1, 2, 3}, {5, 5, 5}) == 0.0);  // zero variance

    // Recount against the textbook formula on an arbitrary series.
    const std::vector<double> x = {0.3, -1.2, 2.5, 0.9, -0.4};
    const std::vector<double> y = {1.1, 0.7, -0.3, 2.2, 0.5};
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) sx += x[i], sy += y[i];
    const double mx = sx / x.size(), my = sy / y.size();
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx) * (x[i] - mx);
        dy += (y[i] - my) * (y[i] - my);
    }
    CHECK(pearson(x, y) == doctest::Approx(num / std::sqrt(dx * dy)).epsilon(1e-9));

    CHECK_THROWS_AS(pearson({1, 2}, {1}), std::invalid_argument);
    CHECK_THROWS_AS(pearson({1}, {1}), std::invalid_argument);
}

TEST_CASE("evaluation records recount against direct inference") {
    const auto& f = fixture();
    const std::vector<Sample> subset(f.ds.test.begin(), f.ds.test.begin() + 6);
    const auto records = evaluate_sci(f.model, subset);
    const std::size_t groups = f.ds.cfg.schema.group_count();
    REQUIRE(records.size() == subset.size() * groups);

    for (const auto& rec : records) {
        const Sample& s = subset[rec.sample];
        const auto maps = render_observed_maps(UnlabeledSample::from(s), f.ds.cfg.schema,
                                               f.ds.cfg.geom);
        const GroupResult g = sci_infer_group(f.model, rec.group, maps);
        CHECK(rec.e_pre == g.e_pre);
        CHECK(rec.e_post == g.e_post);
        const Group& grp = f.ds.cfg.schema.group(rec.group);
        REQUIRE(g.corrected_peak.has_value());
        const float dx = g.corrected_peak->coord.x - s.gt[grp.distal].x;
        const float dy = g.corrected_peak->coord.y - s.gt[grp.distal].y;
        CHECK(rec.err_corr == doctest::Approx(std::hypot(dx, dy)).epsilon(1e-5));
        CHECK(rec.hit_corr == (rec.err_corr <= 0.1 * s.torso_len ? 1 : 0));
        CHECK(rec.torso == s.torso_len);
        CHECK(rec.occluded == s.occluded[grp.distal]);
    }
}

TEST_CASE("distal pck recounts from the records") {
    const auto& f = fixture();
    const std::vector<Sample> subset(f.ds.test.begin(), f.ds.test.begin() + 12);
    const auto records = evaluate_sci(f.model, subset);
    double base = 0, pred = 0, corr = 0;
    for (const auto& r : records) base += r.hit_base, pred += r.hit_pred, corr += r.hit_corr;
    CHECK(distal_pck(records, PeakKind::base) == doctest::Approx(base / records.size()));
    CHECK(distal_pck(records, PeakKind::predicted) == doctest::Approx(pred / records.size()));
    CHECK(distal_pck(records, PeakKind::corrected) == doctest::Approx(corr / records.size()));

    double pre = 0, post = 0;
    for (const auto& r : records) pre += r.e_pre, post += r.e_post;
    CHECK(mean_self_error(records, false) == doctest::Approx(pre / records.size()));
    CHECK(mean_self_error(records, true) == doctest::Approx(post / records.size()));
}

TEST_CASE("threaded evaluation is identical to sequential") {
    const auto& f = fixture();
    const std::vector<Sample> subset(f.ds.test.begin(), f.ds.test.begin() + 8);
    EvalOptions seq, par;
    par.threads = 4;
    const auto a = evaluate_sci(f.model, subset, seq);
    const auto b = evaluate_sci(f.model, subset, par);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].e_post == b[i].e_post);
        CHECK(a[i].err_corr == b[i].err_corr);
    }
}

TEST_CASE("correlation batches drop the trailing partial and mark validity") {
    const auto& f = fixture();
    const auto records = evaluate_sci(f.model, f.ds.test);  // 64 samples
    const CorrelationReport by10 = correlation_report(records, 10);
    CHECK(by10.rows.size() == 6);
    CHECK(!by10.valid);
    const CorrelationReport by2 = correlation_report(records, 2);
    CHECK(by2.rows.size() == 32);
    CHECK(by2.valid);

    // Recount one batch's means from the raw records.
    const std::size_t groups = f.ds.cfg.schema.group_count();
    double e = 0, hit = 0;
    std::size_t n = 0;
    for (const auto& r : records)
        if (r.sample >= 10 && r.sample < 20) e += r.e_post, hit += r.hit_corr, ++n;
    REQUIRE(n == 10 * groups);
    CHECK(by10.rows[1].mean_e_post == doctest::Approx(e / n).epsilon(1e-9));
    CHECK(by10.rows[1].pck_corrected == doctest::Approx(hit / n).epsilon(1e-9));

    // The headline figure is the Pearson correlation of those batch series.
    std::vector<double> xs, ys;
    for (const auto& row : by10.rows) xs.push_back(row.mean_e_post), ys.push_back(row.pck_corrected);
    CHECK(by10.r_post_corrected == doctest::Approx(pearson(xs, ys)).epsilon(1e-12));

    CHECK_THROWS_AS(correlation_report(records, 0), std::invalid_argument);
}

TEST_CASE("local search spends counted feedback evaluations") {
    const auto& f = fixture();
    const std::vector<Sample> subset(f.ds.test.begin(), f.ds.test.begin() + 10);
    SearchOptions opts;
    const auto records = local_search_refine(f.model, subset, opts);
    REQUIRE(records.size() == subset.size() * f.ds.cfg.schema.group_count());
    for (const auto& r : records) {
        CHECK(r.evals >= 1);                  // the start candidate is always scored
        CHECK(r.evals <= 1 + 8 * opts.steps); // one ring per round
        CHECK(r.cost >= 0.f);
        CHECK(std::isfinite(r.err));
    }
}

TEST_CASE("zero-round search scores only the predictor's decode") {
    const auto& f = fixture();
    const std::vector<Sample> subset(f.ds.test.begin(), f.ds.test.begin() + 6);
    SearchOptions none;
    none.steps = 0;
    const auto records = local_search_refine(f.model, subset, none);
    const GroupSchema& schema = f.ds.cfg.schema;
    for (const auto& r : records) {
        CHECK(r.evals == 1);
        // The reported error must be the predictor decode's distance.
        const Sample& s = subset[r.sample];
        const auto maps = render_observed_maps(UnlabeledSample::from(s), schema, f.ds.cfg.geom);
        const GroupResult g = sci_infer_group(f.model, r.group, maps);
        REQUIRE(g.predicted_peak.has_value());
        const Group& grp = schema.group(r.group);
        const float want = std::hypot(g.predicted_peak->coord.x - s.gt[grp.distal].x,
                                      g.predicted_peak->coord.y - s.gt[grp.distal].y);
        CHECK(r.err == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("more search rounds never increase the final cost") {
    const auto& f = fixture();
    const std::vector<Sample> subset(f.ds.test.begin(), f.ds.test.begin() + 8);
    SearchOptions s0, s2, s5;
    s0.steps = 0;
    s2.steps = 2;
    s5.steps = 5;
    const auto r0 = local_search_refine(f.model, subset, s0);
    const auto r2 = local_search_refine(f.model, subset, s2);
    const auto r5 = local_search_refine(f.model, subset, s5);
    for (std::size_t i = 0; i < r0.size(); ++i) {
        CHECK(r2[i].cost <= r0[i].cost);
        CHECK(r5[i].cost <= r2[i].cost);
    }
}

TEST_CASE("adaptation curves agree with plain evaluation at epoch zero") {
    const auto& f = fixture();
    const std::vector<Sample> subset(f.ds.test.begin(), f.ds.test.begin() + 16);
    AdaptConfig cfg;
    cfg.epochs = 2;
    cfg.lr = 1e-3;
    const auto curves = adaptation_curves(f.model, subset, cfg, 8);
    REQUIRE(curves.size() == 2);
    for (const auto& c : curves) {
        REQUIRE(c.self_error.size() == 3);
        REQUIRE(c.pck.size() == 3);
    }

    const std::vector<Sample> first_batch(subset.begin(), subset.begin() + 8);
    const auto records = evaluate_sci(f.model, first_batch);
    CHECK(curves[0].self_error[0] ==
          doctest::Approx(mean_self_error(records, true)).epsilon(1e-6));
    CHECK(curves[0].pck[0] == doctest::Approx(distal_pck(records, PeakKind::corrected)));
}

TEST_CASE("batch pck recounts decoded hits") {
    const auto& f = fixture();
    const GroupSchema& schema = f.ds.cfg.schema;
    const std::vector<Sample> batch(f.ds.test.begin(), f.ds.test.begin() + 4);
    const std::size_t groups = schema.group_count();
    std::vector<std::optional<DecodedPeak>> decoded(batch.size() * groups);
    int expect_hits = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
        for (std::size_t gi = 0; gi < groups; ++gi) {
            const int k = schema.group(gi).distal;
            if ((i + gi) % 3 == 0) {
                decoded[i * groups + gi] = DecodedPeak{batch[i].gt[k], 1.f};  // exact hit
                ++expect_hits;
            } else if ((i + gi) % 3 == 1) {
                Coord off = batch[i].gt[k];
                off.x += 30.f;  // far miss on a 32-wide map
                decoded[i * groups + gi] = DecodedPeak{off, 1.f};
            }  // else: no decode, counts as a miss
        }
    CHECK(batch_pck(decoded, batch, schema, 0.1) ==
          doctest::Approx(double(expect_hits) / decoded.size()));
}

TEST_CASE("csv and svg writers emit well-formed files") {
    const auto& f = fixture();
    const std::vector<Sample> subset(f.ds.test.begin(), f.ds.test.begin() + 4);
    const auto records = evaluate_sci(f.model, subset);
    const fs::path dir = fs::temp_directory_path() / "scai_eval_writers";
    fs::create_directories(dir);

    write_eval_csv((dir / "eval.csv").string(), records);
    std::ifstream in(dir / "eval.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "sample,group,occluded,torso,e_pre,e_post,err_base,err_pred,err_corr,"
                    "hit_base,hit_pred,hit_corr");
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++lines;
    CHECK(lines == records.size());

    write_svg_plot((dir / "plot.svg").string(),
                   {{"a", {0, 1, 2}, {0.5, 0.25, 0.75}}, {"b", {0, 1, 2}, {1, 2, 3}}},
                   "x", "y", "demo");
    std::ifstream svg(dir / "plot.svg");
    std::stringstream ss;
    ss << svg.rdbuf();
    const std::string body = ss.str();
    CHECK(body.find("<svg") != std::string::npos);
    CHECK(body.find("</svg>") != std::string::npos);
    CHECK(body.find("demo") != std::string::npos);
    fs::remove_all(dir);
}
