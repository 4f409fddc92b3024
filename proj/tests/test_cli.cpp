#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>

#include "doctest.h"
#include "json.hpp"
#include "scai/cli.hpp"
#include "scai/config.hpp"
#include "scai/networks.hpp"

using namespace scai;
namespace fs = std::filesystem;

namespace {

int cli(std::initializer_list<std::string> args) {
    std::vector<std::string> storage = {"scai_lab"};
    storage.insert(storage.end(), args);
    std::vector<const char*> argv;
    for (const auto& s : storage) argv.push_back(s.c_str());
    return run_cli((int)argv.size(), argv.data());
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("scai_cli_test_" + std::to_string(std::rand()) + std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// A configuration small enough that every subcommand finishes in seconds.
fs::path write_tiny_config(const fs::path& dir) {
    ExperimentConfig cfg = ExperimentConfig::defaults("crowdpose_like");
    cfg.dataset.geom = HeatmapGeometry{24, 24, 2.f};
    cfg.dataset.train_size = 24;
    cfg.dataset.val_size = 8;
    cfg.dataset.test_size = 64;
    cfg.dataset.seed = 12;
    cfg.train.pretrain_epochs = 1;
    cfg.train.joint_epochs = 1;
    cfg.train.batch_size = 12;
    cfg.train.seed = 9;
    cfg.adapt.epochs = 2;
    cfg.adapt.lr = 1e-3;
    cfg.eval.sci_samples = 24;
    cfg.eval.correlate_batch = 8;
    cfg.eval.adapt_batches = 2;
    cfg.eval.search_samples = 8;
    cfg.eval.ablation_samples = 24;
    cfg.threads = 1;
    const fs::path path = dir / "tiny.json";
    save_experiment_config(path.string(), cfg);
    return path;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

// gen-data + train once, shared by the eval tests below.
struct TrainedRun {
    TempDir dir;
    fs::path config;
    TrainedRun() {
        config = write_tiny_config(dir.path);
        REQUIRE(cli({"gen-data", "--out", dir.path.string(), "--config", config.string()}) == 0);
        REQUIRE(cli({"train", "--out", dir.path.string(), "--config", config.string()}) == 0);
    }
};

const TrainedRun& trained() {
    static TrainedRun r;
    return r;
}

}  // namespace

TEST_CASE("gen-data writes a loadable dataset and reruns byte-identically") {
    TempDir a, b;
    const fs::path cfg_a = write_tiny_config(a.path);
    const fs::path cfg_b = write_tiny_config(b.path);
    CHECK(cli({"gen-data", "--out", a.path.string(), "--config", cfg_a.string()}) == 0);
    CHECK(cli({"gen-data", "--out", b.path.string(), "--config", cfg_b.string()}) == 0);

    CHECK(fs::exists(a.path / "data" / "manifest.json"));
    CHECK(fs::exists(a.path / "data" / "config.json"));
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(a.path / "data")) {
        const auto name = entry.path().filename();
        CHECK(slurp(entry.path()) == slurp(b.path / "data" / name));
        ++files;
    }
    CHECK(files >= 5);  // manifest, resolved config, three split payloads

    // A seed override must change the data.
    TempDir c;
    const fs::path cfg_c = write_tiny_config(c.path);
    CHECK(cli({"gen-data", "--out", c.path.string(), "--config", cfg_c.string(), "--seed",
               "777"}) == 0);
    bool differs = false;
    for (const auto& entry : fs::directory_iterator(c.path / "data"))
        if (entry.path().extension() == ".bin")
            differs = differs || slurp(entry.path()) !=
                                     slurp(a.path / "data" / entry.path().filename());
    CHECK(differs);
    const auto resolved = read_json(c.path / "data" / "config.json");
    CHECK(resolved["dataset"]["seed"] == 777);
}

TEST_CASE("unknown config keys fail loudly with a marker") {
    TempDir dir;
    const fs::path cfg = dir.path / "bad.json";
    std::ofstream(cfg) << R"({"datset": {"seed": 1}})";
    CHECK(cli({"gen-data", "--out", dir.path.string(), "--config", cfg.string()}) != 0);
    CHECK(fs::exists(dir.path / "data" / "failed" / "error.txt"));
}

TEST_CASE("missing inputs leave a failed marker that success clears") {
    TempDir dir;
    const fs::path cfg = write_tiny_config(dir.path);
    // Training without data must fail and say so.
    CHECK(cli({"train", "--out", dir.path.string(), "--config", cfg.string()}) != 0);
    CHECK(fs::exists(dir.path / "train" / "failed" / "error.txt"));
    // Evaluating without a model must fail too.
    CHECK(cli({"eval", "--out", dir.path.string(), "--config", cfg.string(), "--mode",
               "sci"}) != 0);
    CHECK(fs::exists(dir.path / "eval" / "sci" / "failed" / "error.txt"));

    CHECK(cli({"gen-data", "--out", dir.path.string(), "--config", cfg.string()}) == 0);
    CHECK(cli({"train", "--out", dir.path.string(), "--config", cfg.string()}) == 0);
    CHECK(!fs::exists(dir.path / "train" / "failed"));
    CHECK(fs::exists(dir.path / "train" / "model_final.bin"));
}

TEST_CASE("train emits checkpoints and logs, and a rerun is a no-op") {
    const TrainedRun& run = trained();
    const fs::path tdir = run.dir.path / "train";
    for (const char* name : {"model_predictor", "model_pretrained", "model_final"}) {
        CHECK(fs::exists(tdir / (std::string(name) + ".json")));
        CHECK(fs::exists(tdir / (std::string(name) + ".bin")));
    }
    for (const char* name : {"train_predictor.csv", "train_feedback.csv", "train_joint.csv",
                             "config.json"})
        CHECK(fs::exists(tdir / name));

    const auto before = slurp(tdir / "model_final.bin");
    CHECK(cli({"train", "--out", run.dir.path.string(), "--config", run.config.string()}) == 0);
    CHECK(slurp(tdir / "model_final.bin") == before);
}

TEST_CASE("train resumes from stage checkpoints to the same parameters") {
    const TrainedRun& run = trained();
    TempDir fresh;
    const fs::path cfg = write_tiny_config(fresh.path);
    REQUIRE(cli({"gen-data", "--out", fresh.path.string(), "--config", cfg.string()}) == 0);

    // Seed the new workspace with the completed pretraining checkpoints only:
    // the joint stage must rerun and land on bit-identical parameters.
    fs::create_directories(fresh.path / "train");
    for (const char* name : {"model_predictor.json", "model_predictor.bin",
                             "model_pretrained.json", "model_pretrained.bin"})
        fs::copy_file(run.dir.path / "train" / name, fresh.path / "train" / name);
    REQUIRE(cli({"train", "--out", fresh.path.string(), "--config", cfg.string()}) == 0);
    CHECK(slurp(fresh.path / "train" / "model_final.bin") ==
          slurp(run.dir.path / "train" / "model_final.bin"));
}

TEST_CASE("eval sci reports the three pck levels") {
    const TrainedRun& run = trained();
    REQUIRE(cli({"eval", "--out", run.dir.path.string(), "--config", run.config.string(),
                 "--mode", "sci"}) == 0);
    const fs::path dir = run.dir.path / "eval" / "sci";
    CHECK(fs::exists(dir / "records.csv"));
    const auto j = read_json(dir / "summary.json");
    CHECK(j["samples"] == 24);
    for (const char* block : {"all", "occluded", "visible"}) {
        CHECK(j[block].contains("pck_base"));
        CHECK(j[block].contains("pck_corrected"));
        CHECK(j[block].contains("mean_e_post"));
    }
    CHECK(j["all"]["records"] == 24 * 4);
}

TEST_CASE("eval correlate flags too-small batch counts") {
    const TrainedRun& run = trained();
    REQUIRE(cli({"eval", "--out", run.dir.path.string(), "--config", run.config.string(),
                 "--mode", "correlate"}) == 0);
    const fs::path dir = run.dir.path / "eval" / "correlate";
    CHECK(fs::exists(dir / "correlation.csv"));
    CHECK(fs::exists(dir / "scatter.svg"));
    const auto j = read_json(dir / "summary.json");
    CHECK(j["batches"] == 8);       // 64 test samples in batches of 8
    CHECK(j["valid"] == false);     // needs at least 30 batches
    CHECK(j.contains("pearson_r_self_error_vs_pck"));
}

TEST_CASE("eval curves and its sai alias write the adaptation report") {
    const TrainedRun& run = trained();
    REQUIRE(cli({"eval", "--out", run.dir.path.string(), "--config", run.config.string(),
                 "--mode", "sai"}) == 0);
    const fs::path dir = run.dir.path / "eval" / "curves";  // alias maps here
    CHECK(!fs::exists(run.dir.path / "eval" / "sai"));
    CHECK(fs::exists(dir / "curves.csv"));
    CHECK(fs::exists(dir / "loss.svg"));
    CHECK(fs::exists(dir / "pck.svg"));
    const auto j = read_json(dir / "summary.json");
    CHECK(j["batches"] == 2);
    CHECK(j["epochs"] == 2);
    CHECK(j["mean_self_error_by_epoch"].size() == 3);  // epochs + 1
    CHECK(j.contains("frac_loss_reduced_to_0.8"));
    CHECK(j.contains("frac_pck_not_worse"));
}

TEST_CASE("eval local-search compares against the learned loop") {
    const TrainedRun& run = trained();
    REQUIRE(cli({"eval", "--out", run.dir.path.string(), "--config", run.config.string(),
                 "--mode", "local-search"}) == 0);
    const fs::path dir = run.dir.path / "eval" / "local-search";
    CHECK(fs::exists(dir / "search.csv"));
    const auto j = read_json(dir / "summary.json");
    CHECK(j["learned"]["mean_feedback_evals"] == 2.0);
    CHECK(j["search"]["mean_feedback_evals"].get<double>() >= 1.0);
    CHECK(j["search"]["mean_feedback_evals"].get<double>() <= 41.0);
    CHECK(j["feedback_eval_ratio"].get<double>() ==
          doctest::Approx(j["search"]["mean_feedback_evals"].get<double>() / 2.0));
}

TEST_CASE("eval ablate trains and reports the five-rung ladder") {
    const TrainedRun& run = trained();
    REQUIRE(cli({"eval", "--out", run.dir.path.string(), "--config", run.config.string(),
                 "--mode", "ablate"}) == 0);
    const fs::path dir = run.dir.path / "eval" / "ablate";
    CHECK(fs::exists(dir / "ablation.csv"));
    const auto j = read_json(dir / "summary.json");
    REQUIRE(j["ladder"].size() == 5);
    const std::vector<std::string> want = {"baseline", "correction_zero_error",
                                           "correction_frozen_feedback",
                                           "correction_joint_feedback", "adaptive"};
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(j["ladder"][i]["variant"] == want[i]);
    // The ladder's checkpoints are reusable artifacts.
    CHECK(fs::exists(dir / "model_pretrained.bin"));
    CHECK(fs::exists(dir / "model_correction_joint_feedback.bin"));
}

TEST_CASE("thread controls: flag beats environment beats config") {
    TempDir dir;
    const fs::path cfg = write_tiny_config(dir.path);

    setenv("SCAI_LAB_THREADS", "2", 1);
    CHECK(cli({"gen-data", "--out", dir.path.string(), "--config", cfg.string()}) == 0);
    auto resolved = read_json(dir.path / "data" / "config.json");
    CHECK(resolved["threads"] == 2);

    CHECK(cli({"gen-data", "--out", dir.path.string(), "--config", cfg.string(), "--threads",
               "3"}) == 0);
    resolved = read_json(dir.path / "data" / "config.json");
    CHECK(resolved["threads"] == 3);

    setenv("SCAI_LAB_THREADS", "abc", 1);
    CHECK(cli({"gen-data", "--out", dir.path.string(), "--config", cfg.string()}) != 0);
    CHECK(fs::exists(dir.path / "data" / "failed" / "error.txt"));
    unsetenv("SCAI_LAB_THREADS");

    CHECK(cli({"gen-data", "--out", dir.path.string(), "--config", cfg.string()}) == 0);
    resolved = read_json(dir.path / "data" / "config.json");
    CHECK(resolved["threads"] == 1);  // back to the config file's value
}

TEST_CASE("bad command lines are rejected") {
    TempDir dir;
    CHECK(cli({"gen-data"}) != 0);  // --out is required
    CHECK(cli({"eval", "--out", dir.path.string(), "--mode", "bogus"}) != 0);
    CHECK(cli({"frobnicate", "--out", dir.path.string()}) != 0);
    CHECK(cli({}) != 0);
}
