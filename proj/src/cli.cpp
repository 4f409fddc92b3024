#include "scai/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scai/config.hpp"
#include "scai/evaluation.hpp"

namespace scai {

namespace fs = std::filesystem;

namespace {

struct CmdFlags {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    int threads = -1;
    std::string mode = "sci";
    CLI::Option* seed_opt = nullptr;
    CLI::Option* threads_opt = nullptr;
};

void add_common_flags(CLI::App* cmd, CmdFlags& f) {
    cmd->add_option("--config", f.config, "experiment config file (JSON); defaults when omitted")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", f.out, "workspace directory (shared across subcommands)")
        ->required();
    f.seed_opt = cmd->add_option("--seed", f.seed, "override the seed this command consumes");
    f.threads_opt =
        cmd->add_option("--threads", f.threads, "worker threads; 0 = all cores "
                                                "(fallback: SCAI_LAB_THREADS, then config)");
}

ExperimentConfig load_or_default(const std::string& path) {
    return path.empty() ? ExperimentConfig::defaults() : load_experiment_config(path);
}

// Priority: --threads flag, then SCAI_LAB_THREADS, then the config file.
int thread_request(const CmdFlags& f, const ExperimentConfig& cfg) {
    if (f.threads_opt->count() > 0) {
        if (f.threads < 0) throw std::runtime_error("--threads must be >= 0");
        return f.threads;
    }
    if (const char* env = std::getenv("SCAI_LAB_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0')
            throw std::runtime_error(std::string("SCAI_LAB_THREADS is not a number: ") + env);
        return (int)v;
    }
    return cfg.threads;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs body with a clean `failed/` slate; on error, leaves partial outputs in
// place under a failed/ marker holding the message, and returns nonzero.
int guarded(const fs::path& run_dir, const std::function<void()>& body) {
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    fs::remove_all(run_dir / "failed", ec);
    try {
        body();
        return 0;
    } catch (const std::exception& e) {
        std::error_code ec2;
        fs::create_directories(run_dir / "failed", ec2);
        std::ofstream err(run_dir / "failed" / "error.txt");
        err << e.what() << "\n";
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

void write_json(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Sample> head(const std::vector<Sample>& v, int n, const std::string& what) {
    if (n > (int)v.size())
        throw std::runtime_error(what + ": needs " + std::to_string(n) +
                                 " samples but the split holds " + std::to_string(v.size()));
    return {v.begin(), v.begin() + n};
}

double stage_final_loss(const TrainReport& report, const std::string& stage) {
    int last_epoch = -1;
    for (const auto& r : report.rows)
        if (r.stage == stage) last_epoch = std::max(last_epoch, r.epoch);
    double sum = 0;
    int n = 0;
    for (const auto& r : report.rows)
        if (r.stage == stage && r.epoch == last_epoch) {
            sum += r.loss;
            ++n;
        }
    return n ? sum / n : 0.0;
}

int cmd_gen_data(const CmdFlags& f) {
    const fs::path dir = fs::path(f.out) / "data";
    return guarded(dir, [&] {
        ExperimentConfig cfg = load_or_default(f.config);
        if (f.seed_opt->count() > 0) cfg.dataset.seed = f.seed;
        cfg.threads = thread_request(f, cfg);
        cfg.validate();
        const auto t0 = std::chrono::steady_clock::now();
        DatasetBundle ds = make_dataset(cfg.dataset, resolve_threads(cfg.threads));
        write_dataset(dir.string(), ds);
        save_experiment_config((dir / "config.json").string(), cfg);
        std::printf("gen-data: train=%zu val=%zu test=%zu  digests %s %s %s  (%.1fs)\n",
                    ds.train.size(), ds.val.size(), ds.test.size(),
                    hex64(split_digest(ds.train)).c_str(), hex64(split_digest(ds.val)).c_str(),
                    hex64(split_digest(ds.test)).c_str(), seconds_since(t0));
    });
}

int cmd_train(const CmdFlags& f) {
    const fs::path out(f.out);
    const fs::path dir = out / "train";
    return guarded(dir, [&] {
        ExperimentConfig cfg = load_or_default(f.config);
        if (f.seed_opt->count() > 0) cfg.train.seed = f.seed;
        cfg.threads = thread_request(f, cfg);
        DatasetBundle ds = load_dataset((out / "data").string());
        cfg.dataset = ds.cfg;  // the on-disk dataset is authoritative
        cfg.train.threads = resolve_threads(cfg.threads);
        cfg.validate();

        const bool have_predictor = fs::exists(dir / "model_predictor.json");
        const bool have_pretrained = fs::exists(dir / "model_pretrained.json");
        const bool have_final = fs::exists(dir / "model_final.json");
        save_experiment_config((dir / "config.json").string(), cfg);
        if (have_final) {
            Model model = load_model(dir.string(), "model_final");
            std::printf("train: all stages already complete (params %s)\n",
                        hex64(model.param_hash()).c_str());
            return;
        }

        Model model;
        if (have_pretrained) {
            model = load_model(dir.string(), "model_pretrained");
            std::printf("train: resuming after feedback pretraining\n");
        } else if (have_predictor) {
            model = load_model(dir.string(), "model_predictor");
            std::printf("train: resuming after predictor pretraining\n");
        } else {
            model = Model::init(cfg.dataset.schema, cfg.dataset.geom, ModelHyper{},
                                model_init_seed(cfg.train));
        }

        if (!have_predictor && !have_pretrained) {
            const auto t0 = std::chrono::steady_clock::now();
            TrainReport rep;
            pretrain_predictor(model, ds, cfg.train, rep);
            save_model(dir.string(), "model_predictor", model);
            write_train_csv((dir / "train_predictor.csv").string(), rep);
            std::printf("train: predictor stage done, final loss %.4f (%.1fs)\n",
                        stage_final_loss(rep, "pretrain_predictor"), seconds_since(t0));
        }
        if (!have_pretrained) {
            const auto t0 = std::chrono::steady_clock::now();
            TrainReport rep;
            pretrain_feedback(model, ds, cfg.train, rep);
            save_model(dir.string(), "model_pretrained", model);
            write_train_csv((dir / "train_feedback.csv").string(), rep);
            std::printf("train: feedback stage done, final loss %.4f (%.1fs)\n",
                        stage_final_loss(rep, "pretrain_feedback"), seconds_since(t0));
        }
        {
            const auto t0 = std::chrono::steady_clock::now();
            TrainReport rep;
            joint_train(model, ds, cfg.train, rep);
            save_model(dir.string(), "model_final", model);
            write_train_csv((dir / "train_joint.csv").string(), rep);
            std::printf("train: joint stage done, final loss %.4f (%.1fs)\n",
                        stage_final_loss(rep, "joint"), seconds_since(t0));
        }
        std::printf("train: params %s\n", hex64(model.param_hash()).c_str());
    });
}

ordered_json pck_block(const std::vector<GroupEvalRecord>& records) {
    return {{"records", records.size()},
            {"pck_base", distal_pck(records, PeakKind::base)},
            {"pck_predicted", distal_pck(records, PeakKind::predicted)},
            {"pck_corrected", distal_pck(records, PeakKind::corrected)},
            {"mean_e_pre", mean_self_error(records, false)},
            {"mean_e_post", mean_self_error(records, true)}};
}

void eval_sci(const fs::path& dir, const Model& model, const DatasetBundle& ds,
              const ExperimentConfig& cfg, int workers) {
    const auto samples = head(ds.test, cfg.eval.sci_samples, "eval sci");
    const auto records = evaluate_sci(model, samples, {FeedbackMode::full, cfg.eval.tau, workers});
    write_eval_csv((dir / "records.csv").string(), records);
    std::vector<GroupEvalRecord> occluded, visible;
    for (const auto& r : records) (r.occluded ? occluded : visible).push_back(r);
    ordered_json j;
    j["samples"] = samples.size();
    j["tau"] = cfg.eval.tau;
    j["all"] = pck_block(records);
    j["occluded"] = pck_block(occluded);
    j["visible"] = pck_block(visible);
    write_json(dir / "summary.json", j);
    std::printf("eval sci: pck base %.4f -> predicted %.4f -> corrected %.4f; "
                "mean self-error %.4f -> %.4f\n",
                distal_pck(records, PeakKind::base), distal_pck(records, PeakKind::predicted),
                distal_pck(records, PeakKind::corrected), mean_self_error(records, false),
                mean_self_error(records, true));
}

void eval_correlate(const fs::path& dir, const Model& model, const DatasetBundle& ds,
                    const ExperimentConfig& cfg, int workers) {
    const auto records = evaluate_sci(model, ds.test, {FeedbackMode::full, cfg.eval.tau, workers});
    const auto report = correlation_report(records, cfg.eval.correlate_batch);
    write_correlation_csv((dir / "correlation.csv").string(), report);
    SvgSeries pts{"batches", {}, {}};
    for (const auto& row : report.rows) {
        pts.x.push_back(row.mean_e_post);
        pts.y.push_back(row.pck_corrected);
    }
    write_svg_plot((dir / "scatter.svg").string(), {pts}, "batch mean self-error",
                   "batch PCK (corrected)", "self-error vs accuracy", true);
    write_json(dir / "summary.json",
               {{"batches", report.rows.size()},
                {"batch_size", cfg.eval.correlate_batch},
                {"valid", report.valid},
                {"pearson_r_self_error_vs_pck", report.r_post_corrected},
                {"pearson_r_pre_error_vs_predicted_pck", report.r_pre_predicted}});
    std::printf("eval correlate: %zu batches of %d, r = %.4f (pre-correction r = %.4f)%s\n",
                report.rows.size(), cfg.eval.correlate_batch, report.r_post_corrected,
                report.r_pre_predicted,
                report.valid ? "" : "  [fewer than 30 batches; r is unreliable]");
}

void eval_curves(const fs::path& dir, const Model& model, const DatasetBundle& ds,
                 const ExperimentConfig& cfg, int workers) {
    AdaptConfig adapt = cfg.adapt;
    adapt.threads = workers;
    const int batch = cfg.eval.correlate_batch;
    const auto samples = head(ds.test, cfg.eval.adapt_batches * batch, "eval curves");
    const auto curves = adaptation_curves(model, samples, adapt, batch, cfg.eval.tau);
    write_adapt_csv((dir / "curves.csv").string(), curves);

    const std::size_t epochs = curves.empty() ? 0 : curves[0].self_error.size();
    SvgSeries loss{"mean self-error", {}, {}}, pck{"mean PCK", {}, {}};
    int loss_ok = 0, pck_ok = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
        double ls = 0, ps = 0;
        for (const auto& c : curves) {
            ls += c.self_error[e];
            ps += c.pck[e];
        }
        loss.x.push_back((double)e);
        loss.y.push_back(ls / curves.size());
        pck.x.push_back((double)e);
        pck.y.push_back(ps / curves.size());
    }
    for (const auto& c : curves) {
        if (c.self_error.back() <= 0.8 * c.self_error.front()) ++loss_ok;
        if (c.pck.back() >= c.pck.front()) ++pck_ok;
    }
    write_svg_plot((dir / "loss.svg").string(), {loss}, "adaptation epoch", "mean self-error",
                   "batch adaptation loss", false);
    write_svg_plot((dir / "pck.svg").string(), {pck}, "adaptation epoch", "mean PCK",
                   "batch adaptation accuracy", false);
    write_json(dir / "summary.json",
               {{"batches", curves.size()},
                {"batch_size", batch},
                {"epochs", cfg.adapt.epochs},
                {"frac_loss_reduced_to_0.8", curves.empty() ? 0.0 : (double)loss_ok / curves.size()},
                {"frac_pck_not_worse", curves.empty() ? 0.0 : (double)pck_ok / curves.size()},
                {"mean_self_error_by_epoch", loss.y},
                {"mean_pck_by_epoch", pck.y}});
    std::printf("eval curves: %zu batches; loss<=0.8x on %d, pck>= on %d; "
                "mean self-error %.4f -> %.4f, mean pck %.4f -> %.4f\n",
                curves.size(), loss_ok, pck_ok, loss.y.front(), loss.y.back(), pck.y.front(),
                pck.y.back());
}

void eval_local_search(const fs::path& dir, const Model& model, const DatasetBundle& ds,
                       const ExperimentConfig& cfg, int workers) {
    const auto samples = head(ds.test, cfg.eval.search_samples, "eval local-search");
    SearchOptions so;
    so.tau = cfg.eval.tau;
    so.threads = workers;
    const auto search = local_search_refine(model, samples, so);
    write_search_csv((dir / "search.csv").string(), search);
    const auto learned = evaluate_sci(model, samples, {FeedbackMode::full, cfg.eval.tau, workers});

    double search_cost = 0, search_evals = 0, search_pck = 0;
    for (const auto& r : search) {
        search_cost += r.cost;
        search_evals += r.evals;
        search_pck += r.hit;
    }
    search_cost /= search.size();
    search_evals /= search.size();
    search_pck /= search.size();
    // Learned path spends two feedback passes per group: one to form the
    // conditioning error, one to score the corrected map.
    const double learned_evals = 2.0;
    write_json(dir / "summary.json",
               {{"samples", samples.size()},
                {"search",
                 {{"steps", so.steps},
                  {"mean_self_error", search_cost},
                  {"pck", search_pck},
                  {"mean_feedback_evals", search_evals}}},
                {"learned",
                 {{"mean_self_error", mean_self_error(learned, true)},
                  {"pck", distal_pck(learned, PeakKind::corrected)},
                  {"mean_feedback_evals", learned_evals}}},
                {"feedback_eval_ratio", search_evals / learned_evals}});
    std::printf("eval local-search: learned self-error %.4f (pck %.4f, 2 evals) vs "
                "search %.4f (pck %.4f, %.1f evals); ratio %.1fx\n",
                mean_self_error(learned, true), distal_pck(learned, PeakKind::corrected),
                search_cost, search_pck, search_evals, search_evals / learned_evals);
}

void eval_ablate(const fs::path& dir, const DatasetBundle& ds, const ExperimentConfig& cfg,
                 int workers) {
    TrainConfig train = cfg.train;
    train.threads = workers;
    AdaptConfig adapt = cfg.adapt;
    adapt.threads = workers;
    const auto report = run_ablation(ds, train, adapt, cfg.eval.ablation_samples,
                                     cfg.eval.correlate_batch, dir.string());
    ordered_json rows = ordered_json::array();
    for (const auto& r : report.rows) rows.push_back({{"variant", r.variant}, {"pck", r.pck}});
    write_json(dir / "summary.json",
               {{"samples", cfg.eval.ablation_samples}, {"ladder", rows}});
    for (const auto& r : report.rows)
        std::printf("eval ablate: %-28s pck %.4f\n", r.variant.c_str(), r.pck);
}

int cmd_eval(const CmdFlags& f) {
    std::string mode = f.mode == "sai" ? "curves" : f.mode;
    const fs::path out(f.out);
    const fs::path dir = out / "eval" / mode;
    return guarded(dir, [&] {
        ExperimentConfig cfg = load_or_default(f.config);
        if (f.seed_opt->count() > 0) cfg.train.seed = f.seed;
        cfg.threads = thread_request(f, cfg);
        DatasetBundle ds = load_dataset((out / "data").string());
        cfg.dataset = ds.cfg;
        cfg.validate();
        const int workers = resolve_threads(cfg.threads);
        save_experiment_config((dir / "config.json").string(), cfg);
        const auto t0 = std::chrono::steady_clock::now();

        if (mode == "ablate") {
            eval_ablate(dir, ds, cfg, workers);
        } else {
            const Model model = load_model((out / "train").string(), "model_final");
            if (mode == "sci") eval_sci(dir, model, ds, cfg, workers);
            else if (mode == "correlate") eval_correlate(dir, model, ds, cfg, workers);
            else if (mode == "curves") eval_curves(dir, model, ds, cfg, workers);
            else eval_local_search(dir, model, ds, cfg, workers);
        }
        std::printf("eval %s: %.1fs\n", mode.c_str(), seconds_since(t0));
    });
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"prediction-feedback-correction laboratory for grouped keypoint heatmaps"};
    app.require_subcommand(1);

    CmdFlags gen_flags, train_flags, eval_flags;
    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset splits");
    add_common_flags(gen, gen_flags);
    CLI::App* train = app.add_subcommand(
        "train", "run the three training stages (resumes after completed stages)");
    add_common_flags(train, train_flags);
    CLI::App* eval = app.add_subcommand("eval", "evaluate a trained model");
    add_common_flags(eval, eval_flags);
    eval->add_option("--mode", eval_flags.mode,
                     "sci | correlate | ablate | curves (alias: sai) | local-search")
        ->check(CLI::IsMember({"sci", "correlate", "ablate", "curves", "sai", "local-search"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (gen->parsed()) return cmd_gen_data(gen_flags);
    if (train->parsed()) return cmd_train(train_flags);
    return cmd_eval(eval_flags);
}

}  // namespace scai
