#include "scai/config.hpp"

#include <fstream>
#include <stdexcept>

namespace scai {

void EvalConfig::validate() const {
    if (sci_samples < 1) throw std::invalid_argument("eval.sci_samples must be >= 1");
    if (correlate_batch < 2) throw std::invalid_argument("eval.correlate_batch must be >= 2");
    if (adapt_batches < 1) throw std::invalid_argument("eval.adapt_batches must be >= 1");
    if (search_samples < 1) throw std::invalid_argument("eval.search_samples must be >= 1");
    if (ablation_samples < 1) throw std::invalid_argument("eval.ablation_samples must be >= 1");
    if (!(tau > 0)) throw std::invalid_argument("eval.tau must be positive");
}

ExperimentConfig ExperimentConfig::defaults(const std::string& schema_name) {
    ExperimentConfig cfg;
    GroupSchema schema = GroupSchema::by_name(schema_name);
    cfg.dataset.schema = schema;
    cfg.dataset.train_noise = NoiseConfig::uniform_rate(schema, 0.12f, 0.8f, 2.0f, 6.0f);
    cfg.dataset.test_noise = NoiseConfig::uniform_rate(schema, 0.35f, 1.2f, 3.2f, 9.0f);
    return cfg;
}

void ExperimentConfig::validate() const {
    dataset.validate();
    train.validate();
    adapt.validate();
    eval.validate();
    if (threads < 0) throw std::invalid_argument("threads must be >= 0");
}

namespace {

ordered_json train_to_json(const TrainConfig& t) {
    ordered_json j;
    j["pretrain_epochs"] = t.pretrain_epochs;
    j["joint_epochs"] = t.joint_epochs;
    j["batch_size"] = t.batch_size;
    j["pretrain_lr"] = t.pretrain_lr;
    j["joint_lr"] = t.joint_lr;
    j["loss"] = {{"a", t.loss.a}, {"b", t.loss.b}, {"lambda", t.loss.lambda}};
    j["seed"] = t.seed;
    return j;
}

TrainConfig train_from_json(const ordered_json& j) {
    reject_unknown_keys(
        j, {"pretrain_epochs", "joint_epochs", "batch_size", "pretrain_lr", "joint_lr", "loss", "seed"},
        "train");
    TrainConfig t;
    t.pretrain_epochs = j.value("pretrain_epochs", t.pretrain_epochs);
    t.joint_epochs = j.value("joint_epochs", t.joint_epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.pretrain_lr = j.value("pretrain_lr", t.pretrain_lr);
    t.joint_lr = j.value("joint_lr", t.joint_lr);
    if (j.contains("loss")) {
        const ordered_json& l = j.at("loss");
        reject_unknown_keys(l, {"a", "b", "lambda"}, "train.loss");
        t.loss.a = l.value("a", t.loss.a);
        t.loss.b = l.value("b", t.loss.b);
        t.loss.lambda = l.value("lambda", t.loss.lambda);
    }
    t.seed = j.value("seed", t.seed);
    return t;
}

ordered_json adapt_to_json(const AdaptConfig& a) {
    ordered_json j;
    j["epochs"] = a.epochs;
    j["lr"] = a.lr;
    j["restore_per_batch"] = a.restore_per_batch;
    return j;
}

AdaptConfig adapt_from_json(const ordered_json& j) {
    reject_unknown_keys(j, {"epochs", "lr", "restore_per_batch"}, "adapt");
    AdaptConfig a;
    a.epochs = j.value("epochs", a.epochs);
    a.lr = j.value("lr", a.lr);
    a.restore_per_batch = j.value("restore_per_batch", a.restore_per_batch);
    return a;
}

ordered_json eval_to_json(const EvalConfig& e) {
    ordered_json j;
    j["sci_samples"] = e.sci_samples;
    j["correlate_batch"] = e.correlate_batch;
    j["adapt_batches"] = e.adapt_batches;
    j["search_samples"] = e.search_samples;
    j["ablation_samples"] = e.ablation_samples;
    j["tau"] = e.tau;
    return j;
}

EvalConfig eval_from_json(const ordered_json& j) {
    reject_unknown_keys(j,
                        {"sci_samples", "correlate_batch", "adapt_batches", "search_samples",
                         "ablation_samples", "tau"},
                        "eval");
    EvalConfig e;
    e.sci_samples = j.value("sci_samples", e.sci_samples);
    e.correlate_batch = j.value("correlate_batch", e.correlate_batch);
    e.adapt_batches = j.value("adapt_batches", e.adapt_batches);
    e.search_samples = j.value("search_samples", e.search_samples);
    e.ablation_samples = j.value("ablation_samples", e.ablation_samples);
    e.tau = j.value("tau", e.tau);
    return e;
}

}  // namespace

ordered_json experiment_config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["dataset"] = dataset_config_to_json(cfg.dataset);
    j["train"] = train_to_json(cfg.train);
    j["adapt"] = adapt_to_json(cfg.adapt);
    j["eval"] = eval_to_json(cfg.eval);
    j["threads"] = cfg.threads;
    return j;
}

ExperimentConfig experiment_config_from_json(const ordered_json& j) {
    reject_unknown_keys(j, {"dataset", "train", "adapt", "eval", "threads"}, "config");
    ExperimentConfig cfg = ExperimentConfig::defaults();
    if (j.contains("dataset")) cfg.dataset = dataset_config_from_json(j.at("dataset"));
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
    if (j.contains("adapt")) cfg.adapt = adapt_from_json(j.at("adapt"));
    if (j.contains("eval")) cfg.eval = eval_from_json(j.at("eval"));
    cfg.threads = j.value("threads", cfg.threads);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    ordered_json j = ordered_json::parse(in);
    return experiment_config_from_json(j);
}

void save_experiment_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config: " + path);
    out << experiment_config_to_json(cfg).dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing config: " + path);
}

}  // namespace scai
