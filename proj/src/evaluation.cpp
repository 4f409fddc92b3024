#include "scai/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace scai {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: size mismatch");
    if (x.size() < 2) throw std::invalid_argument("pearson: need at least two points");
    const double n = double(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) return 0;
    return sxy / std::sqrt(sxx * syy);
}

namespace {

float peak_error(const std::optional<DecodedPeak>& peak, const Coord& gt) {
    if (!peak) return std::numeric_limits<float>::infinity();
    const float dx = peak->coord.x - gt.x, dy = peak->coord.y - gt.y;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

std::vector<GroupEvalRecord> evaluate_sci(const Model& model, const std::vector<Sample>& samples,
                                          const EvalOptions& opts) {
    const GroupSchema& schema = model.schema;
    const std::size_t n_groups = model.groups.size();
    std::vector<GroupEvalRecord> records(samples.size() * n_groups);
    parallel_for(samples.size(), resolve_threads(opts.threads), [&](std::size_t si) {
        const Sample& s = samples[si];
        const auto maps = render_observed_maps(UnlabeledSample::from(s), schema, model.geom);
        for (std::size_t gi = 0; gi < n_groups; ++gi) {
            const Group& group = schema.group(gi);
            const Coord& gt = s.gt[(std::size_t)group.distal];
            const GroupResult r = sci_infer_group(model, gi, maps, opts.mode);
            GroupEvalRecord& rec = records[si * n_groups + gi];
            rec.sample = int(si);
            rec.group = int(gi);
            rec.occluded = s.occluded[(std::size_t)group.distal];
            rec.torso = s.torso_len;
            rec.e_pre = r.e_pre;
            rec.e_post = r.e_post;
            rec.err_base = peak_error(r.base_peak, gt);
            rec.err_pred = peak_error(r.predicted_peak, gt);
            rec.err_corr = peak_error(r.corrected_peak, gt);
            const float radius = float(opts.tau) * s.torso_len;
            rec.hit_base = rec.err_base <= radius ? 1 : 0;
            rec.hit_pred = rec.err_pred <= radius ? 1 : 0;
            rec.hit_corr = rec.err_corr <= radius ? 1 : 0;
        }
    });
    return records;
}

double distal_pck(const std::vector<GroupEvalRecord>& records, PeakKind kind) {
    if (records.empty()) throw std::invalid_argument("distal_pck: no records");
    double hits = 0;
    for (const auto& r : records)
        hits += kind == PeakKind::base ? r.hit_base
                                       : (kind == PeakKind::predicted ? r.hit_pred : r.hit_corr);
    return hits / double(records.size());
}

double mean_self_error(const std::vector<GroupEvalRecord>& records, bool post) {
    if (records.empty()) throw std::invalid_argument("mean_self_error: no records");
    double sum = 0;
    for (const auto& r : records) sum += post ? r.e_post : r.e_pre;
    return sum / double(records.size());
}

CorrelationReport correlation_report(const std::vector<GroupEvalRecord>& records,
                                     int samples_per_batch) {
    if (samples_per_batch < 1) throw std::invalid_argument("correlation: bad batch size");
    int max_sample = -1;
    for (const auto& r : records) max_sample = std::max(max_sample, r.sample);
    const int batches = (max_sample + 1) / samples_per_batch;
    if (batches < 2) throw std::invalid_argument("correlation: need at least two full batches");

    CorrelationReport rep;
    std::vector<double> e_post(batches, 0), pck_corr(batches, 0), e_pre(batches, 0),
        pck_pred(batches, 0), count(batches, 0);
    for (const auto& r : records) {
        const int b = r.sample / samples_per_batch;
        if (b >= batches) continue;
        e_post[(std::size_t)b] += r.e_post;
        e_pre[(std::size_t)b] += r.e_pre;
        pck_corr[(std::size_t)b] += r.hit_corr;
        pck_pred[(std::size_t)b] += r.hit_pred;
        count[(std::size_t)b] += 1;
    }
    for (int b = 0; b < batches; ++b) {
        const double n = count[(std::size_t)b];
        if (n == 0) throw std::logic_error("correlation: empty batch");
        rep.rows.push_back({b, e_post[(std::size_t)b] / n, pck_corr[(std::size_t)b] / n,
                            e_pre[(std::size_t)b] / n, pck_pred[(std::size_t)b] / n});
    }
    std::vector<double> xs, ys;
    for (const auto& row : rep.rows) {
        xs.push_back(row.mean_e_post);
        ys.push_back(row.pck_corrected);
    }
    rep.r_post_corrected = pearson(xs, ys);
    xs.clear();
    ys.clear();
    for (const auto& row : rep.rows) {
        xs.push_back(row.mean_e_pre);
        ys.push_back(row.pck_predicted);
    }
    rep.r_pre_predicted = pearson(xs, ys);
    rep.valid = rep.rows.size() >= 30;
    return rep;
}

std::vector<SearchRecord> local_search_refine(const Model& model,
                                              const std::vector<Sample>& samples,
                                              const SearchOptions& opts) {
    const GroupSchema& schema = model.schema;
    const HeatmapGeometry geom = model.geom;
    const std::size_t n_groups = model.groups.size();
    const float max_x = float(geom.width - 1), max_y = float(geom.height - 1);
    std::vector<SearchRecord> records(samples.size() * n_groups);

    parallel_for(samples.size(), resolve_threads(opts.threads), [&](std::size_t si) {
        const Sample& s = samples[si];
        const auto maps = render_observed_maps(UnlabeledSample::from(s), schema, geom);
        for (std::size_t gi = 0; gi < n_groups; ++gi) {
            const Group& group = schema.group(gi);
            const Tensor& anchor_map = maps[(std::size_t)group.proximals[0]];
            const Tensor prefix = feedback_prefix(schema, gi, maps);
            const GroupNets& nets = model.groups[gi];
            int evals = 0;
            auto cost_at = [&](float x, float y) {
                const Tensor cand = render_gaussian({x, y, true}, geom).to_tensor();
                const Tensor gin = stack_maps<float>({&prefix, &cand});
                const Tensor recon = nets.feedback.forward(gin);
                ++evals;
                double acc = 0;
                for (std::size_t px = 0; px < recon.numel(); ++px) {
                    const double d = double(recon.data[px]) - double(anchor_map.data[px]);
                    acc += d * d;
                }
                return float(std::sqrt(acc));
            };

            const Tensor predicted = nets.predictor.forward(predictor_input(schema, gi, maps));
            const auto start = decode_map(predicted);
            float cx = start ? start->coord.x : max_x / 2.f;
            float cy = start ? start->coord.y : max_y / 2.f;
            float best = cost_at(cx, cy);
            for (int round = 0; round < opts.steps; ++round) {
                float nx = cx, ny = cy, nbest = best;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        const float px = std::min(max_x, std::max(0.f, cx + float(dx)));
                        const float py = std::min(max_y, std::max(0.f, cy + float(dy)));
                        const float c = cost_at(px, py);
                        if (c < nbest) {
                            nbest = c;
                            nx = px;
                            ny = py;
                        }
                    }
                if (!(nbest < best)) break;  // local minimum
                cx = nx;
                cy = ny;
                best = nbest;
            }

            SearchRecord& rec = records[si * n_groups + gi];
            rec.sample = int(si);
            rec.group = int(gi);
            rec.cost = best;
            rec.evals = evals;
            const Coord& gt = s.gt[(std::size_t)group.distal];
            const float ddx = cx - gt.x, ddy = cy - gt.y;
            rec.err = std::sqrt(ddx * ddx + ddy * ddy);
            rec.hit = rec.err <= float(opts.tau) * s.torso_len ? 1 : 0;
        }
    });
    return records;
}

double batch_pck(const std::vector<std::optional<DecodedPeak>>& decoded,
                 const std::vector<Sample>& batch_samples, const GroupSchema& schema,
                 double tau) {
    const std::size_t n_groups = schema.group_count();
    if (decoded.size() != batch_samples.size() * n_groups)
        throw std::invalid_argument("batch_pck: instance count mismatch");
    double hits = 0;
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        const Sample& s = batch_samples[i / n_groups];
        const Group& group = schema.group(i % n_groups);
        const float err = peak_error(decoded[i], s.gt[(std::size_t)group.distal]);
        if (err <= float(tau) * s.torso_len) hits += 1;
    }
    return hits / double(decoded.size());
}

std::vector<AdaptCurve> adaptation_curves(const Model& model, const std::vector<Sample>& samples,
                                          const AdaptConfig& cfg, int batch_size, double tau) {
    if (batch_size < 1) throw std::invalid_argument("adaptation_curves: bad batch size");
    std::vector<AdaptCurve> curves;
    const std::size_t n_batches = samples.size() / std::size_t(batch_size);
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::vector<Sample> batch_samples(samples.begin() + std::ptrdiff_t(b * batch_size),
                                          samples.begin() +
                                              std::ptrdiff_t((b + 1) * std::size_t(batch_size)));
        std::vector<UnlabeledSample> batch;
        batch.reserve(batch_samples.size());
        for (const auto& s : batch_samples) batch.push_back(UnlabeledSample::from(s));
        const BatchAdaptResult r = sai_adapt(model, batch, cfg);
        AdaptCurve curve;
        curve.batch = int(b);
        curve.self_error = r.self_error;
        for (const auto& epoch_decodes : r.decoded)
            curve.pck.push_back(batch_pck(epoch_decodes, batch_samples, model.schema, tau));
        curves.push_back(std::move(curve));
    }
    return curves;
}

AblationReport run_ablation(const DatasetBundle& ds, const TrainConfig& train_cfg,
                            const AdaptConfig& adapt_cfg, int eval_samples, int adapt_batch,
                            const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    if (eval_samples < 1 || (std::size_t)eval_samples > ds.test.size())
        throw std::invalid_argument("ablation: eval_samples out of range");
    const std::vector<Sample> eval_set(ds.test.begin(), ds.test.begin() + eval_samples);
    EvalOptions eval_opts;
    eval_opts.threads = train_cfg.threads;
    constexpr double kFailed = std::numeric_limits<double>::quiet_NaN();

    Model pretrained =
        Model::init(ds.cfg.schema, ds.cfg.geom, ModelHyper{}, model_init_seed(train_cfg));
    TrainReport report;
    pretrain_predictor(pretrained, ds, train_cfg, report);
    pretrain_feedback(pretrained, ds, train_cfg, report);
    save_model(out_dir, "model_pretrained", pretrained);

    AblationReport rep;
    rep.rows.push_back(
        {"baseline", distal_pck(evaluate_sci(pretrained, eval_set, eval_opts), PeakKind::base)});

    // Each rung trains its own copy from the shared pretrained model; a rung
    // whose training diverges is marked NaN and the ladder continues.
    struct Rung {
        const char* name;
        FeedbackMode mode;
    };
    const Rung rungs[] = {{"correction_zero_error", FeedbackMode::zeroed},
                          {"correction_frozen_feedback", FeedbackMode::frozen},
                          {"correction_joint_feedback", FeedbackMode::full}};
    std::optional<Model> joint_model;
    for (const Rung& rung : rungs) {
        try {
            Model m = pretrained;
            joint_train(m, ds, train_cfg, report, rung.mode);
            save_model(out_dir, std::string("model_") + rung.name, m);
            EvalOptions opts = eval_opts;
            opts.mode = rung.mode;
            rep.rows.push_back(
                {rung.name, distal_pck(evaluate_sci(m, eval_set, opts), PeakKind::corrected)});
            if (rung.mode == FeedbackMode::full) joint_model = std::move(m);
        } catch (const std::exception& e) {
            std::cerr << "ablation: variant " << rung.name << " failed: " << e.what() << "\n";
            rep.rows.push_back({rung.name, kFailed});
        }
    }
    write_train_csv((fs::path(out_dir) / "ablation_training.csv").string(), report);

    try {
        if (!joint_model) throw std::runtime_error("joint variant unavailable");
        AdaptConfig adapt = adapt_cfg;
        adapt.threads = train_cfg.threads;
        auto curves = adaptation_curves(*joint_model, eval_set, adapt, adapt_batch, eval_opts.tau);
        if (curves.empty()) throw std::invalid_argument("no full adaptation batch fits");
        double final_pck = 0;
        for (const auto& c : curves) final_pck += c.pck.back();
        final_pck /= double(curves.size());
        rep.rows.push_back({"adaptive", final_pck});
        write_adapt_csv((fs::path(out_dir) / "ablation_adaptation.csv").string(), curves);
        rep.adaptive_curves = std::move(curves);
    } catch (const std::exception& e) {
        std::cerr << "ablation: variant adaptive failed: " << e.what() << "\n";
        rep.rows.push_back({"adaptive", kFailed});
    }

    write_ablation_csv((fs::path(out_dir) / "ablation.csv").string(), rep);
    return rep;
}

// --- report files ----------------------------------------------------------

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

}  // namespace

void write_eval_csv(const std::string& path, const std::vector<GroupEvalRecord>& records) {
    auto out = open_out(path);
    out << "sample,group,occluded,torso,e_pre,e_post,err_base,err_pred,err_corr,"
           "hit_base,hit_pred,hit_corr\n";
    for (const auto& r : records)
        out << r.sample << "," << r.group << "," << int(r.occluded) << "," << r.torso << ","
            << r.e_pre << "," << r.e_post << "," << r.err_base << "," << r.err_pred << ","
            << r.err_corr << "," << int(r.hit_base) << "," << int(r.hit_pred) << ","
            << int(r.hit_corr) << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

void write_correlation_csv(const std::string& path, const CorrelationReport& report) {
    auto out = open_out(path);
    out << "batch,mean_e_post,pck_corrected,mean_e_pre,pck_predicted\n";
    for (const auto& r : report.rows)
        out << r.batch << "," << r.mean_e_post << "," << r.pck_corrected << "," << r.mean_e_pre
            << "," << r.pck_predicted << "\n";
    out << "# pearson_post_corrected," << report.r_post_corrected << "\n";
    out << "# pearson_pre_predicted," << report.r_pre_predicted << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

void write_ablation_csv(const std::string& path, const AblationReport& report) {
    auto out = open_out(path);
    out << "variant,distal_pck\n";
    for (const auto& r : report.rows) out << r.variant << "," << r.pck << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

void write_adapt_csv(const std::string& path, const std::vector<AdaptCurve>& curves) {
    auto out = open_out(path);
    out << "batch,epoch,self_error,pck\n";
    for (const auto& c : curves)
        for (std::size_t e = 0; e < c.self_error.size(); ++e)
            out << c.batch << "," << e << "," << c.self_error[e] << "," << c.pck[e] << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

void write_search_csv(const std::string& path, const std::vector<SearchRecord>& records) {
    auto out = open_out(path);
    out << "sample,group,cost,evals,err,hit\n";
    for (const auto& r : records)
        out << r.sample << "," << r.group << "," << r.cost << "," << r.evals << "," << r.err
            << "," << int(r.hit) << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

void write_svg_plot(const std::string& path, const std::vector<SvgSeries>& series,
                    const std::string& x_label, const std::string& y_label,
                    const std::string& title, bool points_only) {
    if (series.empty()) throw std::invalid_argument("svg: no series");
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("svg: series size mismatch");
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (xmin > xmax) throw std::invalid_argument("svg: empty series");
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;

    const double w = 640, h = 420, ml = 64, mr = 16, mt = 32, mb = 48;
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto sy = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    auto out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << title << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 4.0;
        const double fy = ymin + (ymax - ymin) * t / 4.0;
        out << "<text x=\"" << sx(fx) << "\" y=\"" << h - mb + 16
            << "\" text-anchor=\"middle\" font-size=\"10\">" << fx << "</text>\n";
        out << "<text x=\"" << ml - 6 << "\" y=\"" << sy(fy) + 3
            << "\" text-anchor=\"end\" font-size=\"10\">" << fy << "</text>\n";
    }
    out << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 10
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    out << "<text x=\"14\" y=\"" << (mt + h - mb) / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
        << (mt + h - mb) / 2 << ")\">" << y_label << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = colors[si % 6];
        if (!points_only && s.x.size() > 1) {
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                out << sx(s.x[i]) << "," << sy(s.y[i]) << " ";
            out << "\"/>\n";
        }
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << "<circle cx=\"" << sx(s.x[i]) << "\" cy=\"" << sy(s.y[i])
                << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        if (!s.label.empty())
            out << "<text x=\"" << w - mr - 6 << "\" y=\"" << mt + 14 * double(si + 1)
                << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">" << s.label
                << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace scai
