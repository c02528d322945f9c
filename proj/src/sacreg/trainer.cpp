#include "trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "checkpoint.hpp"
#include "losses.hpp"
#include "optimizer.hpp"

namespace fs = std::filesystem;

namespace sacreg {

namespace {

std::string find_input(const fs::path& dir, const std::string& stem) {
    for (const char* ext : {".sacv", ".nii"}) {
        const fs::path p = dir / (stem + ext);
        if (fs::exists(p)) return p.string();
    }
    return {};
}

std::string dir_label(const fs::path& dir) {
    fs::path p = dir;
    if (p.filename().empty()) p = p.parent_path();
    const std::string s = p.filename().string();
    return s.empty() ? std::string("case") : s;
}

bool load_case_dir(const fs::path& dir, EvalCase& out) {
    const std::string mov = find_input(dir, "moving");
    const std::string fix = find_input(dir, "fixed");
    if (mov.empty() || fix.empty()) return false;
    out.id = dir_label(dir);
    out.moving = read_volume(mov);
    out.fixed = read_volume(fix);
    const std::string lm = find_input(dir, "labels_moving");
    const std::string lf = find_input(dir, "labels_fixed");
    if (!lm.empty() && !lf.empty()) {
        out.labels_moving = read_volume(lm);
        out.labels_fixed = read_volume(lf);
        out.has_labels = true;
    }
    const fs::path gt = dir / "gt_flow.sacv";
    if (fs::exists(gt)) {
        out.gt_flow = read_field(gt.string());
        out.has_gt = true;
    }
    return true;
}

DisplacementField zero_field_like(const DisplacementField& f) {
    DisplacementField z;
    z.d = f.d;
    z.h = f.h;
    z.w = f.w;
    z.scale = f.scale;
    z.vectors.assign(3 * f.spatial(), 0.0f);
    return z;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "cannot open for writing: " + path);
    os << text;
    os.flush();
    check(os.good(), "write failed: " + path);
}

}  // namespace

void write_case(const SyntheticCase& sc, const std::string& dir) {
    fs::create_directories(dir);
    const fs::path base(dir);
    write_volume(sc.moving, (base / "moving.sacv").string());
    write_volume(sc.fixed, (base / "fixed.sacv").string());
    write_volume(sc.labels_m, (base / "labels_moving.sacv").string());
    write_volume(sc.labels_f, (base / "labels_fixed.sacv").string());
    write_field(sc.gt_flow, (base / "gt_flow.sacv").string());
}

std::vector<EvalCase> load_cases(const std::string& dir) {
    check(fs::is_directory(dir), "not a directory: " + dir);
    std::vector<EvalCase> cases;
    EvalCase single;
    if (load_case_dir(dir, single)) {
        cases.push_back(std::move(single));
        return cases;
    }
    std::vector<fs::path> subs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) subs.push_back(entry.path());
    }
    std::sort(subs.begin(), subs.end());
    for (const auto& sub : subs) {
        EvalCase c;
        if (load_case_dir(sub, c)) cases.push_back(std::move(c));
    }
    check(!cases.empty(), "no registration cases found under " + dir);
    return cases;
}

EvalCase case_from_synthetic(const SyntheticCase& sc, const std::string& id) {
    EvalCase c;
    c.id = id;
    c.moving = sc.moving;
    c.fixed = sc.fixed;
    c.labels_moving = sc.labels_m;
    c.labels_fixed = sc.labels_f;
    c.has_labels = true;
    c.gt_flow = sc.gt_flow;
    c.has_gt = true;
    return c;
}

std::vector<EvalCase> training_cases(const TrainConfig& cfg) {
    if (!cfg.data_dir.empty()) return load_cases(cfg.data_dir);
    const SyntheticCase sc = synth_pair(cfg.synth_seed, cfg.synth_size,
                                        cfg.synth_max_disp, cfg.synth_sigma);
    std::vector<EvalCase> cases;
    cases.push_back(case_from_synthetic(sc, "synth"));
    return cases;
}

TrainOutcome train(const TrainConfig& cfg, const std::string& resume_path,
                   bool write_outputs,
                   const std::function<void(const IterationRecord&)>& on_iter) {
    cfg.validate();
    const std::vector<EvalCase> cases = training_cases(cfg);
    std::vector<Tensor> moving_t, fixed_t;
    for (const auto& c : cases) {
        moving_t.push_back(volume_to_tensor(c.moving));
        fixed_t.push_back(volume_to_tensor(c.fixed));
    }

    memstats::reset_peak();
    const auto t0 = std::chrono::steady_clock::now();

    TrainOutcome out;
    out.model = std::make_unique<RegistrationModel>(cfg, cfg.seed);
    Adam opt(out.model->named_parameters(), cfg.lr);
    if (!resume_path.empty()) {
        const CheckpointData ck = load_checkpoint(resume_path);
        apply_checkpoint(ck, out.model->named_parameters(), &opt);
    }
    const std::string snapshot = cfg.serialize();

    std::ofstream trace;
    if (write_outputs) {
        trace.open(cfg.trace_path, std::ios::binary);
        check(trace.good(), "cannot open trace file: " + cfg.trace_path);
        trace << "iter,total,sim,reg\n";
    }

    for (int64_t it = opt.iteration(); it < cfg.iterations; ++it) {
        const std::size_t ci =
            static_cast<std::size_t>(it) % cases.size();
        const PyramidResult pr =
            out.model->register_pair(moving_t[ci], fixed_t[ci]);
        auto [loss, rep] = total_loss(moving_t[ci], fixed_t[ci], pr.flow,
                                      cfg.lambda, cfg.ncc_window, cfg.ncc_mean);
        check(std::isfinite(rep.total),
              "non-finite loss at iteration " + std::to_string(it + 1) +
                  " (case " + cases[ci].id + ")");
        backward(loss);
        opt.step();

        const IterationRecord rec{it + 1, rep.total, rep.sim, rep.reg};
        out.trace.push_back(rec);
        if (on_iter) on_iter(rec);
        if (write_outputs) {
            char line[160];
            std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g\n",
                          static_cast<long long>(rec.iter), rec.total, rec.sim,
                          rec.reg);
            trace << line;
            trace.flush();
            if (cfg.checkpoint_every > 0 &&
                (it + 1) % cfg.checkpoint_every == 0 &&
                it + 1 < cfg.iterations) {
                save_checkpoint(cfg.checkpoint_path,
                                static_cast<uint64_t>(opt.iteration()), snapshot,
                                out.model->named_parameters(), &opt);
            }
        }
    }

    const auto t1 = std::chrono::steady_clock::now();
    out.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    out.peak_mb = static_cast<double>(memstats::peak()) / (1024.0 * 1024.0);

    if (write_outputs) {
        save_checkpoint(cfg.checkpoint_path,
                        static_cast<uint64_t>(opt.iteration()), snapshot,
                        out.model->named_parameters(), &opt);
        check(trace.good(), "trace write failed: " + cfg.trace_path);
    }
    return out;
}

CaseEvaluation evaluate_one(const RegistrationModel& model, const EvalCase& c) {
    CaseEvaluation ev;
    ev.id = c.id;
    const Tensor mt = volume_to_tensor(c.moving);
    const Tensor ft = volume_to_tensor(c.fixed);
    const PyramidResult pr = model.register_pair(mt, ft);
    const DisplacementField flow = tensor_to_field(pr.flow, 1);

    ev.has_labels = c.has_labels;
    if (c.has_labels) {
        const Volume warped = warp_volume(c.labels_moving, flow);
        ev.report = evaluate_case(warped, c.labels_fixed, flow);
        ev.identity_mean_dice = dice(c.labels_moving, c.labels_fixed).mean;
    } else {
        ev.report.folding_pct = jacobian_folding(flow);
    }
    if (c.has_gt) {
        ev.has_gt = true;
        ev.epe = endpoint_error(flow, c.gt_flow);
        ev.epe_identity = endpoint_error(zero_field_like(c.gt_flow), c.gt_flow);
    }
    return ev;
}

std::string metrics_csv(const std::vector<CaseEvaluation>& evals) {
    std::string csv = "case_id,mean_dice,hd95,assd,folding_pct\n";
    for (const auto& e : evals) {
        char line[256];
        if (e.has_labels) {
            std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%.6f\n",
                          e.id.c_str(), e.report.dice.mean, e.report.hd95,
                          e.report.assd, e.report.folding_pct);
        } else {
            std::snprintf(line, sizeof line, "%s,nan,nan,nan,%.6f\n",
                          e.id.c_str(), e.report.folding_pct);
        }
        csv += line;
    }
    return csv;
}

std::vector<CaseEvaluation> evaluate(const std::string& ckpt_path,
                                     const std::string& cases_dir,
                                     const std::string& csv_path) {
    const CheckpointData ck = load_checkpoint(ckpt_path);
    check(!ck.config_text.empty(),
          "checkpoint has no embedded config: " + ckpt_path);
    const TrainConfig cfg = parse_config_text(ck.config_text);
    RegistrationModel model(cfg, cfg.seed);
    apply_checkpoint(ck, model.named_parameters(), nullptr);

    std::vector<CaseEvaluation> evals;
    for (const auto& c : load_cases(cases_dir)) {
        evals.push_back(evaluate_one(model, c));
    }
    if (!csv_path.empty()) write_text_file(csv_path, metrics_csv(evals));
    return evals;
}

namespace {

std::vector<std::string> split_axes(const std::string& spec) {
    std::vector<std::string> axes;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto b = tok.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = tok.find_last_not_of(" \t");
        axes.push_back(tok.substr(b, e - b + 1));
    }
    return axes;
}

std::string scale_marks(const std::vector<int>& scales) {
    std::string row;
    for (int s = 5; s >= 2; --s) {
        const bool on =
            std::find(scales.begin(), scales.end(), s) != scales.end();
        row += "| ";
        row += on ? "+" : "-";
        row += " ";
    }
    return row;
}

std::string render_ablation_markdown(const TrainConfig& base,
                                     const std::vector<std::string>& axes,
                                     const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "# SACB ablation report\n\n";
    if (base.data_dir.empty()) {
        os << "Data: synthetic pair, size " << base.synth_size << ", max_disp "
           << base.synth_max_disp << ", seed " << base.synth_seed << ".\n";
    } else {
        os << "Data: cases under `" << base.data_dir << "`.\n";
    }
    os << "Training: " << base.iterations << " iterations per configuration, lr "
       << base.lr << ", lambda " << base.lambda << ", seed " << base.seed
       << ".\n";
    os << "Swept axes: ";
    if (axes.empty()) {
        os << "none (base configuration only)";
    } else {
        for (std::size_t i = 0; i < axes.size(); ++i) {
            if (i) os << ", ";
            os << axes[i];
        }
    }
    os << ". Runs: " << rows.size() << ".\n\n";
    os << "Wall time covers training only; peak memory is the tensor-buffer "
          "high-water mark during training. Rows with every scale disabled "
          "collapse into one (N and mode have no effect there).\n\n";
    os << "| scale_5 | scale_4 | scale_3 | scale_2 | N | mode | mean Dice | "
          "folding % | wall time (s) | peak mem (MB) |\n";
    os << "|:-:|:-:|:-:|:-:|:-:|:-:|--:|--:|--:|--:|\n";
    for (const auto& r : rows) {
        os << scale_marks(r.scales);
        if (r.sacb_active) {
            os << "| " << r.clusters << " | " << context_mode_name(r.mode)
               << " ";
        } else {
            os << "| - | - ";
        }
        char cells[160];
        if (std::isnan(r.mean_dice)) {
            std::snprintf(cells, sizeof cells, "| n/a | %.3f | %.2f | %.1f |\n",
                          r.folding_pct, r.wall_seconds, r.peak_mb);
        } else {
            std::snprintf(cells, sizeof cells,
                          "| %.4f | %.3f | %.2f | %.1f |\n", r.mean_dice,
                          r.folding_pct, r.wall_seconds, r.peak_mb);
        }
        os << cells;
    }
    return os.str();
}

}  // namespace

AblationReport ablate(const TrainConfig& base, const std::string& sweep_spec,
                      const std::string& report_path) {
    base.validate();
    const std::vector<std::string> axes = split_axes(sweep_spec);
    bool sweep_scales = false, sweep_clusters = false, sweep_mode = false;
    for (const auto& a : axes) {
        if (a == "scales") {
            sweep_scales = true;
        } else if (a == "clusters") {
            sweep_clusters = true;
        } else if (a == "mode") {
            sweep_mode = true;
        } else {
            check(false, "unknown sweep axis '" + a +
                             "' (expected scales, clusters, mode)");
        }
    }

    std::vector<std::vector<int>> scale_sets;
    if (sweep_scales) {
        scale_sets = {{}, {5}, {5, 4}, {5, 4, 3}, {5, 4, 3, 2}};
    } else {
        scale_sets = {base.sacb_scales};
    }
    const std::vector<int> cluster_vals =
        sweep_clusters ? std::vector<int>{5, 7, 9, 11}
                       : std::vector<int>{base.sacb_clusters};
    const std::vector<ContextMode> mode_vals =
        sweep_mode ? std::vector<ContextMode>{ContextMode::spatial,
                                              ContextMode::channel,
                                              ContextMode::mix}
                   : std::vector<ContextMode>{base.sacb_mode};

    AblationReport report;
    bool no_sacb_done = false;
    for (const auto& scales : scale_sets) {
        for (const int n : cluster_vals) {
            for (const ContextMode mode : mode_vals) {
                const bool active = !scales.empty();
                if (!active) {
                    if (no_sacb_done) continue;
                    no_sacb_done = true;
                }
                TrainConfig cfg = base;
                cfg.sacb_scales = scales;
                if (active) {
                    cfg.sacb_clusters = n;
                    cfg.sacb_mode = mode;
                }
                TrainOutcome run = train(cfg, "", /*write_outputs=*/false);

                double dice_sum = 0.0, fold_sum = 0.0;
                int dice_n = 0, fold_n = 0;
                for (const auto& c : training_cases(cfg)) {
                    const CaseEvaluation ev = evaluate_one(*run.model, c);
                    if (ev.has_labels) {
                        dice_sum += ev.report.dice.mean;
                        ++dice_n;
                    }
                    fold_sum += ev.report.folding_pct;
                    ++fold_n;
                }

                AblationRow row;
                row.scales = scales;
                row.sacb_active = active;
                row.clusters = active ? n : 0;
                row.mode = mode;
                row.mean_dice = dice_n > 0
                                    ? dice_sum / dice_n
                                    : std::numeric_limits<double>::quiet_NaN();
                row.folding_pct = fold_n > 0 ? fold_sum / fold_n : 0.0;
                row.wall_seconds = run.wall_seconds;
                row.peak_mb = run.peak_mb;
                report.rows.push_back(std::move(row));
            }
        }
    }

    report.markdown = render_ablation_markdown(base, axes, report.rows);
    if (!report_path.empty()) write_text_file(report_path, report.markdown);
    return report;
}

}  // namespace sacreg
