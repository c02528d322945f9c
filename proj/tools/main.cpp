// sacreg command-line front end: synthetic data generation, training,
// registration, evaluation, and ablation sweeps.

#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "sacreg/checkpoint.hpp"
#include "sacreg/config.hpp"
#include "sacreg/metrics.hpp"
#include "sacreg/model.hpp"
#include "sacreg/trainer.hpp"
#include "sacreg/volume.hpp"

namespace fs = std::filesystem;
using namespace sacreg;

namespace {

struct SynthArgs {
    uint64_t seed = 7;
    int size = 48;
    double max_disp = 4.0;
    double sigma = 3.0;
    int count = 1;
    std::string out;
};

struct TrainArgs {
    std::string config;
    std::string resume;
};

struct RegisterArgs {
    std::string ckpt, moving, fixed, out_flow;
    bool diagnostics = false;
};

struct EvalArgs {
    std::string ckpt, cases, csv;
};

struct AblateArgs {
    std::string config;
    std::string sweep;
    std::string out;
};

int run_synth(const SynthArgs& a) {
    for (int i = 0; i < a.count; ++i) {
        const SyntheticCase sc =
            synth_pair(a.seed + static_cast<uint64_t>(i), a.size, a.max_disp,
                       a.sigma);
        char name[32];
        std::snprintf(name, sizeof name, "case_%03d", i);
        const std::string dir = (fs::path(a.out) / name).string();
        write_case(sc, dir);
        std::printf("wrote %s (size %d^3, gt max |u| = %.3f voxels)\n",
                    dir.c_str(), a.size, sc.gt_flow.max_norm());
    }
    return 0;
}

int run_train(const TrainArgs& a) {
    const TrainConfig cfg = load_config(a.config);
    const int every = std::max(1, cfg.iterations / 25);
    const TrainOutcome out =
        train(cfg, a.resume, /*write_outputs=*/true,
              [&](const IterationRecord& r) {
                  if (r.iter % every == 0 || r.iter == cfg.iterations) {
                      std::printf("iter %5lld/%d  total %.6f  sim %.6f  reg %.6f\n",
                                  static_cast<long long>(r.iter), cfg.iterations,
                                  r.total, r.sim, r.reg);
                      std::fflush(stdout);
                  }
              });
    if (out.trace.empty()) {
        std::printf("nothing to do: checkpoint already at %d iterations\n",
                    cfg.iterations);
    } else {
        std::printf("trained %zu iterations in %.1f s (peak %.1f MB)\n",
                    out.trace.size(), out.wall_seconds, out.peak_mb);
    }
    std::printf("checkpoint: %s\ntrace: %s\n", cfg.checkpoint_path.c_str(),
                cfg.trace_path.c_str());
    return 0;
}

int run_register(const RegisterArgs& a) {
    const CheckpointData ck = load_checkpoint(a.ckpt);
    check(!ck.config_text.empty(), "checkpoint has no embedded config: " + a.ckpt);
    const TrainConfig cfg = parse_config_text(ck.config_text);
    RegistrationModel model(cfg, cfg.seed);
    apply_checkpoint(ck, model.named_parameters(), nullptr);

    const Volume moving = read_volume(a.moving);
    const Volume fixed = read_volume(a.fixed);
    const PyramidResult pr =
        model.register_pair(volume_to_tensor(moving), volume_to_tensor(fixed));
    const DisplacementField flow = tensor_to_field(pr.flow, 1);
    write_field(flow, a.out_flow);

    if (a.diagnostics) {
        for (const auto& d : pr.diagnostics) {
            std::printf("scale %d: residual flow max %.4f, mean %.4f voxels\n",
                        d.level, d.max_norm, d.mean_norm);
        }
        std::printf("composed flow: max |u| %.4f voxels, folding %.4f%%\n",
                    flow.max_norm(), jacobian_folding(flow));
    }
    std::printf("wrote %s\n", a.out_flow.c_str());
    return 0;
}

int run_eval(const EvalArgs& a) {
    const std::vector<CaseEvaluation> evals = evaluate(a.ckpt, a.cases, a.csv);
    std::printf("%-16s %10s %10s %10s %10s %10s\n", "case_id", "mean_dice",
                "hd95(mm)", "assd(mm)", "folding%", "epe(vox)");
    for (const auto& e : evals) {
        char dice_s[32] = "n/a", hd_s[32] = "n/a", as_s[32] = "n/a",
             epe_s[32] = "n/a";
        if (e.has_labels) {
            std::snprintf(dice_s, sizeof dice_s, "%.4f", e.report.dice.mean);
            std::snprintf(hd_s, sizeof hd_s, "%.4f", e.report.hd95);
            std::snprintf(as_s, sizeof as_s, "%.4f", e.report.assd);
        }
        if (e.has_gt) std::snprintf(epe_s, sizeof epe_s, "%.4f", e.epe);
        std::printf("%-16s %10s %10s %10s %10.4f %10s\n", e.id.c_str(), dice_s,
                    hd_s, as_s, e.report.folding_pct, epe_s);
    }
    if (!a.csv.empty()) std::printf("wrote %s\n", a.csv.c_str());
    return 0;
}

int run_ablate(const AblateArgs& a) {
    const TrainConfig cfg = load_config(a.config);
    const AblationReport rep = ablate(cfg, a.sweep, a.out);
    std::fputs(rep.markdown.c_str(), stdout);
    std::printf("\nwrote %s\n", a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deformable 3D registration via clustered adaptive convolution "
                 "and pyramid similarity matching"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand(
        "synth", "generate synthetic registration cases with ground truth");
    synth->add_option("--seed", synth_args.seed, "base RNG seed");
    synth->add_option("--size", synth_args.size,
                      "cubic volume extent (multiple of 16)");
    synth->add_option("--max-disp", synth_args.max_disp,
                      "maximum ground-truth displacement, voxels");
    synth->add_option("--sigma", synth_args.sigma,
                      "smoothing sigma of the ground-truth field");
    synth->add_option("--count", synth_args.count, "number of cases")
        ->check(CLI::PositiveNumber);
    synth->add_option("--out", synth_args.out, "output dataset directory")
        ->required();

    TrainArgs train_args;
    CLI::App* train_cmd =
        app.add_subcommand("train", "optimize a model per a config file");
    train_cmd->add_option("--config", train_args.config, "config file")
        ->required();
    train_cmd->add_option("--resume", train_args.resume,
                          "checkpoint to continue from");

    RegisterArgs reg_args;
    CLI::App* reg = app.add_subcommand(
        "register", "register one pair and write the displacement field");
    reg->add_option("--ckpt", reg_args.ckpt, "checkpoint file")->required();
    reg->add_option("--moving", reg_args.moving, "moving volume")->required();
    reg->add_option("--fixed", reg_args.fixed, "fixed volume")->required();
    reg->add_option("--out-flow", reg_args.out_flow, "output field path")
        ->required();
    reg->add_flag("--diagnostics", reg_args.diagnostics,
                  "print per-scale flow statistics");

    EvalArgs eval_args;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "evaluate a checkpoint over a case directory");
    eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--cases", eval_args.cases, "dataset directory")
        ->required();
    eval_cmd->add_option("--csv", eval_args.csv, "metrics CSV output path")
        ->required();

    AblateArgs ablate_args;
    CLI::App* abl = app.add_subcommand(
        "ablate", "sweep SACB configurations and write a markdown report");
    abl->add_option("--config", ablate_args.config, "base config file")
        ->required();
    abl->add_option("--sweep", ablate_args.sweep,
                    "comma-separated axes out of: scales, clusters, mode "
                    "(empty: base config only)");
    abl->add_option("--out", ablate_args.out, "report output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(synth_args);
        if (train_cmd->parsed()) return run_train(train_args);
        if (reg->parsed()) return run_register(reg_args);
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (abl->parsed()) return run_ablate(ablate_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
