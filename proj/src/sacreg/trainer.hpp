#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "config.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "volume.hpp"

namespace sacreg {

// ---------------------------------------------------------------------------
// dataset plumbing
//
// A case directory holds one registration pair:
//   moving.sacv fixed.sacv                      (required; .nii also accepted)
//   labels_moving.sacv labels_fixed.sacv        (optional, SACV only)
//   gt_flow.sacv                                (optional ground-truth field)
// A dataset directory is either a single case directory or a directory of
// case subdirectories (scanned in sorted name order).
// ---------------------------------------------------------------------------

struct EvalCase {
    std::string id;
    Volume moving, fixed;
    bool has_labels = false;
    Volume labels_moving, labels_fixed;
    bool has_gt = false;
    DisplacementField gt_flow;
};

// writes one case directory (SACV files as listed above) under dir
void write_case(const SyntheticCase& sc, const std::string& dir);

// loads every case found under dir; throws if none
std::vector<EvalCase> load_cases(const std::string& dir);

EvalCase case_from_synthetic(const SyntheticCase& sc, const std::string& id);

// the pair(s) a config trains on: data_dir when set, otherwise the seeded
// synthetic case
std::vector<EvalCase> training_cases(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct IterationRecord {
    int64_t iter = 0;  // 1-based optimizer step count
    double total = 0.0, sim = 0.0, reg = 0.0;
};

struct TrainOutcome {
    std::vector<IterationRecord> trace;  // this run's iterations only
    double wall_seconds = 0.0;
    double peak_mb = 0.0;  // tensor-buffer high-water mark during training
    std::unique_ptr<RegistrationModel> model;
};

// Runs the optimization loop. With write_outputs, appends nothing: the trace
// CSV (iter,total,sim,reg) is rewritten from scratch and checkpoints go to
// cfg.checkpoint_path (periodic saves overwrite the same file; the final
// state is always saved). resume_path restores parameters, Adam moments and
// the iteration counter, then continues to cfg.iterations.
TrainOutcome train(const TrainConfig& cfg, const std::string& resume_path = "",
                   bool write_outputs = true,
                   const std::function<void(const IterationRecord&)>& on_iter = {});

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct CaseEvaluation {
    std::string id;
    bool has_labels = false;
    MetricReport report;  // dice/hd95/assd meaningful only when has_labels
    double identity_mean_dice = 0.0;  // dice(labels_moving, labels_fixed)
    bool has_gt = false;
    double epe = 0.0;           // mean endpoint error of flow vs gt, voxels
    double epe_identity = 0.0;  // endpoint error of the identity transform
};

CaseEvaluation evaluate_one(const RegistrationModel& model, const EvalCase& c);

// loads the checkpoint (model config comes from its embedded snapshot),
// registers every case under cases_dir, writes the metrics CSV
// (case_id,mean_dice,hd95,assd,folding_pct; nan for label-less cases) unless
// csv_path is empty, and returns the per-case evaluations
std::vector<CaseEvaluation> evaluate(const std::string& ckpt_path,
                                     const std::string& cases_dir,
                                     const std::string& csv_path);

std::string metrics_csv(const std::vector<CaseEvaluation>& evals);

// ---------------------------------------------------------------------------
// ablation sweeps
// ---------------------------------------------------------------------------

struct AblationRow {
    std::vector<int> scales;  // enabled SACB scales, descending
    int clusters = 0;         // 0 when SACB is fully disabled
    bool sacb_active = false;
    ContextMode mode = ContextMode::spatial;
    double mean_dice = 0.0;
    double folding_pct = 0.0;
    double wall_seconds = 0.0;
    double peak_mb = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::string markdown;
};

// sweep_spec: comma-separated axis names out of {scales, clusters, mode}.
//   scales   -> the prefix chain {}, {5}, {5,4}, {5,4,3}, {5,4,3,2}
//   clusters -> N in {5, 7, 9, 11}
//   mode     -> {spatial, channel, mix}
// Unswept axes stay at the base config's values; an empty spec runs the base
// config once. Configurations with no SACB scale enabled collapse into a
// single row (cluster count and descriptor mode have no effect there).
// Each cell trains from scratch and evaluates on its training cases; the
// report lands at report_path unless that is empty.
AblationReport ablate(const TrainConfig& base, const std::string& sweep_spec,
                      const std::string& report_path);

}  // namespace sacreg
