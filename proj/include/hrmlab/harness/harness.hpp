#pragma once

// Training loop and the three evaluation protocols: fixed-step sweep,
// per-sample adaptive-threshold sweep, and per-example trajectory capture.

#include "hrmlab/act/act.hpp"
#include "hrmlab/harness/checkpoint.hpp"
#include "hrmlab/harness/config_io.hpp"
#include "hrmlab/sudoku/sudoku.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hrmlab {

struct SweepRow {
    double control = 0.0; // step count or threshold
    double token_acc = 0.0;
    double exact_acc = 0.0;
    double avg_steps = 0.0;
    bool extrapolated = false; // fixed-step sweep only: control > trained m_max
};

struct SweepReport {
    std::string control_name; // "steps" or "threshold"
    bool with_extrapolated_column = false;
    std::vector<SweepRow> rows;

    void write_csv(const std::string& path) const;
};

struct TrajectoryStep {
    double token_acc = 0.0;
    double exact_acc = 0.0;
    double output_norm = 0.0; // mean over positions of the logit-row L2 norm
    double q_halt = 0.0;
    double q_continue = 0.0;
    std::string prediction; // digit string
};

struct TrajectoryRecord {
    int example_id = 0;
    std::vector<TrajectoryStep> steps; // one per executed segment
};

void write_trajectories_csv(const std::string& path, const std::vector<TrajectoryRecord>& records);

enum class TrajectorySelection { BestK, RandomK };

struct TrainResult {
    std::string metrics_path;
    std::string checkpoint_path;
    int steps_run = 0;
    int first_perfect_step = -1; // first step whose train-set eval hit exact 1.0
    double final_token_acc = 0.0;
    double final_exact_acc = 0.0;
    double wall_seconds = 0.0;
};

using Dataset = std::vector<sudoku::PuzzleInstance>;

// Loads dataset.path or generates per the generator spec (seeded from the
// run seed).
Dataset load_or_generate_dataset(const RunConfig& rc);

TrainResult train(const RunConfig& rc);

SweepReport eval_fixed_steps(const HrmModel<float>& model, uint64_t init_seed, const Dataset& data,
                             const std::vector<int>& step_grid, int trained_m_max, int batch_size = 64);

SweepReport eval_adaptive(const HrmModel<float>& model, uint64_t init_seed, const Dataset& data,
                          HaltStrategy strategy, const std::vector<double>& thresholds, int m_max,
                          int batch_size = 64);

std::vector<TrajectoryRecord> capture_trajectories(const HrmModel<float>& model, uint64_t init_seed,
                                                   const Dataset& data, TrajectorySelection selection, int k,
                                                   int m_max, uint64_t selection_seed, int batch_size = 64);

struct CompareResult {
    TrainResult run_a, run_b;
};

// Trains both configs (same dataset and seed required) and writes aligned
// curves plus a wall-clock summary under each run's output_dir parent.
CompareResult compare_architectures(const RunConfig& a, const RunConfig& b, const std::string& report_path);

// The packaged preset behind `compare`: 4+4 two-timescale model vs the
// 8-layer L-only variant, equal hidden size.
std::pair<RunConfig, RunConfig> compare_preset(const RunConfig& base);

// Per-sample halting evaluation used by eval_adaptive; exposed for tests.
struct AdaptiveOutcome {
    std::vector<int> halt_steps;             // per example
    std::vector<int32_t> halt_predictions;   // n * seq
    double token_acc = 0.0, exact_acc = 0.0; // means
    double avg_steps = 0.0;
};
AdaptiveOutcome run_adaptive(const HrmModel<float>& model, uint64_t init_seed, const Dataset& data,
                             const ActConfig& act, int batch_size = 64);

} // namespace hrmlab
