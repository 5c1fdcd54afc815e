// hrmlab: data generation, training, the three evaluation protocols,
// architecture comparison, and kernel gradient verification.

#include <CLI11.hpp>

#include "hrmlab/harness/harness.hpp"
#include "hrmlab/tensor/gradcheck_suite.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace hrmlab;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitParse = 2;
constexpr int kExitValidation = 3;

std::string default_out_dir() {
    if (const char* env = std::getenv("HRMLAB_OUT_DIR")) return env;
    return "runs";
}

// every successful command leaves an echo of its effective invocation next
// to its artifact, enough to reproduce the run exactly
void write_invocation_echo(const std::string& artifact_path, const nlohmann::json& invocation) {
    std::ofstream f(artifact_path + ".invocation.json");
    f << invocation.dump(2) << "\n";
}

struct TrainArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
};

RunConfig resolve_run_config(const TrainArgs& args, nlohmann::json* echo) {
    RunConfig rc = args.config_path.empty() ? config_from_overrides(args.overrides, echo)
                                            : load_config(args.config_path, args.overrides, echo);
    if (!args.out_dir.empty()) rc.output_dir = args.out_dir;
    if (rc.output_dir.empty()) rc.output_dir = (fs::path(default_out_dir()) / "run").string();
    if (echo) (*echo)["output_dir"] = rc.output_dir;
    return rc;
}

int cmd_gen_data(int side, int count, int blanks, uint64_t seed, const std::string& out) {
    auto data = sudoku::generate_dataset(count, side, blanks, seed);
    for (const auto& p : data) {
        if (!sudoku::check_valid(p.solution, side)) throw RuntimeFailure("generated solution failed validation");
        auto solved = sudoku::solve_backtracking(p.givens, side);
        if (!solved) throw RuntimeFailure("generated givens became unsatisfiable");
    }
    sudoku::write_dataset_file(out, data);
    write_invocation_echo(out, {{"command", "gen-data"},
                                {"side", side},
                                {"count", count},
                                {"blanks", blanks},
                                {"seed", seed},
                                {"out", out}});
    std::cout << "wrote " << data.size() << " side-" << side << " puzzles to " << out << "\n";
    return 0;
}

int cmd_train(const TrainArgs& args) {
    nlohmann::json echo;
    RunConfig rc = resolve_run_config(args, &echo);
    TrainResult res = train(rc);
    std::cout << "trained " << res.steps_run << " steps in " << res.wall_seconds << "s; final train exact_acc "
              << res.final_exact_acc << "; checkpoint " << res.checkpoint_path << "\n";
    return 0;
}

int cmd_eval_fixed(const std::string& ckpt, const std::string& data_path, const std::string& steps,
                   std::string out) {
    RestoredModel rm = restore_model(ckpt);
    Dataset data = sudoku::parse_dataset_file(data_path);
    auto grid = parse_int_list(steps);
    auto rep = eval_fixed_steps(rm.model, rm.state_init_seed(), data, grid, rm.model.config().m_max);
    if (out.empty()) out = (fs::path(default_out_dir()) / "eval_fixed.csv").string();
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
    rep.write_csv(out);
    write_invocation_echo(out, {{"command", "eval-fixed"},
                                {"checkpoint", ckpt},
                                {"data", data_path},
                                {"steps", steps},
                                {"out", out}});
    std::cout << "fixed-step sweep over " << grid.size() << " step counts -> " << out << "\n";
    return 0;
}

int cmd_eval_adaptive(const std::string& ckpt, const std::string& data_path, const std::string& strategy,
                      const std::string& thresholds, std::string out) {
    RestoredModel rm = restore_model(ckpt);
    Dataset data = sudoku::parse_dataset_file(data_path);
    auto grid = parse_float_grid(thresholds);
    auto rep = eval_adaptive(rm.model, rm.state_init_seed(), data, halt_strategy_from_string(strategy), grid,
                             rm.model.config().m_max);
    if (out.empty()) out = (fs::path(default_out_dir()) / "eval_adaptive.csv").string();
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
    rep.write_csv(out);
    write_invocation_echo(out, {{"command", "eval-adaptive"},
                                {"checkpoint", ckpt},
                                {"data", data_path},
                                {"strategy", strategy},
                                {"thresholds", thresholds},
                                {"out", out}});
    std::cout << "adaptive sweep over " << grid.size() << " thresholds -> " << out << "\n";
    return 0;
}

int cmd_trajectories(const std::string& ckpt, const std::string& data_path, const std::string& select, int k,
                     uint64_t seed, std::string out) {
    RestoredModel rm = restore_model(ckpt);
    Dataset data = sudoku::parse_dataset_file(data_path);
    TrajectorySelection sel;
    if (select == "best_k")
        sel = TrajectorySelection::BestK;
    else if (select == "random_k")
        sel = TrajectorySelection::RandomK;
    else
        throw ValidationError(strcat("unknown selection '", select, "' (best_k|random_k)"));
    auto recs = capture_trajectories(rm.model, rm.state_init_seed(), data, sel, k, rm.model.config().m_max,
                                     seed);
    if (out.empty()) out = (fs::path(default_out_dir()) / "trajectories.csv").string();
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
    write_trajectories_csv(out, recs);
    write_invocation_echo(out, {{"command", "trajectories"},
                                {"checkpoint", ckpt},
                                {"data", data_path},
                                {"select", select},
                                {"k", k},
                                {"seed", seed},
                                {"out", out}});
    std::cout << "captured " << recs.size() << " trajectories -> " << out << "\n";
    return 0;
}

int cmd_compare(const TrainArgs& args) {
    nlohmann::json echo;
    RunConfig base = resolve_run_config(args, &echo);
    auto [a, b] = compare_preset(base);
    CompareResult res = compare_architectures(a, b, base.output_dir);
    std::cout << "compare: two-timescale 4+4 " << res.run_a.wall_seconds << "s (exact "
              << res.run_a.final_exact_acc << ") vs 8-layer L-only " << res.run_b.wall_seconds << "s (exact "
              << res.run_b.final_exact_acc << "); report in " << base.output_dir << "\n";
    return 0;
}

int cmd_grad_check(int seeds, double tolerance) {
    auto results = gradcheck_kernel_suite(seeds);
    bool ok = true;
    for (const auto& r : results) {
        bool pass = r.max_rel_err <= tolerance;
        ok = ok && pass;
        std::printf("%-24s max_rel_err %.3e  %s\n", r.name.c_str(), r.max_rel_err, pass ? "ok" : "FAIL");
    }
    return ok ? 0 : kExitRuntime;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hrmlab: a desk-scale lab for two-timescale latent recurrent reasoning on Sudoku"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate an oracle-verified puzzle dataset CSV");
    int side = 9, count = 64, blanks = 30;
    uint64_t gen_seed = 1;
    std::string gen_out = "data.csv";
    gen->add_option("--side", side, "grid side (4 or 9)");
    gen->add_option("--count", count, "number of puzzles");
    gen->add_option("--blanks", blanks, "cells removed per puzzle");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output CSV path");

    // train
    auto* tr = app.add_subcommand("train", "train a model per a JSON run config");
    TrainArgs train_args;
    tr->add_option("--config", train_args.config_path, "run config JSON (defaults used when omitted)");
    tr->add_option("--set", train_args.overrides, "dotted key=value override (repeatable)");
    tr->add_option("--out-dir", train_args.out_dir, "output directory (overrides config)");

    // eval-fixed
    auto* ef = app.add_subcommand("eval-fixed", "fixed-step sweep: same step count for every example");
    std::string ef_ckpt, ef_data, ef_steps = "1,2,4", ef_out;
    ef->add_option("--checkpoint", ef_ckpt)->required();
    ef->add_option("--data", ef_data)->required();
    ef->add_option("--steps", ef_steps, "comma list of step counts");
    ef->add_option("--out", ef_out, "report CSV path");

    // eval-adaptive
    auto* ea = app.add_subcommand("eval-adaptive", "per-sample halting sweep over thresholds");
    std::string ea_ckpt, ea_data, ea_strategy = "q_halt", ea_thresholds = "0.1:0.9:0.1", ea_out;
    ea->add_option("--checkpoint", ea_ckpt)->required();
    ea->add_option("--data", ea_data)->required();
    ea->add_option("--strategy", ea_strategy, "q_halt | q_diff");
    ea->add_option("--thresholds", ea_thresholds, "start:stop:step or comma list");
    ea->add_option("--out", ea_out, "report CSV path");

    // trajectories
    auto* tj = app.add_subcommand("trajectories", "per-example per-segment metric capture");
    std::string tj_ckpt, tj_data, tj_select = "best_k", tj_out;
    int tj_k = 10;
    uint64_t tj_seed = 1;
    tj->add_option("--checkpoint", tj_ckpt)->required();
    tj->add_option("--data", tj_data)->required();
    tj->add_option("--select", tj_select, "best_k | random_k");
    tj->add_option("-k,--k", tj_k, "number of examples");
    tj->add_option("--seed", tj_seed, "selection seed for random_k");
    tj->add_option("--out", tj_out, "output CSV path");

    // compare
    auto* cp = app.add_subcommand("compare", "train the 4+4 model and the 8-layer L-only variant side by side");
    TrainArgs cmp_args;
    cp->add_option("--config", cmp_args.config_path, "base run config JSON");
    cp->add_option("--set", cmp_args.overrides, "dotted key=value override (repeatable)");
    cp->add_option("--out-dir", cmp_args.out_dir, "report/output directory");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference verification of every kernel");
    int gc_seeds = 20;
    double gc_tol = 1e-5;
    gc->add_option("--seeds", gc_seeds, "random seeds per kernel");
    gc->add_option("--tolerance", gc_tol, "max relative error allowed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitParse;
    }

    try {
        if (*gen) return cmd_gen_data(side, count, blanks, gen_seed, gen_out);
        if (*tr) return cmd_train(train_args);
        if (*ef) return cmd_eval_fixed(ef_ckpt, ef_data, ef_steps, ef_out);
        if (*ea) return cmd_eval_adaptive(ea_ckpt, ea_data, ea_strategy, ea_thresholds, ea_out);
        if (*tj) return cmd_trajectories(tj_ckpt, tj_data, tj_select, tj_k, tj_seed, tj_out);
        if (*cp) return cmd_compare(cmp_args);
        if (*gc) return cmd_grad_check(gc_seeds, gc_tol);
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitParse;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
