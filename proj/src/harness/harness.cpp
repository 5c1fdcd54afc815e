#include "hrmlab/harness/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

namespace hrmlab {

namespace fs = std::filesystem;

namespace {

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) fs::create_directories(dir);
}

struct EncodedDataset {
    int side = 0;
    int seq = 0;
    std::vector<int32_t> inputs;  // n * seq
    std::vector<int32_t> targets; // n * seq
    int size = 0;
};

EncodedDataset encode_all(const Dataset& data) {
    if (data.empty()) throw ValidationError("dataset is empty");
    EncodedDataset e;
    e.side = data[0].side;
    e.seq = e.side * e.side;
    e.size = static_cast<int>(data.size());
    e.inputs.reserve(data.size() * static_cast<size_t>(e.seq));
    e.targets.reserve(data.size() * static_cast<size_t>(e.seq));
    for (const auto& p : data) {
        auto enc = sudoku::encode(p);
        e.inputs.insert(e.inputs.end(), enc.input.begin(), enc.input.end());
        e.targets.insert(e.targets.end(), enc.target.begin(), enc.target.end());
    }
    return e;
}

void check_model_matches(const ModelConfig& m, int side) {
    if (m.seq_len != side * side || m.vocab_size != side + 1)
        throw ValidationError(strcat("model (seq_len ", m.seq_len, ", vocab ", m.vocab_size,
                                     ") does not fit side-", side, " puzzles"));
}

// Runs up to max_segments full-batch segments with recording off. Rows that
// halt are frozen: their state stops updating and the callback sees them in
// the halted mask. on_segment returns halt flags for the current segment.
void roll_segments(const HrmModel<float>& model, std::span<const int32_t> inputs, int batch,
                   uint64_t init_seed, int max_segments,
                   const std::function<std::vector<uint8_t>(int, const SegmentOutcome<float>&,
                                                            const std::vector<uint8_t>&)>& on_segment) {
    Tape<float> tape;
    tape.set_recording(false);
    LatentState<float> state = model.init_state(batch, init_seed);
    auto x = model.embed_input(tape, inputs, batch);
    std::vector<uint8_t> halted(static_cast<size_t>(batch), 0);
    size_t row_elems = static_cast<size_t>(model.config().seq_len) *
                       static_cast<size_t>(model.config().hidden_dim);
    for (int m = 1; m <= max_segments; ++m) {
        auto outcome = model.recurrent_forward(tape, state, x);
        auto halt_now = on_segment(m, outcome, halted);
        bool all_halted = true;
        for (int i = 0; i < batch; ++i) {
            size_t si = static_cast<size_t>(i);
            if (!halted[si]) {
                std::copy(outcome.next_state.z_l.ptr() + si * row_elems,
                          outcome.next_state.z_l.ptr() + (si + 1) * row_elems, state.z_l.ptr() + si * row_elems);
                if (state.z_h.defined())
                    std::copy(outcome.next_state.z_h.ptr() + si * row_elems,
                              outcome.next_state.z_h.ptr() + (si + 1) * row_elems,
                              state.z_h.ptr() + si * row_elems);
                state.segment_index[si] = m;
                if (halt_now[si]) halted[si] = 1;
            }
            if (!halted[si]) all_halted = false;
        }
        state.halted = halted;
        if (all_halted) break;
    }
}

double row_token_acc(std::span<const int32_t> pred, std::span<const int32_t> tgt) {
    return sudoku::token_accuracy(pred, tgt);
}

} // namespace

void SweepReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError(strcat("cannot write report ", path));
    out << control_name << ",token_acc,exact_acc,avg_halt_steps";
    if (with_extrapolated_column) out << ",extrapolated";
    out << "\n";
    for (const auto& r : rows) {
        if (control_name == "steps")
            out << static_cast<int>(r.control);
        else
            out << fmt6(r.control);
        out << ',' << fmt6(r.token_acc) << ',' << fmt6(r.exact_acc) << ',' << fmt6(r.avg_steps);
        if (with_extrapolated_column) out << ',' << (r.extrapolated ? 1 : 0);
        out << "\n";
    }
    if (!out) throw IoError(strcat("write failed for ", path));
}

void write_trajectories_csv(const std::string& path, const std::vector<TrajectoryRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError(strcat("cannot write trajectories ", path));
    out << "example_id,segment,token_acc,exact_acc,output_norm,q_halt,q_continue,prediction\n";
    for (const auto& rec : records)
        for (size_t s = 0; s < rec.steps.size(); ++s) {
            const auto& st = rec.steps[s];
            out << rec.example_id << ',' << (s + 1) << ',' << fmt6(st.token_acc) << ',' << fmt6(st.exact_acc)
                << ',' << fmt6(st.output_norm) << ',' << fmt6(st.q_halt) << ',' << fmt6(st.q_continue) << ','
                << st.prediction << "\n";
        }
    if (!out) throw IoError(strcat("write failed for ", path));
}

Dataset load_or_generate_dataset(const RunConfig& rc) {
    if (!rc.dataset.path.empty()) return sudoku::parse_dataset_file(rc.dataset.path);
    return sudoku::generate_dataset(rc.dataset.count, rc.dataset.side, rc.dataset.blanks,
                                    derive_seed(rc.seed, "dataset"));
}

SweepReport eval_fixed_steps(const HrmModel<float>& model, uint64_t init_seed, const Dataset& data,
                             const std::vector<int>& step_grid, int trained_m_max, int batch_size) {
    if (data.empty()) throw ValidationError("eval_fixed_steps: empty dataset");
    if (step_grid.empty()) throw ValidationError("eval_fixed_steps: empty step grid");
    for (int s : step_grid)
        if (s < 1) throw ValidationError(strcat("eval_fixed_steps: step count ", s, " must be >= 1"));
    EncodedDataset enc = encode_all(data);
    check_model_matches(model.config(), enc.side);
    int max_s = *std::max_element(step_grid.begin(), step_grid.end());

    // metric sums per requested step count
    std::map<int, std::pair<double, double>> sums; // s -> (token_sum, exact_sum)
    for (int s : step_grid) sums.emplace(s, std::make_pair(0.0, 0.0));

    for (int base = 0; base < enc.size; base += batch_size) {
        int b = std::min(batch_size, enc.size - base);
        std::span<const int32_t> in(enc.inputs.data() + static_cast<size_t>(base) * enc.seq,
                                    static_cast<size_t>(b) * enc.seq);
        roll_segments(model, in, b, init_seed, max_s,
                      [&](int m, const SegmentOutcome<float>& out, const std::vector<uint8_t>&) {
                          auto it = sums.find(m);
                          if (it != sums.end()) {
                              auto preds = argmax_tokens(out.y_hat);
                              for (int i = 0; i < b; ++i) {
                                  std::span<const int32_t> p(preds.data() + static_cast<size_t>(i) * enc.seq,
                                                             static_cast<size_t>(enc.seq));
                                  std::span<const int32_t> t(
                                      enc.targets.data() + static_cast<size_t>(base + i) * enc.seq,
                                      static_cast<size_t>(enc.seq));
                                  double ta = row_token_acc(p, t);
                                  it->second.first += ta;
                                  it->second.second += ta == 1.0 ? 1.0 : 0.0;
                              }
                          }
                          return std::vector<uint8_t>(static_cast<size_t>(b), 0); // never halt early
                      });
    }

    SweepReport rep;
    rep.control_name = "steps";
    rep.with_extrapolated_column = true;
    for (int s : step_grid) {
        SweepRow row;
        row.control = s;
        row.token_acc = sums.at(s).first / enc.size;
        row.exact_acc = sums.at(s).second / enc.size;
        row.avg_steps = s;
        row.extrapolated = s > trained_m_max;
        rep.rows.push_back(row);
    }
    return rep;
}

AdaptiveOutcome run_adaptive(const HrmModel<float>& model, uint64_t init_seed, const Dataset& data,
                             const ActConfig& act, int batch_size) {
    if (data.empty()) throw ValidationError("run_adaptive: empty dataset");
    EncodedDataset enc = encode_all(data);
    check_model_matches(model.config(), enc.side);

    AdaptiveOutcome out;
    out.halt_steps.assign(static_cast<size_t>(enc.size), 0);
    out.halt_predictions.assign(static_cast<size_t>(enc.size) * enc.seq, 0);

    for (int base = 0; base < enc.size; base += batch_size) {
        int b = std::min(batch_size, enc.size - base);
        std::span<const int32_t> in(enc.inputs.data() + static_cast<size_t>(base) * enc.seq,
                                    static_cast<size_t>(b) * enc.seq);
        roll_segments(
            model, in, b, init_seed, act.m_max,
            [&](int m, const SegmentOutcome<float>& o, const std::vector<uint8_t>& halted) {
                std::vector<uint8_t> halt(static_cast<size_t>(b), 0);
                std::vector<int32_t> preds;
                for (int i = 0; i < b; ++i) {
                    if (halted[static_cast<size_t>(i)]) continue;
                    if (infer_halt_decision(o.q_halt(i), o.q_continue(i), act, m)) {
                        halt[static_cast<size_t>(i)] = 1;
                        if (preds.empty()) preds = argmax_tokens(o.y_hat);
                        out.halt_steps[static_cast<size_t>(base + i)] = m;
                        std::copy(preds.begin() + static_cast<ptrdiff_t>(i) * enc.seq,
                                  preds.begin() + static_cast<ptrdiff_t>(i + 1) * enc.seq,
                                  out.halt_predictions.begin() + static_cast<ptrdiff_t>(base + i) * enc.seq);
                    }
                }
                return halt;
            });
    }

    double tok = 0, ex = 0, steps = 0;
    for (int i = 0; i < enc.size; ++i) {
        std::span<const int32_t> p(out.halt_predictions.data() + static_cast<size_t>(i) * enc.seq,
                                   static_cast<size_t>(enc.seq));
        std::span<const int32_t> t(enc.targets.data() + static_cast<size_t>(i) * enc.seq,
                                   static_cast<size_t>(enc.seq));
        double ta = row_token_acc(p, t);
        tok += ta;
        ex += ta == 1.0 ? 1.0 : 0.0;
        steps += out.halt_steps[static_cast<size_t>(i)];
    }
    out.token_acc = tok / enc.size;
    out.exact_acc = ex / enc.size;
    out.avg_steps = steps / enc.size;
    return out;
}

SweepReport eval_adaptive(const HrmModel<float>& model, uint64_t init_seed, const Dataset& data,
                          HaltStrategy strategy, const std::vector<double>& thresholds, int m_max,
                          int batch_size) {
    if (strategy == HaltStrategy::FixedSteps)
        throw ValidationError("eval_adaptive: strategy must be q_halt_threshold or q_diff_threshold");
    SweepReport rep;
    rep.control_name = "threshold";
    for (double th : thresholds) {
        if (th <= 0.0 || th >= 1.0)
            throw ValidationError(strcat("eval_adaptive: threshold ", th, " outside (0,1)"));
        ActConfig act;
        act.m_max = m_max;
        act.halt_strategy = strategy;
        act.threshold = th;
        act.fixed_steps = m_max;
        auto res = run_adaptive(model, init_seed, data, act, batch_size);
        SweepRow row;
        row.control = th;
        row.token_acc = res.token_acc;
        row.exact_acc = res.exact_acc;
        row.avg_steps = res.avg_steps;
        rep.rows.push_back(row);
    }
    return rep;
}

std::vector<TrajectoryRecord> capture_trajectories(const HrmModel<float>& model, uint64_t init_seed,
                                                   const Dataset& data, TrajectorySelection selection, int k,
                                                   int m_max, uint64_t selection_seed, int batch_size) {
    if (k < 0 || static_cast<size_t>(k) > data.size())
        throw ValidationError(strcat("capture_trajectories: k = ", k, " for dataset of ", data.size()));
    EncodedDataset enc = encode_all(data);
    check_model_matches(model.config(), enc.side);

    std::vector<TrajectoryRecord> all(static_cast<size_t>(enc.size));
    for (int i = 0; i < enc.size; ++i) all[static_cast<size_t>(i)].example_id = i;

    for (int base = 0; base < enc.size; base += batch_size) {
        int b = std::min(batch_size, enc.size - base);
        std::span<const int32_t> in(enc.inputs.data() + static_cast<size_t>(base) * enc.seq,
                                    static_cast<size_t>(b) * enc.seq);
        roll_segments(
            model, in, b, init_seed, m_max,
            [&](int m, const SegmentOutcome<float>& o, const std::vector<uint8_t>&) {
                (void)m;
                auto preds = argmax_tokens(o.y_hat);
                size_t vocab = static_cast<size_t>(o.y_hat.dim(2));
                for (int i = 0; i < b; ++i) {
                    TrajectoryStep st;
                    std::span<const int32_t> p(preds.data() + static_cast<size_t>(i) * enc.seq,
                                               static_cast<size_t>(enc.seq));
                    std::span<const int32_t> t(enc.targets.data() + static_cast<size_t>(base + i) * enc.seq,
                                               static_cast<size_t>(enc.seq));
                    st.token_acc = row_token_acc(p, t);
                    st.exact_acc = st.token_acc == 1.0 ? 1.0 : 0.0;
                    double norm_sum = 0.0;
                    for (int pos = 0; pos < enc.seq; ++pos) {
                        const float* row = o.y_hat.ptr() +
                                           (static_cast<size_t>(i) * enc.seq + static_cast<size_t>(pos)) * vocab;
                        norm_sum += std::sqrt(static_cast<double>(kernels::dot(row, row, vocab)));
                    }
                    st.output_norm = norm_sum / enc.seq;
                    st.q_halt = o.q_halt(i);
                    st.q_continue = o.q_continue(i);
                    st.prediction.reserve(static_cast<size_t>(enc.seq));
                    for (int32_t v : p) st.prediction.push_back(static_cast<char>('0' + v));
                    all[static_cast<size_t>(base + i)].steps.push_back(std::move(st));
                }
                return std::vector<uint8_t>(static_cast<size_t>(b), 0);
            });
    }

    std::vector<int> chosen;
    if (selection == TrajectorySelection::BestK) {
        std::vector<int> ids(all.size());
        std::iota(ids.begin(), ids.end(), 0);
        std::stable_sort(ids.begin(), ids.end(), [&](int a, int b2) {
            double fa = all[static_cast<size_t>(a)].steps.back().token_acc;
            double fb = all[static_cast<size_t>(b2)].steps.back().token_acc;
            if (fa != fb) return fa > fb;
            return a < b2;
        });
        chosen.assign(ids.begin(), ids.begin() + k);
    } else {
        std::vector<int> ids(all.size());
        std::iota(ids.begin(), ids.end(), 0);
        Rng rng(selection_seed);
        std::shuffle(ids.begin(), ids.end(), rng);
        chosen.assign(ids.begin(), ids.begin() + k);
        std::sort(chosen.begin(), chosen.end());
    }

    std::vector<TrajectoryRecord> out;
    out.reserve(chosen.size());
    for (int id : chosen) out.push_back(all[static_cast<size_t>(id)]);
    return out;
}

TrainResult train(const RunConfig& rc) {
    rc.validate();
    Dataset data = load_or_generate_dataset(rc);
    if (data.empty()) throw ValidationError("train: dataset is empty");
    int side = data[0].side;
    check_model_matches(rc.model, side);
    int seq = side * side;

    ensure_dir(rc.output_dir);
    nlohmann::json echo = run_config_to_json(rc);
    {
        std::ofstream cf(fs::path(rc.output_dir) / "config.json");
        cf << echo.dump(2) << "\n";
    }

    HrmModel<float> model(rc.model, derive_seed(rc.seed, "model_init"));
    AdamW<float> opt(model.parameters(), rc.optimizer);
    uint64_t init_seed = derive_seed(rc.seed, "state_init");
    Rng data_rng(derive_seed(rc.seed, "data_order"));
    Rng aug_rng(derive_seed(rc.seed, "augment"));
    Rng act_rng(derive_seed(rc.seed, "act"));

    std::string metrics_path = (fs::path(rc.output_dir) / "metrics.csv").string();
    std::ofstream metrics(metrics_path);
    if (!metrics) throw IoError(strcat("cannot write metrics log ", metrics_path));
    metrics << "step,loss,token_acc,exact_acc,avg_segments\n";

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size(); // reshuffle on first use

    auto t0 = std::chrono::steady_clock::now();
    TrainResult res;
    res.metrics_path = metrics_path;
    int stop_after_step = -1;

    for (int step = 1; step <= rc.optimizer.total_steps; ++step) {
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), data_rng);
            cursor = 0;
        }
        int b = static_cast<int>(std::min<size_t>(static_cast<size_t>(rc.dataset.batch_size),
                                                  order.size() - cursor));
        Batch batch;
        batch.batch = b;
        batch.seq = seq;
        batch.inputs.reserve(static_cast<size_t>(b) * seq);
        batch.targets.reserve(static_cast<size_t>(b) * seq);
        for (int i = 0; i < b; ++i) {
            sudoku::PuzzleInstance p = data[static_cast<size_t>(order[cursor + static_cast<size_t>(i)])];
            if (rc.dataset.augment) {
                auto ap = sudoku::random_augment_params(side, aug_rng);
                p = sudoku::augment(p, ap.digit_perm, ap.transpose, ap.band_perm, ap.stack_perm);
            }
            auto enc = sudoku::encode(p);
            batch.inputs.insert(batch.inputs.end(), enc.input.begin(), enc.input.end());
            batch.targets.insert(batch.targets.end(), enc.target.begin(), enc.target.end());
        }
        cursor += static_cast<size_t>(b);

        opt.set_lr(rc.optimizer.lr_at(step));
        TrainStepResult sres;
        try {
            sres = train_step_deep_supervision(batch, model, rc.act, opt, act_rng, init_seed);
        } catch (const RuntimeFailure& e) {
            std::string dump = (fs::path(rc.output_dir) / "diagnostic_batch.csv").string();
            std::ofstream df(dump);
            df << "input,target\n";
            for (int i = 0; i < b; ++i) {
                for (int c = 0; c < seq; ++c) df << static_cast<char>('0' + batch.inputs[i * seq + c]);
                df << ',';
                for (int c = 0; c < seq; ++c) df << static_cast<char>('0' + batch.targets[i * seq + c]);
                df << "\n";
            }
            throw RuntimeFailure(strcat(e.what(), " at step ", step, "; offending batch dumped to ", dump));
        }
        res.steps_run = step;

        double avg_segments = 0;
        for (int s : sres.segments_used) avg_segments += s;
        avg_segments /= sres.segments_used.size();

        if (step % rc.train.log_every == 0)
            metrics << step << ',' << fmt6(sres.summed_loss) << ',' << fmt6(sres.token_acc) << ','
                    << fmt6(sres.exact_acc) << ',' << fmt6(avg_segments) << "\n";

        if (rc.train.checkpoint_every > 0 && step % rc.train.checkpoint_every == 0)
            save_checkpoint((fs::path(rc.output_dir) / strcat("checkpoint_step", step, ".bin")).string(), model,
                            echo);

        if (rc.train.eval_every > 0 && step % rc.train.eval_every == 0 && res.first_perfect_step < 0) {
            auto rep = eval_fixed_steps(model, init_seed, data, {rc.model.m_max}, rc.model.m_max,
                                        rc.dataset.batch_size);
            if (rep.rows[0].exact_acc == 1.0) {
                res.first_perfect_step = step;
                if (rc.train.stop_at_perfect) stop_after_step = step + rc.train.settle_steps;
            }
        }
        if (stop_after_step > 0 && step >= stop_after_step) break;
    }

    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.checkpoint_path = (fs::path(rc.output_dir) / "checkpoint.bin").string();
    save_checkpoint(res.checkpoint_path, model, echo);

    auto final_rep = eval_fixed_steps(model, init_seed, data, {rc.model.m_max}, rc.model.m_max,
                                      rc.dataset.batch_size);
    res.final_token_acc = final_rep.rows[0].token_acc;
    res.final_exact_acc = final_rep.rows[0].exact_acc;
    return res;
}

std::pair<RunConfig, RunConfig> compare_preset(const RunConfig& base) {
    RunConfig a = base; // two-timescale model: 4-layer L + 4-layer H
    a.model.l_layers = 4;
    a.model.h_layers = 4;
    a.model.t = 2;
    a.model.cycles = 2;
    a.output_dir = (fs::path(base.output_dir) / "hrm_4x4").string();
    RunConfig b = base; // 8-layer L-only variant
    b.model.l_layers = 8;
    b.model.h_layers = 0;
    b.model.t = 1;
    b.model.cycles = 1;
    b.output_dir = (fs::path(base.output_dir) / "l_only_8").string();
    return {a, b};
}

namespace {

struct MetricRow {
    int step;
    std::string loss, tok, ex;
};

std::vector<MetricRow> read_metric_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(strcat("cannot read metrics ", path));
    std::vector<MetricRow> rows;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricRow r;
        std::istringstream is(line);
        std::string f;
        std::getline(is, f, ',');
        r.step = std::stoi(f);
        std::getline(is, r.loss, ',');
        std::getline(is, r.tok, ',');
        std::getline(is, r.ex, ',');
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace

CompareResult compare_architectures(const RunConfig& a, const RunConfig& b, const std::string& report_dir) {
    if (a.seed != b.seed) throw ValidationError("compare: runs must share the seed");
    if (a.dataset.path != b.dataset.path || a.dataset.side != b.dataset.side ||
        a.dataset.count != b.dataset.count || a.dataset.blanks != b.dataset.blanks)
        throw ValidationError("compare: runs must share the dataset");

    CompareResult res;
    res.run_a = train(a);
    res.run_b = train(b);

    ensure_dir(report_dir);
    auto rows_a = read_metric_rows(res.run_a.metrics_path);
    auto rows_b = read_metric_rows(res.run_b.metrics_path);
    std::map<int, const MetricRow*> by_step_b;
    for (const auto& r : rows_b) by_step_b[r.step] = &r;

    std::ofstream curves(fs::path(report_dir) / "compare_curves.csv");
    curves << "step,loss_a,token_acc_a,exact_acc_a,loss_b,token_acc_b,exact_acc_b\n";
    for (const auto& ra : rows_a) {
        auto it = by_step_b.find(ra.step);
        if (it == by_step_b.end()) continue;
        curves << ra.step << ',' << ra.loss << ',' << ra.tok << ',' << ra.ex << ',' << it->second->loss << ','
               << it->second->tok << ',' << it->second->ex << "\n";
    }

    std::ofstream summary(fs::path(report_dir) / "compare_summary.csv");
    summary << "run,steps,wall_seconds,final_token_acc,final_exact_acc\n";
    summary << "a," << res.run_a.steps_run << ',' << fmt6(res.run_a.wall_seconds) << ','
            << fmt6(res.run_a.final_token_acc) << ',' << fmt6(res.run_a.final_exact_acc) << "\n";
    summary << "b," << res.run_b.steps_run << ',' << fmt6(res.run_b.wall_seconds) << ','
            << fmt6(res.run_b.final_token_acc) << ',' << fmt6(res.run_b.final_exact_acc) << "\n";
    return res;
}

} // namespace hrmlab
