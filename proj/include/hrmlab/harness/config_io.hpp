#pragma once

// Run configuration: JSON file with a schema_version field, dotted-key
// overrides, full validation (all problems reported at once) and an
// effective-config echo for reproducibility.

#include "hrmlab/act/act.hpp"
#include "hrmlab/harness/optimizer.hpp"
#include "hrmlab/model/config.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace hrmlab {

constexpr int kConfigSchemaVersion = 1;

struct DatasetConfig {
    std::string path; // when set, a CSV on disk; otherwise the generator spec below
    int side = 4;
    int count = 64;
    int blanks = 6;
    int batch_size = 16;
    bool augment = false;

    void validate() const {
        if (batch_size < 1) throw ValidationError("dataset.batch_size must be >= 1");
        if (path.empty()) {
            if (side != 4 && side != 9) throw ValidationError("dataset.side must be 4 or 9");
            if (count < 1) throw ValidationError("dataset.count must be >= 1");
            if (blanks < 0 || blanks >= side * side)
                throw ValidationError("dataset.blanks must lie in [0, side^2)");
        }
    }
};

struct TrainControl {
    int log_every = 1;
    int checkpoint_every = 0; // 0 = final checkpoint only
    int eval_every = 0;       // 0 = never; full train-set eval at fixed m_max
    bool stop_at_perfect = false;
    int settle_steps = 0; // extra steps after the first perfect eval

    void validate() const {
        if (log_every < 1) throw ValidationError("train.log_every must be >= 1");
        if (checkpoint_every < 0 || eval_every < 0 || settle_steps < 0)
            throw ValidationError("train cadences must be >= 0");
        if (stop_at_perfect && eval_every == 0)
            throw ValidationError("train.stop_at_perfect requires train.eval_every > 0");
    }
};

struct RunConfig {
    uint64_t seed = 1;
    std::string output_dir;
    ModelConfig model;
    ActConfig act; // act.m_max always mirrors model.m_max
    OptimConfig optimizer;
    DatasetConfig dataset;
    TrainControl train;

    void validate() const {
        model.validate();
        act.validate();
        optimizer.validate();
        dataset.validate();
        train.validate();
        if (dataset.path.empty()) {
            if (model.seq_len != dataset.side * dataset.side)
                throw ValidationError(strcat("model.seq_len ", model.seq_len, " does not match side ",
                                             dataset.side, " (need ", dataset.side * dataset.side, ")"));
            if (model.vocab_size != dataset.side + 1)
                throw ValidationError(strcat("model.vocab_size ", model.vocab_size, " does not match side ",
                                             dataset.side, " (need ", dataset.side + 1, ")"));
        }
    }
};

nlohmann::json default_config_json();
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& rc);

// Parses `key.path=value` and applies it; the key must already exist.
void apply_override(nlohmann::json& j, const std::string& assignment);

// File + overrides -> validated config. The echo (defaults merged with the
// file and overrides) is what gets written next to run artifacts.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                      nlohmann::json* echo_out = nullptr);
RunConfig config_from_overrides(const std::vector<std::string>& overrides, nlohmann::json* echo_out = nullptr);

// "start:stop:step" -> inclusive-start grid; the stop value itself is kept
// when it lands on the grid (within 1e-9 of a step). Plain comma lists are
// accepted too.
std::vector<double> parse_float_grid(const std::string& spec);
std::vector<int> parse_int_list(const std::string& spec);

} // namespace hrmlab
