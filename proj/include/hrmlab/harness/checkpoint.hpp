#pragma once

// Checkpoint container: a JSON echo of the run config followed by named
// float32 parameter tensors, all little-endian. Layout (bytes):
//   magic "HRMC", u32 version = 1
//   u64 config_len, config JSON (UTF-8)
//   u64 param_count, then per parameter:
//     u64 name_len, name bytes
//     u32 dtype (0 = f32), u32 ndims, i64 dims[ndims], f32 data[numel]

#include "hrmlab/model/model.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace hrmlab {

struct Checkpoint {
    nlohmann::json config;
    std::vector<std::pair<std::string, Tensor<float>>> params;
};

void save_checkpoint(const std::string& path, const HrmModel<float>& model, const nlohmann::json& config_echo);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the model from the checkpoint's config echo and installs the
// stored weights (names and shapes must match the freshly built model).
struct RestoredModel {
    HrmModel<float> model;
    uint64_t run_seed = 0;
    nlohmann::json config;

    uint64_t state_init_seed() const { return derive_seed(run_seed, "state_init"); }
};
RestoredModel restore_model(const std::string& path);

} // namespace hrmlab
