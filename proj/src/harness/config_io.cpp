#include "hrmlab/harness/config_io.hpp"

#include <cmath>
#include <fstream>

namespace hrmlab {

using nlohmann::json;

json default_config_json() {
    return json{
        {"schema_version", kConfigSchemaVersion},
        {"seed", 1},
        {"output_dir", ""},
        {"model",
         {{"vocab_size", 5},
          {"seq_len", 16},
          {"hidden_dim", 64},
          {"num_heads", 4},
          {"l_layers", 4},
          {"h_layers", 0},
          {"t", 1},
          {"cycles", 1},
          {"m_max", 4},
          {"grad_mode", "one_step"}}},
        {"act",
         {{"exploration_prob", 0.1},
          {"halt_strategy", "q_halt_threshold"},
          {"threshold", 0.5},
          {"fixed_steps", 0}}}, // 0 = follow model.m_max
        {"optimizer",
         {{"learning_rate", 1e-3},
          {"beta1", 0.9},
          {"beta2", 0.95},
          {"weight_decay", 0.1},
          {"warmup_steps", 100},
          {"total_steps", 2000}}},
        {"dataset",
         {{"path", ""},
          {"side", 4},
          {"count", 64},
          {"blanks", 6},
          {"batch_size", 16},
          {"augment", false}}},
        {"train",
         {{"log_every", 1},
          {"checkpoint_every", 0},
          {"eval_every", 0},
          {"stop_at_perfect", false},
          {"settle_steps", 0}}},
    };
}

namespace {

const char* type_name(const json& v) {
    if (v.is_boolean()) return "bool";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_object()) return "object";
    if (v.is_array()) return "array";
    return "null";
}

bool same_category(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

void collect_problems(const json& defaults, const json& user, const std::string& prefix,
                      std::vector<std::string>& problems) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!defaults.contains(it.key())) {
            problems.push_back(strcat("unknown key '", key, "'"));
            continue;
        }
        const json& dv = defaults.at(it.key());
        if (dv.is_object()) {
            if (!it.value().is_object())
                problems.push_back(strcat("key '", key, "' must be an object, got ", type_name(it.value())));
            else
                collect_problems(dv, it.value(), key, problems);
        } else if (!same_category(dv, it.value())) {
            problems.push_back(
                strcat("key '", key, "' must be a ", type_name(dv), ", got ", type_name(it.value())));
        }
    }
}

void merge_into(json& base, const json& user) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (base.at(it.key()).is_object() && it.value().is_object())
            merge_into(base.at(it.key()), it.value());
        else
            base[it.key()] = it.value();
    }
}

} // namespace

RunConfig run_config_from_json(const json& j) {
    std::vector<std::string> problems;
    collect_problems(default_config_json(), j, "", problems);
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ValidationError(msg);
    }
    json full = default_config_json();
    merge_into(full, j);
    if (full.at("schema_version").get<int>() != kConfigSchemaVersion)
        throw ValidationError(strcat("config schema_version ", full.at("schema_version").get<int>(),
                                     " unsupported (expected ", kConfigSchemaVersion, ")"));

    RunConfig rc;
    rc.seed = full.at("seed").get<uint64_t>();
    rc.output_dir = full.at("output_dir").get<std::string>();

    const json& m = full.at("model");
    rc.model.vocab_size = m.at("vocab_size").get<int>();
    rc.model.seq_len = m.at("seq_len").get<int>();
    rc.model.hidden_dim = m.at("hidden_dim").get<int>();
    rc.model.num_heads = m.at("num_heads").get<int>();
    rc.model.l_layers = m.at("l_layers").get<int>();
    rc.model.h_layers = m.at("h_layers").get<int>();
    rc.model.t = m.at("t").get<int>();
    rc.model.cycles = m.at("cycles").get<int>();
    rc.model.m_max = m.at("m_max").get<int>();
    rc.model.grad_mode = grad_mode_from_string(m.at("grad_mode").get<std::string>());

    const json& a = full.at("act");
    rc.act.m_max = rc.model.m_max;
    rc.act.exploration_prob = a.at("exploration_prob").get<double>();
    rc.act.halt_strategy = halt_strategy_from_string(a.at("halt_strategy").get<std::string>());
    rc.act.threshold = a.at("threshold").get<double>();
    int fixed = a.at("fixed_steps").get<int>();
    rc.act.fixed_steps = fixed <= 0 ? rc.model.m_max : fixed;

    const json& o = full.at("optimizer");
    rc.optimizer.learning_rate = o.at("learning_rate").get<double>();
    rc.optimizer.beta1 = o.at("beta1").get<double>();
    rc.optimizer.beta2 = o.at("beta2").get<double>();
    rc.optimizer.weight_decay = o.at("weight_decay").get<double>();
    rc.optimizer.warmup_steps = o.at("warmup_steps").get<int>();
    rc.optimizer.total_steps = o.at("total_steps").get<int>();

    const json& d = full.at("dataset");
    rc.dataset.path = d.at("path").get<std::string>();
    rc.dataset.side = d.at("side").get<int>();
    rc.dataset.count = d.at("count").get<int>();
    rc.dataset.blanks = d.at("blanks").get<int>();
    rc.dataset.batch_size = d.at("batch_size").get<int>();
    rc.dataset.augment = d.at("augment").get<bool>();

    const json& t = full.at("train");
    rc.train.log_every = t.at("log_every").get<int>();
    rc.train.checkpoint_every = t.at("checkpoint_every").get<int>();
    rc.train.eval_every = t.at("eval_every").get<int>();
    rc.train.stop_at_perfect = t.at("stop_at_perfect").get<bool>();
    rc.train.settle_steps = t.at("settle_steps").get<int>();

    rc.validate();
    return rc;
}

json run_config_to_json(const RunConfig& rc) {
    json j = default_config_json();
    j["seed"] = rc.seed;
    j["output_dir"] = rc.output_dir;
    json& m = j["model"];
    m["vocab_size"] = rc.model.vocab_size;
    m["seq_len"] = rc.model.seq_len;
    m["hidden_dim"] = rc.model.hidden_dim;
    m["num_heads"] = rc.model.num_heads;
    m["l_layers"] = rc.model.l_layers;
    m["h_layers"] = rc.model.h_layers;
    m["t"] = rc.model.t;
    m["cycles"] = rc.model.cycles;
    m["m_max"] = rc.model.m_max;
    m["grad_mode"] = to_string(rc.model.grad_mode);
    json& a = j["act"];
    a["exploration_prob"] = rc.act.exploration_prob;
    a["halt_strategy"] = to_string(rc.act.halt_strategy);
    a["threshold"] = rc.act.threshold;
    a["fixed_steps"] = rc.act.fixed_steps;
    json& o = j["optimizer"];
    o["learning_rate"] = rc.optimizer.learning_rate;
    o["beta1"] = rc.optimizer.beta1;
    o["beta2"] = rc.optimizer.beta2;
    o["weight_decay"] = rc.optimizer.weight_decay;
    o["warmup_steps"] = rc.optimizer.warmup_steps;
    o["total_steps"] = rc.optimizer.total_steps;
    json& d = j["dataset"];
    d["path"] = rc.dataset.path;
    d["side"] = rc.dataset.side;
    d["count"] = rc.dataset.count;
    d["blanks"] = rc.dataset.blanks;
    d["batch_size"] = rc.dataset.batch_size;
    d["augment"] = rc.dataset.augment;
    json& t = j["train"];
    t["log_every"] = rc.train.log_every;
    t["checkpoint_every"] = rc.train.checkpoint_every;
    t["eval_every"] = rc.train.eval_every;
    t["stop_at_perfect"] = rc.train.stop_at_perfect;
    t["settle_steps"] = rc.train.settle_steps;
    return j;
}

void apply_override(json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ValidationError(strcat("override '", assignment, "' is not key=value"));
    std::string keypath = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    json* node = &j;
    size_t pos = 0;
    std::vector<std::string> parts;
    while (pos != std::string::npos) {
        auto dot = keypath.find('.', pos);
        parts.push_back(keypath.substr(pos, dot == std::string::npos ? dot : dot - pos));
        pos = dot == std::string::npos ? dot : dot + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
            throw ValidationError(strcat("override references unknown key '", keypath, "'"));
        node = &(*node)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!node->contains(leaf))
        throw ValidationError(strcat("override references unknown key '", keypath, "'"));

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value; // raw string
    }
    if (!same_category((*node)[leaf], parsed))
        throw ValidationError(strcat("override '", keypath, "' must be a ", type_name((*node)[leaf]),
                                     ", got ", type_name(parsed)));
    (*node)[leaf] = parsed;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides, json* echo_out) {
    std::ifstream in(path);
    if (!in) throw IoError(strcat("cannot open config ", path));
    json user;
    try {
        user = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(strcat("config ", path, ": ", e.what()));
    }
    std::vector<std::string> problems;
    collect_problems(default_config_json(), user, "", problems);
    if (!problems.empty()) {
        std::string msg = strcat("invalid config ", path, ":");
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ValidationError(msg);
    }
    json full = default_config_json();
    merge_into(full, user);
    for (const auto& ov : overrides) apply_override(full, ov);
    if (echo_out) *echo_out = full;
    return run_config_from_json(full);
}

RunConfig config_from_overrides(const std::vector<std::string>& overrides, json* echo_out) {
    json full = default_config_json();
    for (const auto& ov : overrides) apply_override(full, ov);
    if (echo_out) *echo_out = full;
    return run_config_from_json(full);
}

std::vector<double> parse_float_grid(const std::string& spec) {
    std::vector<double> out;
    if (spec.find(':') != std::string::npos) {
        double start, stop, step;
        char c1, c2;
        std::istringstream is(spec);
        if (!(is >> start >> c1 >> stop >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0)
            throw ValidationError(strcat("bad grid '", spec, "' (want start:stop:step with step > 0)"));
        for (int i = 0;; ++i) {
            double v = start + i * step;
            if (v > stop + step * 1e-9) break;
            out.push_back(v);
        }
    } else {
        std::istringstream is(spec);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            if (tok.empty()) continue;
            out.push_back(std::stod(tok));
        }
    }
    if (out.empty()) throw ValidationError(strcat("grid '", spec, "' is empty"));
    return out;
}

std::vector<int> parse_int_list(const std::string& spec) {
    std::vector<int> out;
    std::istringstream is(spec);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stoi(tok));
    }
    if (out.empty()) throw ValidationError(strcat("list '", spec, "' is empty"));
    return out;
}

} // namespace hrmlab
