#include "hrmlab/harness/checkpoint.hpp"

#include "hrmlab/harness/config_io.hpp"

#include <cstring>
#include <fstream>

namespace hrmlab {

namespace {

constexpr char kMagic[4] = {'H', 'R', 'M', 'C'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError(strcat("checkpoint: truncated while reading ", what));
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const HrmModel<float>& model, const nlohmann::json& config_echo) {
    static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(strcat("cannot write checkpoint ", path));
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    std::string cfg = config_echo.dump();
    write_pod(out, static_cast<uint64_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto& params = model.parameters();
    write_pod(out, static_cast<uint64_t>(params.size()));
    for (const auto& p : params) {
        write_pod(out, static_cast<uint64_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(out, static_cast<uint32_t>(0)); // dtype f32
        write_pod(out, static_cast<uint32_t>(p.tensor.rank()));
        for (int i = 0; i < p.tensor.rank(); ++i) write_pod(out, static_cast<int64_t>(p.tensor.dim(i)));
        out.write(reinterpret_cast<const char*>(p.tensor.ptr()),
                  static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(p.tensor.numel())));
    }
    if (!out) throw IoError(strcat("write failed for checkpoint ", path));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(strcat("cannot open checkpoint ", path));
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError(strcat("not a checkpoint file: ", path));
    uint32_t version = read_pod<uint32_t>(in, "version");
    if (version != kVersion) throw ParseError(strcat("unsupported checkpoint version ", version));
    uint64_t cfg_len = read_pod<uint64_t>(in, "config length");
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw IoError("checkpoint: truncated config");
    Checkpoint ck;
    try {
        ck.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(strcat("checkpoint config is not valid JSON: ", e.what()));
    }
    uint64_t count = read_pod<uint64_t>(in, "param count");
    for (uint64_t i = 0; i < count; ++i) {
        uint64_t name_len = read_pod<uint64_t>(in, "name length");
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        uint32_t dtype = read_pod<uint32_t>(in, "dtype");
        if (dtype != 0) throw ParseError(strcat("checkpoint param ", name, ": unsupported dtype ", dtype));
        uint32_t ndims = read_pod<uint32_t>(in, "ndims");
        Shape shape(ndims);
        for (uint32_t d = 0; d < ndims; ++d) shape[d] = read_pod<int64_t>(in, "dim");
        int64_t numel = shape_numel(shape);
        std::vector<float> values(static_cast<size_t>(numel));
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(sizeof(float) * values.size()));
        if (!in) throw IoError(strcat("checkpoint: truncated data for ", name));
        ck.params.emplace_back(std::move(name), Tensor<float>::from_values(std::move(shape), std::move(values)));
    }
    return ck;
}

RestoredModel restore_model(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    RunConfig rc = run_config_from_json(ck.config);
    RestoredModel rm{HrmModel<float>(rc.model, derive_seed(rc.seed, "model_init")), rc.seed, ck.config};
    auto& params = rm.model.parameters();
    if (params.size() != ck.params.size())
        throw ValidationError(strcat("checkpoint has ", ck.params.size(), " params, model expects ",
                                     params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& [name, stored] = ck.params[i];
        if (name != params[i].name)
            throw ValidationError(strcat("checkpoint param ", i, " is '", name, "', expected '",
                                         params[i].name, "'"));
        if (stored.shape() != params[i].tensor.shape())
            throw ValidationError(strcat("checkpoint param ", name, " has shape ", shape_str(stored.shape()),
                                         ", expected ", shape_str(params[i].tensor.shape())));
        std::copy(stored.data().begin(), stored.data().end(), params[i].tensor.data().begin());
    }
    return rm;
}

} // namespace hrmlab
