#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sacreg {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'C', 'K'};
constexpr uint16_t kVersion = 1;

void ck_fail(const std::string& what, const std::string& path) {
    throw std::runtime_error(what + ": " + path);
}

void put(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get(std::ifstream& is, void* p, std::size_t n, const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) ck_fail("truncated file", path);
}

void put_tensor(std::ofstream& os, const std::string& name,
                const std::vector<int>& shape, const float* data,
                std::size_t numel) {
    const uint32_t name_len = static_cast<uint32_t>(name.size());
    put(os, &name_len, 4);
    put(os, name.data(), name.size());
    const uint32_t rank = static_cast<uint32_t>(shape.size());
    put(os, &rank, 4);
    for (int e : shape) {
        const uint32_t ext = static_cast<uint32_t>(e);
        put(os, &ext, 4);
    }
    put(os, data, numel * sizeof(float));
}

}  // namespace

const std::vector<float>* CheckpointData::find(const std::string& name) const {
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (shapes[i].first == name) return &buffers[i];
    }
    return nullptr;
}

void save_checkpoint(const std::string& path, uint64_t iteration,
                     const std::string& config_text,
                     const std::vector<std::pair<std::string, Tensor>>& params,
                     const Adam* opt_state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) ck_fail("cannot open for writing", path);
    put(os, kMagic, 4);
    put(os, &kVersion, 2);
    put(os, &iteration, 8);
    const uint32_t cfg_len = static_cast<uint32_t>(config_text.size());
    put(os, &cfg_len, 4);
    put(os, config_text.data(), config_text.size());

    uint32_t count = static_cast<uint32_t>(params.size());
    if (opt_state) count *= 3;
    put(os, &count, 4);
    for (const auto& [name, t] : params) {
        put_tensor(os, name, t.shape(), t.data(), t.numel());
    }
    if (opt_state) {
        const auto& m = const_cast<Adam*>(opt_state)->first_moments();
        const auto& v = const_cast<Adam*>(opt_state)->second_moments();
        for (std::size_t i = 0; i < params.size(); ++i) {
            put_tensor(os, params[i].first + ".m", params[i].second.shape(),
                       m[i].data(), m[i].size());
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            put_tensor(os, params[i].first + ".v", params[i].second.shape(),
                       v[i].data(), v[i].size());
        }
    }
    if (!os) ck_fail("write failed", path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) ck_fail("cannot open", path);
    char magic[4];
    get(is, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        ck_fail("unsupported format (unrecognized magic)", path);
    }
    uint16_t version;
    get(is, &version, 2, path);
    if (version != kVersion) {
        ck_fail("unsupported checkpoint version " + std::to_string(version), path);
    }
    CheckpointData ck;
    get(is, &ck.iteration, 8, path);
    uint32_t cfg_len;
    get(is, &cfg_len, 4, path);
    ck.config_text.resize(cfg_len);
    if (cfg_len > 0) get(is, ck.config_text.data(), cfg_len, path);
    uint32_t count;
    get(is, &count, 4, path);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len;
        get(is, &name_len, 4, path);
        std::string name(name_len, '\0');
        if (name_len > 0) get(is, name.data(), name_len, path);
        uint32_t rank;
        get(is, &rank, 4, path);
        if (rank > 8) ck_fail("implausible tensor rank", path);
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            uint32_t ext;
            get(is, &ext, 4, path);
            shape[r] = static_cast<int>(ext);
            numel *= ext;
        }
        std::vector<float> data(numel);
        get(is, data.data(), numel * sizeof(float), path);
        ck.shapes.push_back({std::move(name), std::move(shape)});
        ck.buffers.push_back(std::move(data));
    }
    return ck;
}

void apply_checkpoint(const CheckpointData& ck,
                      std::vector<std::pair<std::string, Tensor>>& params,
                      Adam* opt_state) {
    for (auto& [name, t] : params) {
        const std::vector<float>* buf = ck.find(name);
        check(buf != nullptr, "checkpoint is missing parameter '" + name + "'");
        const std::vector<int>* stored_shape = nullptr;
        for (const auto& [n, s] : ck.shapes) {
            if (n == name) {
                stored_shape = &s;
                break;
            }
        }
        check(stored_shape != nullptr && *stored_shape == t.shape(),
              "checkpoint parameter '" + name + "' has the wrong shape");
        std::copy(buf->begin(), buf->end(), t.data());
    }
    if (opt_state) {
        auto& m = opt_state->first_moments();
        auto& v = opt_state->second_moments();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::vector<float>* bm = ck.find(params[i].first + ".m");
            const std::vector<float>* bv = ck.find(params[i].first + ".v");
            check(bm && bv, "checkpoint is missing optimizer state for '" +
                                params[i].first + "'");
            check(bm->size() == m[i].size() && bv->size() == v[i].size(),
                  "checkpoint optimizer state size mismatch for '" +
                      params[i].first + "'");
            m[i] = *bm;
            v[i] = *bv;
        }
        opt_state->set_iteration(static_cast<int64_t>(ck.iteration));
    }
}

}  // namespace sacreg
