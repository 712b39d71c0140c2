#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "sdfrec/core/error.hpp"
#include "sdfrec/core/tensor.hpp"

namespace sdfrec {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m, adam_v;
    double lr_scale = 1.0;
};

// Ordered set of named trainable tensors. Insertion order is the traversal
// order everywhere (gradient accumulation, optimizer, serialization), which
// keeps runs reproducible.
class ParamStore {
public:
    int add(const std::string& name, Tensor init, double lr_scale = 1.0) {
        if (index_.count(name)) throw PreconditionError("duplicate parameter: " + name);
        Param p;
        p.name = name;
        p.grad = Tensor(init.rows(), init.cols());
        p.adam_m = Tensor(init.rows(), init.cols());
        p.adam_v = Tensor(init.rows(), init.cols());
        p.value = std::move(init);
        p.lr_scale = lr_scale;
        params_.push_back(std::move(p));
        index_[name] = (int)params_.size() - 1;
        return (int)params_.size() - 1;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Param& at(int i) { return params_.at(i); }
    const Param& at(int i) const { return params_.at(i); }
    Param& at(const std::string& name) {
        int i = find(name);
        if (i < 0) throw PreconditionError("unknown parameter: " + name);
        return params_[i];
    }
    const Param& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }

    int count() const { return (int)params_.size(); }

    void zero_grads() {
        for (auto& p : params_)
            std::fill(p.grad.data(), p.grad.data() + p.grad.size(), 0.0);
    }

    long total_scalars() const {
        long n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, int> index_;
};

// Checkpoint container: little-endian binary, one file.
//   "SDFRECK1" | u32 version | u64 manifest_len | manifest JSON (UTF-8)
//   u32 param_count | per param: u32 name_len, name, u32 rows, u32 cols,
//   rows*cols float64 | u32 crc32 of all preceding bytes
// Doubles are stored raw, so round trips are bit-exact.
namespace ckpt {

constexpr uint32_t kVersion = 1;
inline const char kMagic[8] = {'S', 'D', 'F', 'R', 'E', 'C', 'K', '1'};

inline void save(const std::string& path, const ParamStore& store, const nlohmann::json& manifest) {
    std::string buf;
    auto put = [&](const void* p, size_t n) { buf.append((const char*)p, n); };
    auto put_u32 = [&](uint32_t v) { put(&v, 4); };
    auto put_u64 = [&](uint64_t v) { put(&v, 8); };

    put(kMagic, 8);
    put_u32(kVersion);
    std::string mj = manifest.dump();
    put_u64(mj.size());
    put(mj.data(), mj.size());
    put_u32((uint32_t)store.count());
    for (int i = 0; i < store.count(); ++i) {
        const Param& p = store.at(i);
        put_u32((uint32_t)p.name.size());
        put(p.name.data(), p.name.size());
        put_u32((uint32_t)p.value.rows());
        put_u32((uint32_t)p.value.cols());
        put(p.value.data(), sizeof(double) * p.value.size());
    }
    uint32_t crc = (uint32_t)crc32(0, (const Bytef*)buf.data(), (uInt)buf.size());
    put_u32(crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(buf.data(), (std::streamsize)buf.size());
    if (!f) throw IoError("short write on checkpoint: " + path);
}

struct Loaded {
    nlohmann::json manifest;
    std::vector<std::pair<std::string, Tensor>> params;
};

inline Loaded load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 + 4 + 8 + 4 + 4) throw IoError("checkpoint truncated: " + path);

    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    uint32_t crc = (uint32_t)crc32(0, (const Bytef*)buf.data(), (uInt)(buf.size() - 4));
    if (crc != stored_crc) throw IoError("checkpoint checksum failure: " + path);

    size_t off = 0;
    auto get = [&](void* p, size_t n) {
        if (off + n > buf.size() - 4) throw IoError("checkpoint truncated: " + path);
        std::memcpy(p, buf.data() + off, n);
        off += n;
    };
    char magic[8];
    get(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a checkpoint file: " + path);
    uint32_t version;
    get(&version, 4);
    if (version != kVersion)
        throw IoError("checkpoint version mismatch: have " + std::to_string(version) +
                      ", want " + std::to_string(kVersion));
    uint64_t mlen;
    get(&mlen, 8);
    std::string mj(mlen, '\0');
    get(mj.data(), mlen);

    Loaded out;
    try {
        out.manifest = nlohmann::json::parse(mj);
    } catch (const std::exception& e) {
        throw IoError(std::string("checkpoint manifest parse: ") + e.what());
    }
    uint32_t count;
    get(&count, 4);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nlen, rows, cols;
        get(&nlen, 4);
        std::string name(nlen, '\0');
        get(name.data(), nlen);
        get(&rows, 4);
        get(&cols, 4);
        Tensor t((int)rows, (int)cols);
        get(t.data(), sizeof(double) * t.size());
        out.params.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

// Loads values into an existing store; every stored parameter must exist
// with a matching shape.
inline nlohmann::json load_into(const std::string& path, ParamStore& store) {
    Loaded l = load(path);
    for (auto& [name, tensor] : l.params) {
        int i = store.find(name);
        if (i < 0) throw IoError("checkpoint parameter not in model: " + name);
        if (!store.at(i).value.same_shape(tensor))
            throw IoError("checkpoint shape mismatch for " + name);
        store.at(i).value = std::move(tensor);
    }
    return l.manifest;
}

}  // namespace ckpt
}  // namespace sdfrec
