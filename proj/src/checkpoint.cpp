// SPDX-License-Identifier: Apache-2.0
#include "simdet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace simdet {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

struct Writer {
    std::ofstream f;
    explicit Writer(const std::string& path) : f(path, std::ios::binary) {
        if (!f) throw FormatError("cannot open checkpoint for writing: " + path);
    }
    void bytes(const void* p, size_t n) { f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    template <typename T> void pod(T v) { bytes(&v, sizeof v); }
    void floats(const float* p, size_t n) { bytes(p, n * sizeof(float)); }
};

struct Reader {
    std::ifstream f;
    explicit Reader(const std::string& path) : f(path, std::ios::binary) {
        if (!f) throw FormatError("cannot open checkpoint: " + path);
    }
    void bytes(void* p, size_t n) {
        f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(f.gcount()) != n) throw FormatError("truncated checkpoint file");
    }
    template <typename T> T pod() {
        T v;
        bytes(&v, sizeof v);
        return v;
    }
    std::vector<float> floats(size_t n) {
        std::vector<float> v(n);
        bytes(v.data(), n * sizeof(float));
        return v;
    }
};

} // namespace

void save_checkpoint(const CheckpointState& st, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.pod(kVersion);
    w.pod(st.config_digest);
    w.pod(st.step);
    w.pod(static_cast<uint32_t>(st.params.size()));
    for (const auto& [name, t] : st.params) {
        w.pod(static_cast<uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.pod(static_cast<uint8_t>(t.dtype()));
        w.pod(static_cast<uint8_t>(t.shape().size()));
        for (int64_t d : t.shape()) w.pod(d);
        w.floats(t.data().data(), static_cast<size_t>(t.numel()));
    }
    w.pod(static_cast<uint64_t>(st.velocity.size()));
    w.floats(st.velocity.data(), st.velocity.size());
    w.pod(st.scale.scale);
    w.pod(st.scale.good_steps);
    w.pod(static_cast<uint8_t>(st.scale.mode));
    w.pod(st.scale.growth_interval);
    w.pod(st.scale.growth_factor);
    w.pod(st.scale.backoff_factor);
    w.pod(st.scale.min_scale);
    w.pod(st.scale.max_scale);
    w.pod(static_cast<uint32_t>(st.running.size()));
    for (const RunningStats& r : st.running) {
        w.pod(r.momentum);
        w.pod(static_cast<uint64_t>(r.mean.size()));
        w.floats(r.mean.data(), r.mean.size());
        w.floats(r.var.data(), r.var.size());
    }
    if (!w.f) throw FormatError("checkpoint write failed: " + path);
}

CheckpointState load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint file (bad magic)");
    const uint32_t version = r.pod<uint32_t>();
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    CheckpointState st;
    st.config_digest = r.pod<uint64_t>();
    st.step = r.pod<int64_t>();
    const uint32_t nparams = r.pod<uint32_t>();
    for (uint32_t i = 0; i < nparams; ++i) {
        const uint16_t len = r.pod<uint16_t>();
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        const auto dtype = static_cast<DType>(r.pod<uint8_t>());
        const uint8_t rank = r.pod<uint8_t>();
        if (rank < 1 || rank > 4) throw FormatError("checkpoint parameter rank out of range");
        Shape shape(rank);
        for (auto& d : shape) d = r.pod<int64_t>();
        const int64_t n = shape_numel(shape);
        if (n < 0 || n > (int64_t(1) << 32)) throw FormatError("checkpoint parameter size out of range");
        st.params.emplace_back(std::move(name),
                               Tensor(shape, dtype, r.floats(static_cast<size_t>(n))));
    }
    st.velocity = r.floats(static_cast<size_t>(r.pod<uint64_t>()));
    st.scale.scale = r.pod<double>();
    st.scale.good_steps = r.pod<int64_t>();
    st.scale.mode = static_cast<ScaleMode>(r.pod<uint8_t>());
    st.scale.growth_interval = r.pod<int64_t>();
    st.scale.growth_factor = r.pod<double>();
    st.scale.backoff_factor = r.pod<double>();
    st.scale.min_scale = r.pod<double>();
    st.scale.max_scale = r.pod<double>();
    const uint32_t nrun = r.pod<uint32_t>();
    for (uint32_t i = 0; i < nrun; ++i) {
        RunningStats rs;
        rs.momentum = r.pod<float>();
        const size_t c = static_cast<size_t>(r.pod<uint64_t>());
        rs.mean = r.floats(c);
        rs.var = r.floats(c);
        st.running.push_back(std::move(rs));
    }
    return st;
}

} // namespace simdet
