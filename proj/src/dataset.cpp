// SPDX-License-Identifier: Apache-2.0
#include "simdet/dataset.hpp"

#include <cmath>
#include <cstring>

namespace simdet {

namespace {

uint64_t mix64(uint64_t a, uint64_t b) {
    // one splitmix64 round over the combined word
    uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace

Dataset make_synthetic_dataset(uint64_t seed, int64_t n, int channels, int image, int classes,
                               double noise) {
    if (n < 1) throw ContractError("dataset needs at least one sample");
    if (classes < 2) throw ContractError("dataset needs at least two classes");
    if (channels < 1 || image < 4) throw ContractError("dataset image too small");

    // class-specific blob centers on a circle, channel weights per class
    std::vector<double> cx(static_cast<size_t>(classes)), cy(static_cast<size_t>(classes));
    std::vector<float> cw(static_cast<size_t>(classes * channels));
    Rng class_rng(mix64(seed, 0xc1a55ull));
    for (int c = 0; c < classes; ++c) {
        const double a = 2.0 * M_PI * c / classes;
        cx[static_cast<size_t>(c)] = (image - 1) * (0.5 + 0.3 * std::cos(a));
        cy[static_cast<size_t>(c)] = (image - 1) * (0.5 + 0.3 * std::sin(a));
        for (int ch = 0; ch < channels; ++ch) {
            cw[static_cast<size_t>(c * channels + ch)] = class_rng.uniform(0.3f, 1.0f);
        }
    }
    const double sigma = image / 5.0;

    Dataset ds;
    ds.classes = classes;
    ds.labels.resize(static_cast<size_t>(n));
    ds.images = Tensor({n, channels, image, image}, DType::F32, 0.0f);
    auto px = ds.images.data();
    const int64_t per = static_cast<int64_t>(channels) * image * image;
    for (int64_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % classes);
        ds.labels[static_cast<size_t>(i)] = label;
        Rng rng(mix64(seed, static_cast<uint64_t>(i) + 1));
        float* p = px.data() + i * per;
        for (int ch = 0; ch < channels; ++ch) {
            const float w = cw[static_cast<size_t>(label * channels + ch)];
            for (int y = 0; y < image; ++y)
                for (int x = 0; x < image; ++x) {
                    const double dx = x - cx[static_cast<size_t>(label)];
                    const double dy = y - cy[static_cast<size_t>(label)];
                    const double bump = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    *p++ = static_cast<float>(w * bump) +
                           static_cast<float>(noise) * rng.uniform(-1.0f, 1.0f);
                }
        }
    }
    return ds;
}

uint64_t dataset_digest(const Dataset& ds) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mixbytes = [&h](const void* ptr, size_t bytes) {
        const unsigned char* b = static_cast<const unsigned char*>(ptr);
        for (size_t i = 0; i < bytes; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    };
    auto d = ds.images.data();
    mixbytes(d.data(), d.size() * sizeof(float));
    mixbytes(ds.labels.data(), ds.labels.size() * sizeof(int));
    return h;
}

int64_t sample_index(uint64_t seed, int64_t g, int64_t n) {
    return static_cast<int64_t>(mix64(seed, static_cast<uint64_t>(g) + 0x5a17ull) % static_cast<uint64_t>(n));
}

std::pair<Tensor, std::vector<int>> gather_batch(const Dataset& ds, uint64_t seed, int64_t step,
                                                 int rank, int world, int64_t batch, DType dtype) {
    const int64_t n = ds.images.shape()[0];
    const int64_t per = ds.images.numel() / n;
    std::vector<float> buf(static_cast<size_t>(batch * per));
    std::vector<int> labels(static_cast<size_t>(batch));
    auto src = ds.images.data();
    for (int64_t j = 0; j < batch; ++j) {
        const int64_t g = (step - 1) * world * batch + rank * batch + j;
        const int64_t idx = sample_index(seed, g, n);
        std::memcpy(buf.data() + j * per, src.data() + idx * per, static_cast<size_t>(per) * sizeof(float));
        labels[static_cast<size_t>(j)] = ds.labels[static_cast<size_t>(idx)];
    }
    Shape s = ds.images.shape();
    s[0] = batch;
    Tensor t(std::move(s), dtype, std::move(buf));
    return {std::move(t), std::move(labels)};
}

} // namespace simdet
