// SPDX-License-Identifier: Apache-2.0
#include "simdet/syncbn.hpp"

#include <cmath>
#include <cstdio>

namespace simdet {

namespace {

void check_input(const Tensor& x, size_t gamma_n, size_t beta_n) {
    if (x.shape().size() != 4) throw ShapeError("syncbn expects rank-4 input, got " + shape_str(x.shape()));
    const size_t c = static_cast<size_t>(x.shape()[1]);
    if (gamma_n != c || beta_n != c) {
        throw ContractError("syncbn parameter length does not match channel count " + std::to_string(c));
    }
}

} // namespace

std::pair<Tensor, BNStats> syncbn_forward(const Tensor& x, std::span<const float> gamma,
                                          std::span<const float> beta, float eps, CommGroup* group) {
    check_input(x, gamma.size(), beta.size());
    const int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];

    // one flat buffer: [sum_0..sum_{C-1}, sumsq_0..sumsq_{C-1}, count]
    std::vector<float> agg(static_cast<size_t>(2 * C + 1), 0.0f);
    auto xd = x.data();
    for (int64_t c = 0; c < C; ++c) {
        double s = 0.0, sq = 0.0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < hw; ++i) {
                const double v = xd[(n * C + c) * hw + i];
                s += v;
                sq += v * v;
            }
        agg[static_cast<size_t>(c)] = static_cast<float>(s);
        agg[static_cast<size_t>(C + c)] = static_cast<float>(sq);
    }
    agg[static_cast<size_t>(2 * C)] = static_cast<float>(N * hw);
    if (group && group->size() > 1) group->allreduce_sum(agg);

    BNStats stats;
    stats.count = static_cast<int64_t>(agg[static_cast<size_t>(2 * C)]);
    if (stats.count < 2) throw DegenerateBatchError("syncbn: global batch count < 2 per channel");
    stats.sum.assign(agg.begin(), agg.begin() + C);
    stats.sumsq.assign(agg.begin() + C, agg.begin() + 2 * C);
    stats.mean.resize(static_cast<size_t>(C));
    stats.invstd.resize(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
        const double mean = static_cast<double>(stats.sum[static_cast<size_t>(c)]) / stats.count;
        double var = static_cast<double>(stats.sumsq[static_cast<size_t>(c)]) / stats.count - mean * mean;
        if (var < 0.0) var = 0.0; // catastrophic cancellation clamp
        stats.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
        stats.invstd[static_cast<size_t>(c)] = static_cast<float>(1.0 / std::sqrt(var + eps));
    }

    Tensor y(x.shape(), x.dtype(), 0.0f);
    auto yd = y.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i) {
                const int64_t at = (n * C + c) * hw + i;
                yd[at] = gamma[static_cast<size_t>(c)] * (xd[at] - stats.mean[static_cast<size_t>(c)]) *
                             stats.invstd[static_cast<size_t>(c)] +
                         beta[static_cast<size_t>(c)];
            }
    y.quantize();
    return {std::move(y), std::move(stats)};
}

BnGrads syncbn_backward(const Tensor& dy, const Tensor& x, const BNStats& stats,
                        std::span<const float> gamma, CommGroup* group) {
    check_input(x, gamma.size(), gamma.size());
    if (stats.mean.empty()) throw ContractError("syncbn backward without saved statistics");
    if (dy.shape() != x.shape()) throw ShapeError("syncbn backward: dy shape mismatch");
    const int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];

    // local per-channel sum(dy) and sum(dy*xhat), then one all-reduce
    std::vector<float> red(static_cast<size_t>(2 * C), 0.0f);
    auto xd = x.data();
    auto gd = dy.data();
    for (int64_t c = 0; c < C; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < hw; ++i) {
                const int64_t at = (n * C + c) * hw + i;
                const double xh = (xd[at] - stats.mean[static_cast<size_t>(c)]) *
                                  stats.invstd[static_cast<size_t>(c)];
                s1 += gd[at];
                s2 += gd[at] * xh;
            }
        red[static_cast<size_t>(c)] = static_cast<float>(s1);
        red[static_cast<size_t>(C + c)] = static_cast<float>(s2);
    }
    if (group && group->size() > 1) group->allreduce_sum(red);

    BnGrads out;
    out.dx = Tensor(x.shape(), DType::F32, 0.0f);
    out.dgamma.assign(red.begin() + C, red.begin() + 2 * C);
    out.dbeta.assign(red.begin(), red.begin() + C);
    auto dxd = out.dx.data();
    const float m = static_cast<float>(stats.count);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const float gis = gamma[static_cast<size_t>(c)] * stats.invstd[static_cast<size_t>(c)];
            const float s1 = red[static_cast<size_t>(c)] / m;
            const float s2 = red[static_cast<size_t>(C + c)] / m;
            for (int64_t i = 0; i < hw; ++i) {
                const int64_t at = (n * C + c) * hw + i;
                const float xh = (xd[at] - stats.mean[static_cast<size_t>(c)]) *
                                 stats.invstd[static_cast<size_t>(c)];
                dxd[at] = gis * (gd[at] - s1 - xh * s2);
            }
        }
    return out;
}

void update_running_stats(RunningStats& running, const BNStats& stats) {
    if (stats.count <= 1) {
        std::fprintf(stderr, "warning: skipping running-stat update for degenerate batch (count=%lld)\n",
                     static_cast<long long>(stats.count));
        return;
    }
    const size_t c = stats.mean.size();
    if (running.mean.empty()) {
        running.mean.assign(c, 0.0f);
        running.var.assign(c, 1.0f);
    }
    if (running.momentum <= 0.0f || running.momentum > 1.0f) {
        throw ContractError("running-stat momentum must be in (0,1]");
    }
    const float m = running.momentum;
    const double unbias = static_cast<double>(stats.count) / static_cast<double>(stats.count - 1);
    for (size_t i = 0; i < c; ++i) {
        const double mean = stats.mean[i];
        const double var = static_cast<double>(stats.sumsq[i]) / stats.count - mean * mean;
        const double uvar = std::max(0.0, var) * unbias;
        running.mean[i] = (1.0f - m) * running.mean[i] + m * static_cast<float>(mean);
        running.var[i] = (1.0f - m) * running.var[i] + m * static_cast<float>(uvar);
    }
}

} // namespace simdet
