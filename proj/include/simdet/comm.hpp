// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "simdet/errors.hpp"
#include "simdet/tensor.hpp"

namespace simdet {

// Reliable, ordered point-to-point byte transport. One instance is
// shared by all ranks of a group; each rank passes its own rank as
// src/dst. Ordering is guaranteed per (src,dst,tag).
class Transport {
public:
    virtual ~Transport() = default;
    virtual int world_size() const = 0;
    virtual void send(int src, int dst, uint16_t tag, std::span<const uint8_t> payload) = 0;
    virtual std::vector<uint8_t> recv(int dst, int src, uint16_t tag) = 0;
};

// In-process message channels (default).
std::shared_ptr<Transport> make_inproc_transport(int world);
// Loopback TCP mesh speaking the documented wire format:
// [u32 LE payload length][u16 LE tag][payload].
std::shared_ptr<Transport> make_socket_transport(int world);

// Wire-format helpers, exposed so alternate implementations can interoperate.
std::vector<uint8_t> encode_frame(uint16_t tag, std::span<const uint8_t> payload);
// returns {tag, payload}; throws FormatError on a truncated frame
std::pair<uint16_t, std::vector<uint8_t>> decode_frame(std::span<const uint8_t> frame);

// Chunk partition used by ring all-reduce: K chunks, remainder spread
// over the first chunks. Returned as (offset, length) pairs.
std::vector<std::pair<int64_t, int64_t>> ring_chunks(int64_t n, int k);

// Parameter-server update rule; returns true when the step was skipped
// (gradient overflow).
using PsUpdateRule =
    std::function<bool(std::span<float> weights, std::span<float> velocity, std::span<const float> grad_sum)>;

struct PullResult {
    std::vector<float> weights;
    uint64_t version = 0;
    bool overflow = false;
};

// Per-rank handle on a worker group. Collectives must be called in the
// same order by every rank; a sequence counter embedded in every message
// turns ordering mistakes into protocol errors instead of deadlocks.
class CommGroup {
public:
    CommGroup(int rank, std::shared_ptr<Transport> transport);

    int rank() const { return rank_; }
    int size() const { return world_; }
    uint32_t collective_seq() const { return seq_; }

    // elementwise sum on every rank; reduce-scatter + all-gather over
    // ring_chunks, 2*(K-1) steps
    void allreduce_sum(std::span<float> data);
    Tensor ring_allreduce(const Tensor& t);

    void broadcast(int root, std::span<float> data);
    Tensor broadcast(int root, const Tensor& t);

    // ---- parameter server (server = rank 0, bulk synchronous) ----
    void ps_register(const std::string& key, int64_t numel, std::vector<float> init, PsUpdateRule rule);
    void ps_push(const std::string& key, std::span<const float> grad);
    PullResult ps_pull(const std::string& key);
    // rank-0 introspection (checkpointing, tests)
    std::span<const float> ps_server_weights(const std::string& key) const;
    std::span<const float> ps_server_velocity(const std::string& key) const;
    std::span<float> ps_server_velocity_mut(const std::string& key);
    std::span<const float> ps_server_grad_sum(const std::string& key) const;
    uint64_t ps_server_version(const std::string& key) const;

private:
    struct PsEntry {
        int64_t numel = 0;
        uint16_t id = 0;
        PsUpdateRule rule;
        bool pushed_since_pull = false;
        // server side (rank 0 only)
        std::vector<float> weights, velocity, grad_sum;
        uint64_t version = 0;
        bool last_overflow = false;
    };

    uint32_t next_seq() { return seq_++; }
    void send_collective(int dst, uint32_t seq, uint8_t opcode, std::span<const float> data);
    std::vector<float> recv_collective(int src, uint32_t seq, uint8_t opcode, int64_t expect_n);
    PsEntry& entry(const std::string& key);
    const PsEntry& entry(const std::string& key) const;

    int rank_;
    int world_;
    std::shared_ptr<Transport> transport_;
    uint32_t seq_ = 0;
    std::map<std::string, PsEntry> ps_;
    uint16_t next_key_id_ = 0;
};

// Spawn K worker threads, one CommGroup each; rethrows the first worker
// failure tagged with its rank.
void run_workers(int k, const std::shared_ptr<Transport>& transport,
                 const std::function<void(CommGroup&)>& body);

// ---- analytical cost model (scaling story) ----

enum class CommAlgo { Ring, Ps };

struct CostModel {
    double bandwidth = 0.0;       // bytes/s per link
    double latency = 0.0;         // s per message
    double payload = 0.0;         // gradient bytes per step
    int workers = 1;
    CommAlgo algorithm = CommAlgo::Ring;
    double compute_seconds = 0.0; // T_c
    double overlap = 0.0;         // fraction of comm hidden by compute

    void validate() const;
};

struct SimStep {
    double step_seconds = 0.0;
    double efficiency = 0.0;           // T_c / step
    double throughput_multiplier = 0.0; // K * efficiency
};

SimStep simulate_step_time(const CostModel& m);

} // namespace simdet
