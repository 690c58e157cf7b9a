// SPDX-License-Identifier: Apache-2.0
#include "simdet/comm.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

namespace simdet {

namespace {

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back(static_cast<uint8_t>(v & 0xff));
    b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

void check_rank(int r, int world, const char* what) {
    if (r < 0 || r >= world) {
        throw TransportError(std::string(what) + " rank " + std::to_string(r) + " out of range (world " +
                             std::to_string(world) + ")");
    }
}

} // namespace

std::vector<uint8_t> encode_frame(uint16_t tag, std::span<const uint8_t> payload) {
    std::vector<uint8_t> out;
    out.reserve(6 + payload.size());
    put_u32(out, static_cast<uint32_t>(payload.size()));
    put_u16(out, tag);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::pair<uint16_t, std::vector<uint8_t>> decode_frame(std::span<const uint8_t> frame) {
    if (frame.size() < 6) throw FormatError("truncated frame header");
    const uint32_t len = get_u32(frame.data());
    if (frame.size() != 6 + len) throw FormatError("frame length field does not match payload");
    return {get_u16(frame.data() + 4), std::vector<uint8_t>(frame.begin() + 6, frame.end())};
}

// ---- in-process transport ----

namespace {

class InprocTransport final : public Transport {
public:
    explicit InprocTransport(int world) : world_(world), chans_(static_cast<size_t>(world * world)) {}

    int world_size() const override { return world_; }

    void send(int src, int dst, uint16_t tag, std::span<const uint8_t> payload) override {
        check_rank(src, world_, "send src");
        check_rank(dst, world_, "send dst");
        Chan& c = chan(src, dst);
        std::lock_guard lock(c.m);
        c.q.emplace_back(tag, std::vector<uint8_t>(payload.begin(), payload.end()));
        c.cv.notify_all();
    }

    std::vector<uint8_t> recv(int dst, int src, uint16_t tag) override {
        check_rank(src, world_, "recv src");
        check_rank(dst, world_, "recv dst");
        Chan& c = chan(src, dst);
        std::unique_lock lock(c.m);
        for (;;) {
            for (auto it = c.q.begin(); it != c.q.end(); ++it) {
                if (it->first == tag) {
                    std::vector<uint8_t> out = std::move(it->second);
                    c.q.erase(it);
                    return out;
                }
            }
            c.cv.wait(lock);
        }
    }

private:
    struct Chan {
        std::mutex m;
        std::condition_variable cv;
        std::deque<std::pair<uint16_t, std::vector<uint8_t>>> q;
    };
    Chan& chan(int src, int dst) { return chans_[static_cast<size_t>(src * world_ + dst)]; }

    int world_;
    std::vector<Chan> chans_;
};

// ---- loopback TCP transport ----

class SocketTransport final : public Transport {
public:
    explicit SocketTransport(int world) : world_(world), fds_(static_cast<size_t>(world * world), -1),
                                          pending_(static_cast<size_t>(world * world)) {
        const int lis = ::socket(AF_INET, SOCK_STREAM, 0);
        if (lis < 0) throw TransportError("socket() failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        if (::bind(lis, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(lis, 64) != 0) {
            ::close(lis);
            throw TransportError("bind/listen on loopback failed");
        }
        socklen_t alen = sizeof(addr);
        ::getsockname(lis, reinterpret_cast<sockaddr*>(&addr), &alen);
        // one duplex connection per unordered pair {i,j}, i < j connects
        for (int i = 0; i < world_; ++i) {
            for (int j = i + 1; j < world_; ++j) {
                const int cli = ::socket(AF_INET, SOCK_STREAM, 0);
                if (cli < 0 || ::connect(cli, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
                    ::close(lis);
                    throw TransportError("loopback connect failed");
                }
                const int srv = ::accept(lis, nullptr, nullptr);
                if (srv < 0) {
                    ::close(lis);
                    throw TransportError("loopback accept failed");
                }
                int one = 1;
                ::setsockopt(cli, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
                ::setsockopt(srv, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
                fd(i, j) = cli; // i's end
                fd(j, i) = srv; // j's end
            }
        }
        ::close(lis);
    }

    ~SocketTransport() override {
        for (int f : fds_) {
            if (f >= 0) ::close(f);
        }
    }

    int world_size() const override { return world_; }

    void send(int src, int dst, uint16_t tag, std::span<const uint8_t> payload) override {
        check_rank(src, world_, "send src");
        check_rank(dst, world_, "send dst");
        if (src == dst) throw TransportError("socket transport has no self-loop");
        const std::vector<uint8_t> frame = encode_frame(tag, payload);
        write_all(fd(src, dst), frame.data(), frame.size());
    }

    std::vector<uint8_t> recv(int dst, int src, uint16_t tag) override {
        check_rank(src, world_, "recv src");
        check_rank(dst, world_, "recv dst");
        if (src == dst) throw TransportError("socket transport has no self-loop");
        auto& pend = pending_[static_cast<size_t>(dst * world_ + src)];
        for (auto it = pend.begin(); it != pend.end(); ++it) {
            if (it->first == tag) {
                std::vector<uint8_t> out = std::move(it->second);
                pend.erase(it);
                return out;
            }
        }
        const int f = fd(dst, src);
        for (;;) {
            uint8_t hdr[6];
            read_all(f, hdr, 6);
            const uint32_t len = get_u32(hdr);
            const uint16_t t = get_u16(hdr + 4);
            std::vector<uint8_t> payload(len);
            if (len > 0) read_all(f, payload.data(), len);
            if (t == tag) return payload;
            pend.emplace_back(t, std::move(payload));
        }
    }

private:
    int& fd(int a, int b) { return fds_[static_cast<size_t>(a * world_ + b)]; }

    static void write_all(int f, const uint8_t* p, size_t n) {
        while (n > 0) {
            const ssize_t w = ::write(f, p, n);
            if (w <= 0) throw TransportError("socket write failed (peer disconnected?)");
            p += w;
            n -= static_cast<size_t>(w);
        }
    }

    static void read_all(int f, uint8_t* p, size_t n) {
        while (n > 0) {
            const ssize_t r = ::read(f, p, n);
            if (r <= 0) throw TransportError("socket read failed (peer disconnected?)");
            p += r;
            n -= static_cast<size_t>(r);
        }
    }

    int world_;
    std::vector<int> fds_;
    // frames read while looking for another tag, per (dst,src)
    std::vector<std::deque<std::pair<uint16_t, std::vector<uint8_t>>>> pending_;
};

} // namespace

std::shared_ptr<Transport> make_inproc_transport(int world) {
    return std::make_shared<InprocTransport>(world);
}

std::shared_ptr<Transport> make_socket_transport(int world) {
    return std::make_shared<SocketTransport>(world);
}

// ---- collectives ----

std::vector<std::pair<int64_t, int64_t>> ring_chunks(int64_t n, int k) {
    std::vector<std::pair<int64_t, int64_t>> chunks(static_cast<size_t>(k));
    const int64_t base = n / k, rem = n % k;
    int64_t at = 0;
    for (int c = 0; c < k; ++c) {
        const int64_t len = base + (c < rem ? 1 : 0);
        chunks[static_cast<size_t>(c)] = {at, len};
        at += len;
    }
    return chunks;
}

CommGroup::CommGroup(int rank, std::shared_ptr<Transport> transport)
    : rank_(rank), world_(transport->world_size()), transport_(std::move(transport)) {
    check_rank(rank_, world_, "group");
}

namespace {
constexpr uint8_t kOpReduceScatter = 1;
constexpr uint8_t kOpAllGather = 2;
constexpr uint8_t kOpBroadcast = 3;
constexpr uint8_t kOpPsPush = 4;
constexpr uint8_t kOpPsPull = 5;
constexpr uint8_t kOpShapeCheck = 6;
} // namespace

void CommGroup::send_collective(int dst, uint32_t seq, uint8_t opcode, std::span<const float> data) {
    std::vector<uint8_t> msg;
    msg.reserve(9 + data.size() * 4);
    put_u32(msg, seq);
    msg.push_back(opcode);
    put_u32(msg, static_cast<uint32_t>(data.size()));
    const size_t off = msg.size();
    msg.resize(off + data.size() * 4);
    std::memcpy(msg.data() + off, data.data(), data.size() * 4);
    transport_->send(rank_, dst, static_cast<uint16_t>(seq), msg);
}

std::vector<float> CommGroup::recv_collective(int src, uint32_t seq, uint8_t opcode, int64_t expect_n) {
    const std::vector<uint8_t> msg = transport_->recv(rank_, src, static_cast<uint16_t>(seq));
    if (msg.size() < 9) throw ProtocolError("collective message too short");
    const uint32_t got_seq = get_u32(msg.data());
    const uint8_t got_op = msg[4];
    const uint32_t n = get_u32(msg.data() + 5);
    if (got_seq != seq || got_op != opcode) {
        throw ProtocolError("collective out of sync: expected seq " + std::to_string(seq) + "/op " +
                            std::to_string(opcode) + ", got seq " + std::to_string(got_seq) + "/op " +
                            std::to_string(got_op));
    }
    if (expect_n >= 0 && static_cast<int64_t>(n) != expect_n) {
        throw CollectiveError("collective payload length mismatch across ranks");
    }
    if (msg.size() != 9 + static_cast<size_t>(n) * 4) throw ProtocolError("collective payload truncated");
    std::vector<float> out(n);
    std::memcpy(out.data(), msg.data() + 9, static_cast<size_t>(n) * 4);
    return out;
}

void CommGroup::allreduce_sum(std::span<float> data) {
    const uint32_t seq = next_seq();
    if (world_ == 1) return;
    const int right = (rank_ + 1) % world_;
    const int left = (rank_ + world_ - 1) % world_;
    const auto chunks = ring_chunks(static_cast<int64_t>(data.size()), world_);
    // reduce-scatter: after K-1 steps rank r owns the full sum of chunk (r+1)%K
    for (int s = 0; s < world_ - 1; ++s) {
        const int csend = (rank_ - s + world_) % world_;
        const int crecv = (rank_ - s - 1 + world_) % world_;
        const auto [soff, slen] = chunks[static_cast<size_t>(csend)];
        send_collective(right, seq, kOpReduceScatter, data.subspan(static_cast<size_t>(soff), static_cast<size_t>(slen)));
        const auto [roff, rlen] = chunks[static_cast<size_t>(crecv)];
        const std::vector<float> incoming = recv_collective(left, seq, kOpReduceScatter, rlen);
        for (int64_t i = 0; i < rlen; ++i) data[static_cast<size_t>(roff + i)] += incoming[static_cast<size_t>(i)];
    }
    // all-gather the reduced chunks
    const uint32_t seq2 = next_seq();
    for (int s = 0; s < world_ - 1; ++s) {
        const int csend = (rank_ + 1 - s + world_) % world_;
        const int crecv = (rank_ - s + world_) % world_;
        const auto [soff, slen] = chunks[static_cast<size_t>(csend)];
        send_collective(right, seq2, kOpAllGather, data.subspan(static_cast<size_t>(soff), static_cast<size_t>(slen)));
        const auto [roff, rlen] = chunks[static_cast<size_t>(crecv)];
        const std::vector<float> incoming = recv_collective(left, seq2, kOpAllGather, rlen);
        std::memcpy(data.data() + roff, incoming.data(), static_cast<size_t>(rlen) * 4);
    }
}

Tensor CommGroup::ring_allreduce(const Tensor& t) {
    // equal shapes across ranks checked against rank 0
    std::vector<float> shape_probe;
    shape_probe.push_back(static_cast<float>(t.shape().size()));
    for (int64_t d : t.shape()) shape_probe.push_back(static_cast<float>(d));
    shape_probe.resize(6, 0.0f);
    const uint32_t seq = next_seq();
    if (rank_ == 0) {
        for (int dst = 1; dst < world_; ++dst) send_collective(dst, seq, kOpShapeCheck, shape_probe);
    } else {
        const std::vector<float> root = recv_collective(0, seq, kOpShapeCheck, 6);
        if (root != shape_probe) {
            throw CollectiveError("ring_allreduce: tensor shape differs across ranks");
        }
    }
    Tensor out = t.astype(DType::F32);
    allreduce_sum(out.data());
    out = out.astype(t.dtype());
    return out;
}

void CommGroup::broadcast(int root, std::span<float> data) {
    check_rank(root, world_, "broadcast root");
    const uint32_t seq = next_seq();
    if (world_ == 1) return;
    if (rank_ == root) {
        for (int dst = 0; dst < world_; ++dst) {
            if (dst != root) send_collective(dst, seq, kOpBroadcast, data);
        }
    } else {
        const std::vector<float> incoming = recv_collective(root, seq, kOpBroadcast, static_cast<int64_t>(data.size()));
        std::memcpy(data.data(), incoming.data(), data.size() * 4);
    }
}

Tensor CommGroup::broadcast(int root, const Tensor& t) {
    Tensor out = t;
    broadcast(root, out.data());
    return out;
}

// ---- parameter server ----

CommGroup::PsEntry& CommGroup::entry(const std::string& key) {
    auto it = ps_.find(key);
    if (it == ps_.end()) throw KeyError("unregistered parameter key: " + key);
    return it->second;
}

const CommGroup::PsEntry& CommGroup::entry(const std::string& key) const {
    auto it = ps_.find(key);
    if (it == ps_.end()) throw KeyError("unregistered parameter key: " + key);
    return it->second;
}

void CommGroup::ps_register(const std::string& key, int64_t numel, std::vector<float> init, PsUpdateRule rule) {
    if (ps_.count(key)) throw KeyError("parameter key already registered: " + key);
    if (static_cast<int64_t>(init.size()) != numel) throw ContractError("ps_register: init length mismatch");
    PsEntry e;
    e.numel = numel;
    e.id = next_key_id_++;
    e.rule = std::move(rule);
    if (rank_ == 0) {
        e.weights = std::move(init);
        e.velocity.assign(static_cast<size_t>(numel), 0.0f);
        e.grad_sum.assign(static_cast<size_t>(numel), 0.0f);
    }
    ps_.emplace(key, std::move(e));
}

void CommGroup::ps_push(const std::string& key, std::span<const float> grad) {
    PsEntry& e = entry(key);
    if (static_cast<int64_t>(grad.size()) != e.numel) throw ContractError("ps_push: gradient length mismatch");
    if (e.pushed_since_pull) throw ProtocolError("double push for key " + key + " within one round");
    e.pushed_since_pull = true;
    const uint32_t seq = next_seq();
    if (rank_ != 0) {
        send_collective(0, seq, kOpPsPush, grad);
        return;
    }
    // server: gather contributions, reduce in the same chunked ring order
    // as the all-reduce backend so both backends agree bitwise
    std::vector<std::vector<float>> contrib(static_cast<size_t>(world_));
    contrib[0].assign(grad.begin(), grad.end());
    for (int src = 1; src < world_; ++src) {
        contrib[static_cast<size_t>(src)] = recv_collective(src, seq, kOpPsPush, e.numel);
    }
    const auto chunks = ring_chunks(e.numel, world_);
    for (int c = 0; c < world_; ++c) {
        const auto [off, len] = chunks[static_cast<size_t>(c)];
        for (int64_t i = 0; i < len; ++i) {
            float acc = contrib[static_cast<size_t>(c)][static_cast<size_t>(off + i)];
            for (int t = 1; t < world_; ++t) {
                acc += contrib[static_cast<size_t>((c + t) % world_)][static_cast<size_t>(off + i)];
            }
            e.grad_sum[static_cast<size_t>(off + i)] = acc;
        }
    }
    e.last_overflow = e.rule ? e.rule(e.weights, e.velocity, e.grad_sum) : false;
    e.version++;
}

PullResult CommGroup::ps_pull(const std::string& key) {
    PsEntry& e = entry(key);
    e.pushed_since_pull = false;
    const uint32_t seq = next_seq();
    PullResult res;
    if (rank_ == 0) {
        // weights + trailing (version, overflow) floats; version fits a
        // float exactly for any realistic step count in this artifact
        std::vector<float> msg(e.weights);
        msg.push_back(static_cast<float>(e.version));
        msg.push_back(e.last_overflow ? 1.0f : 0.0f);
        for (int dst = 1; dst < world_; ++dst) send_collective(dst, seq, kOpPsPull, msg);
        res.weights = e.weights;
        res.version = e.version;
        res.overflow = e.last_overflow;
    } else {
        std::vector<float> msg = recv_collective(0, seq, kOpPsPull, e.numel + 2);
        res.overflow = msg.back() != 0.0f;
        msg.pop_back();
        res.version = static_cast<uint64_t>(msg.back());
        msg.pop_back();
        res.weights = std::move(msg);
    }
    return res;
}

std::span<const float> CommGroup::ps_server_weights(const std::string& key) const { return entry(key).weights; }
std::span<const float> CommGroup::ps_server_velocity(const std::string& key) const { return entry(key).velocity; }
std::span<float> CommGroup::ps_server_velocity_mut(const std::string& key) { return entry(key).velocity; }
std::span<const float> CommGroup::ps_server_grad_sum(const std::string& key) const { return entry(key).grad_sum; }
uint64_t CommGroup::ps_server_version(const std::string& key) const { return entry(key).version; }

void run_workers(int k, const std::shared_ptr<Transport>& transport,
                 const std::function<void(CommGroup&)>& body) {
    std::vector<std::thread> threads;
    std::vector<std::string> errors(static_cast<size_t>(k));
    for (int r = 0; r < k; ++r) {
        threads.emplace_back([&, r] {
            try {
                CommGroup group(r, transport);
                body(group);
            } catch (const std::exception& e) {
                errors[static_cast<size_t>(r)] = e.what();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (int r = 0; r < k; ++r) {
        if (!errors[static_cast<size_t>(r)].empty()) {
            throw Error("[rank " + std::to_string(r) + "] " + errors[static_cast<size_t>(r)]);
        }
    }
}

// ---- cost model ----

void CostModel::validate() const {
    if (bandwidth <= 0.0 || payload < 0.0 || latency < 0.0 || compute_seconds <= 0.0 || workers < 1 ||
        overlap < 0.0 || overlap > 1.0) {
        throw ParamError("invalid cost model parameters");
    }
}

SimStep simulate_step_time(const CostModel& m) {
    m.validate();
    const double k = static_cast<double>(m.workers);
    double comm = 0.0;
    if (m.workers > 1) {
        if (m.algorithm == CommAlgo::Ring) {
            comm = 2.0 * (k - 1.0) * (m.latency + m.payload / (k * m.bandwidth));
        } else {
            comm = 2.0 * k * m.payload / m.bandwidth + 2.0 * m.latency;
        }
    }
    SimStep out;
    out.step_seconds = m.compute_seconds + (1.0 - m.overlap) * comm;
    out.efficiency = m.compute_seconds / out.step_seconds;
    out.throughput_multiplier = k * out.efficiency;
    return out;
}

} // namespace simdet
