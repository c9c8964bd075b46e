#pragma once

#include "mrp/scenario.hpp"
#include "mrp/tcp/net.hpp"
#include "mrp/tcp/protocol.hpp"
#include "mrp/topology.hpp"
#include "mrp/value.hpp"
#include "mrp/workload.hpp"

#include <spdlog/spdlog.h>

#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <thread>
#include <vector>

namespace mrp::tcp {

struct ClientOptions {
    ClientSpec spec;  // id, groups, threads, size, workload, timeout_ms, contact, reply_from
    Endpoint registry{"127.0.0.1", 7400};
    std::string host = "127.0.0.1";  // where replies should be sent
    double duration_s = 10.0;
    Time view_timeout = std::chrono::seconds(5);
    std::uint64_t seed = 1;
};

struct ClientResult {
    std::vector<Time> latencies;
    std::uint64_t sent = 0;
    std::uint64_t completed = 0;
    std::uint64_t resubmits = 0;
};

/// Closed-loop load generator: every worker thread keeps one message
/// outstanding, waits for the first reply, and resubmits to the next ring
/// member on timeout.
class LoadClient {
public:
    explicit LoadClient(ClientOptions opts) : opts_(std::move(opts)) {
        if (opts_.spec.groups.empty()) throw std::invalid_argument("client needs at least one group");
        const int u = udp_bind(Endpoint{opts_.host, 0});
        udp_port_ = bound_port(u);
        reactor_.set_udp(u);
        reactor_.on_frame = [this](Reactor::ConnId, wire::Frame&& f) { on_frame(f); };
        reactor_.on_datagram = [this](std::span<const std::uint8_t> b) { on_datagram(b); };
    }

    ClientResult run() {
        try {
            registry_ = reactor_.connect(opts_.registry);
        } catch (const Error&) {
            throw Error(Errc::RegistryUnreachable, opts_.registry.str());
        }
        reactor_.send(registry_, hello(false));
        std::thread net([this] { reactor_.run(); });
        struct Join {
            Reactor& r;
            std::thread& t;
            ~Join() {
                r.stop();
                t.join();
            }
        } join{reactor_, net};

        {
            std::unique_lock lock(mu_);
            if (!view_cv_.wait_for(lock, opts_.view_timeout, [&] { return ready_locked(); }))
                throw Error(Errc::NotConnected, "no ring members in view");
        }
        const auto stop_at = steady_now() + from_seconds(opts_.duration_s);
        std::vector<std::thread> workers;
        for (std::uint32_t t = 0; t < opts_.spec.threads; ++t)
            workers.emplace_back([this, t, stop_at] { worker(t, stop_at); });
        for (auto& w : workers) w.join();

        std::lock_guard lock(mu_);
        return result_;
    }

private:
    struct Waiting {
        bool done = false;
    };

    wire::Frame hello(bool want_replies) const {
        Hello h;
        h.client = opts_.spec.id;
        if (want_replies) h.reply_to = opts_.host + ":" + std::to_string(udp_port_);
        return h.frame();
    }

    bool ready_locked() const {
        for (const auto& [g, _] : opts_.spec.groups)
            if (!view_.has_group(g) || view_.members(g).empty()) return false;
        return true;
    }

    void on_frame(const wire::Frame& f) {
        if (f.type != wire::FrameType::View || f.blob.empty()) return;
        auto v = TopologyView::decode(f.blob);
        {
            std::lock_guard lock(mu_);
            if (v.epoch < view_.epoch) return;
            view_ = v;
        }
        connect_repliers(v);
        view_cv_.notify_all();
    }

    /// Raw workloads want one reply per message, key-value workloads one from
    /// every replica; ask the corresponding learners to reply.
    void connect_repliers(const TopologyView& v) {
        std::set<NodeId> want;
        for (const auto& [g, _] : opts_.spec.groups) {
            if (!v.has_group(g)) continue;
            std::vector<NodeId> learners;
            for (const auto& m : v.members(g))
                if (m.roles & kLearner) learners.push_back(m.node);
            if (learners.empty()) continue;
            if (opts_.spec.workload == Workload::Kv) {
                want.insert(learners.begin(), learners.end());
            } else if (opts_.spec.reply_from &&
                       std::find(learners.begin(), learners.end(), *opts_.spec.reply_from) != learners.end()) {
                want.insert(*opts_.spec.reply_from);
            } else {
                want.insert(learners.front());
            }
        }
        for (auto n : want) {
            if (reply_conns_.contains(n) && reactor_.alive(reply_conns_[n])) continue;
            auto addr = v.addresses.find(n);
            if (addr == v.addresses.end()) continue;
            try {
                reply_conns_[n] = reactor_.connect(Endpoint::parse(addr->second));
                reactor_.send(reply_conns_[n], hello(true));
            } catch (const Error& e) {
                spdlog::warn("client {}: cannot reach learner {}: {}", opts_.spec.id, n.value, e.what());
            }
        }
    }

    void on_datagram(std::span<const std::uint8_t> bytes) {
        wire::Frame f;
        try {
            f = wire::decode(bytes);
        } catch (const Error&) {
            return;
        }
        if (f.type != wire::FrameType::ClientReply || !f.value.is_app()) return;
        std::lock_guard lock(mu_);
        for (const auto& s : f.value.batch()) {
            auto it = waiting_.find(s.id.seq);
            if (it != waiting_.end()) it->second.done = true;
        }
        reply_cv_.notify_all();
    }

    std::optional<NodeId> contact(GroupId g, std::uint32_t attempt) {
        std::lock_guard lock(mu_);
        if (!view_.has_group(g) || view_.members(g).empty()) return std::nullopt;
        const auto& ms = view_.members(g);
        if (attempt == 0 && opts_.spec.contact && view_.contains(g, *opts_.spec.contact)) return opts_.spec.contact;
        return ms[attempt % ms.size()].node;
    }

    void send(GroupId g, NodeId to, Submission s) {
        reactor_.post([this, g, to, s = std::move(s)]() mutable {
            auto it = submit_conns_.find(to);
            if (it == submit_conns_.end() || !reactor_.alive(it->second)) {
                std::string addr;
                {
                    std::lock_guard lock(mu_);
                    auto a = view_.addresses.find(to);
                    if (a == view_.addresses.end()) return;
                    addr = a->second;
                }
                try {
                    const auto c = reactor_.connect(Endpoint::parse(addr));
                    reactor_.send(c, hello(false));
                    it = submit_conns_.insert_or_assign(to, c).first;
                } catch (const Error&) {
                    return;  // the worker's timeout resubmits elsewhere
                }
            }
            wire::Frame f;
            f.type = wire::FrameType::ClientSubmit;
            f.group = g;
            f.value = Value::app({std::move(s)});
            reactor_.send(it->second, f);
        });
    }

    GroupId pick_group(std::mt19937_64& rng) const {
        const auto& gs = opts_.spec.groups;
        if (gs.size() == 1) return gs.front().first;
        double total = 0;
        for (const auto& [_, w] : gs) total += w;
        double x = std::uniform_real_distribution<double>(0, total)(rng);
        for (const auto& [g, w] : gs) {
            if (x < w) return g;
            x -= w;
        }
        return gs.back().first;
    }

    void worker(std::uint32_t thread, Time stop_at) {
        std::mt19937_64 rng(opts_.seed * 1000003 + thread);
        const auto timeout = from_millis(opts_.spec.timeout_ms);
        while (steady_now() < stop_at) {
            std::uint64_t seq;
            {
                std::lock_guard lock(mu_);
                seq = next_seq_++;
                waiting_[seq];
                ++result_.sent;
            }
            const auto g = pick_group(rng);
            auto payload = make_payload(opts_.spec, seq, rng);
            const auto start = steady_now();
            bool done = false;
            for (std::uint32_t attempt = 0; !done && steady_now() < stop_at; ++attempt) {
                if (auto to = contact(g, attempt)) send(g, *to, Submission{MessageId{opts_.spec.id, seq}, payload});
                if (attempt > 0) {
                    std::lock_guard lock(mu_);
                    ++result_.resubmits;
                }
                std::unique_lock lock(mu_);
                done = reply_cv_.wait_for(lock, std::min(timeout, stop_at - steady_now()),
                                          [&] { return waiting_[seq].done; });
            }
            std::lock_guard lock(mu_);
            if (done) {
                ++result_.completed;
                result_.latencies.push_back(steady_now() - start);
            }
            waiting_.erase(seq);
        }
    }

    ClientOptions opts_;
    Reactor reactor_;
    std::uint16_t udp_port_ = 0;
    Reactor::ConnId registry_ = 0;
    std::map<NodeId, Reactor::ConnId> reply_conns_;   // reactor thread only
    std::map<NodeId, Reactor::ConnId> submit_conns_;  // reactor thread only

    std::mutex mu_;
    std::condition_variable view_cv_;
    std::condition_variable reply_cv_;
    TopologyView view_;
    std::map<std::uint64_t, Waiting> waiting_;
    std::uint64_t next_seq_ = 0;
    ClientResult result_;
};

}  // namespace mrp::tcp
