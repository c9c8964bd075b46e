#pragma once

#include "mrp/api.hpp"
#include "mrp/deployment.hpp"
#include "mrp/kv.hpp"
#include "mrp/merge.hpp"
#include "mrp/recovery.hpp"
#include "mrp/ring_consensus.hpp"
#include "mrp/tcp/net.hpp"
#include "mrp/tcp/protocol.hpp"
#include "mrp/topology.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace mrp::tcp {

struct NodeOptions {
    NodeId id;
    std::map<GroupId, Roles> rings;
    Endpoint listen{"127.0.0.1", 0};
    Endpoint registry{"127.0.0.1", 7400};
    bool kv = false;
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints
    double checkpoint_period_s = 30.0;
    bool recover = false;  // rejoin through cache + checkpoint
    Time registry_timeout = std::chrono::seconds(2);
};

/// What a learner delivered, in order; used to compare learners.
struct DeliveryRecord {
    GroupId group;
    std::uint64_t ring_slot = 0;
    MessageId id;
};

/// One process of a TCP deployment. All protocol work runs on the reactor
/// thread; `api()` and the stats accessors are safe from other threads.
class NodeServer {
public:
    NodeServer(const Scenario& deployment, NodeOptions opts)
        : sc_(deployment),
          opts_(std::move(opts)),
          api_(kNodeClientBase | opts_.id.value, groups_of(deployment),
               [this](GroupId g, Submission s) { submit(g, std::move(s)); }, learner_groups(opts_)) {
        for (const auto& [g, _] : opts_.rings)
            if (!sc_.has_ring(g)) throw Error(Errc::UnknownGroup, std::to_string(g.value));
        const int lfd = tcp_listen(opts_.listen);
        opts_.listen.port = bound_port(lfd);
        reactor_.listen(lfd);
        reactor_.set_udp(udp_bind(Endpoint{opts_.listen.host, 0}));
        reactor_.on_frame = [this](Reactor::ConnId c, wire::Frame&& f) { receive(c, std::move(f)); };
        reactor_.on_close = [this](Reactor::ConnId c) { closed(c); };

        auto learned = learner_groups(opts_);
        if (!learned.empty()) {
            std::vector<GroupId> subs(learned.begin(), learned.end());
            cursor_.emplace(subs, sc_.pacing.merge_m);
            if (opts_.kv) app_ = std::make_unique<kv::Store>();
            if (opts_.recover) cache_.emplace(subs, static_cast<std::size_t>(sc_.cache_mb * (1 << 20)));
        }
        if (!opts_.checkpoint_dir.empty()) store_ = std::make_unique<DirectoryCheckpointStore>(opts_.checkpoint_dir);
        for (const auto& [g, _] : opts_.rings) {
            auto env = std::make_unique<Env>(*this, g);
            rings_.emplace(g, std::make_unique<RingReplica>(opts_.id, g, ring_config_for(sc_), *env));
            envs_.emplace(g, std::move(env));
        }
        recovering_ = opts_.recover && cursor_.has_value();
        if (recovering_) {
            if (!app_ || !store_) throw std::invalid_argument("recovery needs a kv store and a checkpoint directory");
            for (auto& [_, r] : rings_) r->listen_from_next_decision();
        }
    }

    ~NodeServer() { stop(); }

    /// Client ids of messages a node multicasts through its own api().
    static constexpr std::uint32_t kNodeClientBase = 0x8000'0000u;

    const Endpoint& endpoint() const noexcept { return opts_.listen; }
    NodeId id() const noexcept { return opts_.id; }
    AtomicMulticast& api() noexcept { return api_; }

    /// Connects to the registry and registers. Throws RegistryUnreachable.
    void start() {
        const auto deadline = steady_now() + opts_.registry_timeout;
        while (true) {
            try {
                registry_conn_ = reactor_.connect(opts_.registry);
                break;
            } catch (const Error&) {
                if (steady_now() > deadline) throw Error(Errc::RegistryUnreachable, opts_.registry.str());
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
            }
        }
        send_register();
        reactor_.every(from_millis(sc_.heartbeat_ms), [this] { heartbeat(); });
        reactor_.every(from_millis(sc_.pacing.delta_t_ms), [this] { tick(); });
        if (store_ && app_ && sc_.checkpoint_period_s > 0)
            reactor_.every(from_seconds(opts_.checkpoint_period_s), [this] { checkpoint(); });
    }

    /// Serves until stop(). Throws DuplicateNode if the registry refused us.
    void run() {
        reactor_.run();
        if (rejected_) throw Error(Errc::DuplicateNode, std::to_string(opts_.id.value));
    }

    void stop() { reactor_.stop(); }

    std::uint64_t delivered() const { return delivered_.load(); }
    std::uint64_t view_epoch() const { return epoch_.load(); }
    bool live() const { return !recovering_.load(); }
    std::uint64_t fetch_requests() const { return fetches_.load(); }
    std::uint64_t state_hash() const {
        std::lock_guard lock(stats_mu_);
        return hash_;
    }
    std::vector<DeliveryRecord> trace() const {
        std::lock_guard lock(stats_mu_);
        return trace_;
    }

private:
    struct Env final : RingEnv {
        NodeServer& s;
        GroupId g;
        Env(NodeServer& server, GroupId group) : s(server), g(group) {}
        Time now() const override { return steady_now(); }
        void send(NodeId to, wire::Frame f) override { s.send_to(to, std::move(f)); }
        void deliver(GroupId group, std::uint64_t inst, const Value& v, std::uint64_t base) override {
            s.on_ring_delivery(group, inst, v, base);
        }
        void log_reset(GroupId group, std::uint64_t) override {
            if (s.cache_) s.cache_->restart_ring(group);
        }
    };

    static std::set<GroupId> groups_of(const Scenario& sc) {
        std::set<GroupId> out;
        for (const auto& r : sc.rings) out.insert(r.id);
        return out;
    }
    static std::set<GroupId> learner_groups(const NodeOptions& o) {
        std::set<GroupId> out;
        for (const auto& [g, roles] : o.rings)
            if (roles & kLearner) out.insert(g);
        return out;
    }

    // ------------------------------------------------------------ network

    void send_register() {
        Registration reg;
        reg.node = opts_.id;
        reg.address = opts_.listen.str();
        for (const auto& [g, roles] : opts_.rings) reg.rings.push_back({g, roles});
        wire::Frame f;
        f.type = wire::FrameType::Register;
        f.blob = reg.encode();
        reactor_.send(registry_conn_, f);
    }

    void submit(GroupId g, Submission s) {
        reactor_.post([this, g, s = std::move(s)]() mutable {
            auto it = rings_.find(g);
            if (it != rings_.end()) {
                it->second->submit(std::move(s));
                return;
            }
            if (!view_.has_group(g) || view_.members(g).empty()) return;
            wire::Frame f;
            f.type = wire::FrameType::ClientSubmit;
            f.group = g;
            f.value = Value::app({std::move(s)});
            send_to(view_.members(g).front().node, std::move(f));
        });
    }

    void heartbeat() {
        if (!reactor_.alive(registry_conn_)) {
            try {
                registry_conn_ = reactor_.connect(opts_.registry);
                spdlog::info("node {}: reconnected to registry", opts_.id.value);
                send_register();
            } catch (const Error&) {
                return;
            }
        }
        reactor_.send(registry_conn_, Hello::from_node(opts_.id).frame());
    }

    void send_to(NodeId to, wire::Frame f) {
        if (to == opts_.id) {
            reactor_.post([this, f = std::move(f)] {
                auto it = rings_.find(f.group);
                if (it != rings_.end()) it->second->on_frame(opts_.id, f);
            });
            return;
        }
        auto it = peers_.find(to);
        if (it == peers_.end() || !reactor_.alive(it->second)) {
            auto addr = view_.addresses.find(to);
            if (addr == view_.addresses.end()) return;
            auto& retry = connect_after_[to];
            if (reactor_.now() < retry) return;
            try {
                const auto c = reactor_.connect(Endpoint::parse(addr->second));
                reactor_.send(c, Hello::from_node(opts_.id).frame());
                it = peers_.insert_or_assign(to, c).first;
            } catch (const Error&) {
                // the ring's own retries cover the lost frame
                retry = reactor_.now() + std::chrono::milliseconds(200);
                return;
            }
        }
        reactor_.send(it->second, f);
    }

    void receive(Reactor::ConnId c, wire::Frame&& f) {
        using wire::FrameType;
        if (c == registry_conn_) {
            if (f.type != FrameType::View) return;
            if (f.blob.empty()) {
                if (seen_self_) return;  // re-registration after a reconnect; still a member
                rejected_ = true;
                spdlog::error("node {}: registry refused registration (duplicate id)", opts_.id.value);
                reactor_.stop();
                return;
            }
            install_view(TopologyView::decode(f.blob));
            return;
        }
        auto who = inbound_.find(c);
        if (who == inbound_.end()) {
            if (f.type == FrameType::Heartbeat) {
                auto h = Hello::parse(f);
                inbound_[c] = h;
                if (h.is_client() && !h.reply_to.empty()) reply_to_[h.client] = Endpoint::parse(h.reply_to);
                return;
            }
            inbound_[c] = Hello{};
            who = inbound_.find(c);
        }
        auto it = rings_.find(f.group);
        if (it == rings_.end()) return;
        it->second->on_frame(who->second.node, f);
        fetches_ = count_fetches();
    }

    void closed(Reactor::ConnId c) {
        inbound_.erase(c);
        std::erase_if(peers_, [&](const auto& p) { return p.second == c; });
    }

    void install_view(const TopologyView& v) {
        if (v.epoch <= view_.epoch && view_.epoch != 0) return;
        view_ = v;
        epoch_ = v.epoch;
        bool present = false;
        for (const auto& [g, _] : opts_.rings)
            if (v.contains(g, opts_.id)) present = true;
        for (auto& [_, r] : rings_) r->on_view(v);
        if (present) {
            seen_self_ = true;
        } else if (seen_self_) {
            seen_self_ = false;
            spdlog::warn("node {}: dropped from view {}, registering again", opts_.id.value, v.epoch);
            send_register();
        }
    }

    // ------------------------------------------------------------- timers

    void tick() {
        for (auto& [_, r] : rings_) {
            if (r->is_coordinator()) r->pacing_tick();
            r->housekeeping();
        }
        if (recovering_) try_recover();
    }

    void checkpoint() {
        if (recovering_ || !cursor_ || !app_) return;
        const auto cp = make_checkpoint(++checkpoint_id_, *cursor_, app_->take_snapshot());
        try {
            store_->put(cp, opts_.id);
        } catch (const Error& e) {
            spdlog::warn("node {}: checkpoint failed: {}", opts_.id.value, e.what());
        }
    }

    std::uint64_t count_fetches() const {
        std::uint64_t n = 0;
        for (const auto& [_, r] : rings_) n += r->counters().fetch_requests_sent;
        return n;
    }

    // ---------------------------------------------------------- learning

    void on_ring_delivery(GroupId g, std::uint64_t inst, const Value& v, std::uint64_t base) {
        if (!cursor_ || !(opts_.rings.at(g) & kLearner)) return;
        if (recovering_) {
            cache_->append(g, inst, v, base);
            return;
        }
        cursor_->enqueue_decision_at(g, inst, v, base);
        cursor_->try_deliver([&](Delivery&& d) {
            Payload reply;
            if (app_) reply = app_->apply(d);
            delivered(d, reply);
        });
    }

    void delivered(const Delivery& d, const Payload& reply) {
        ++delivered_;
        {
            std::lock_guard lock(stats_mu_);
            trace_.push_back({d.group, d.ring_slot, d.id});
            if (app_) hash_ = app_->state_hash();
        }
        api_.deliver(d);
        auto to = reply_to_.find(d.id.client);
        if (to == reply_to_.end()) return;
        wire::Frame f;
        f.type = wire::FrameType::ClientReply;
        f.value = Value::app({Submission{d.id, reply.empty() ? Payload{0} : reply}});
        reactor_.send_datagram(to->second, f);
    }

    /// Installs the newest checkpoint once it reaches back to the start of
    /// the cache; until then keeps caching.
    void try_recover() {
        if (!cache_->started()) return;
        std::optional<Checkpoint> cp;
        try {
            cp = store_->latest(cache_->rings());
        } catch (const Error&) {
            return;
        }
        if (!cp || !is_valid_checkpoint(*cp, *cache_)) return;
        install_and_replay(*cp, *cache_, *app_, *cursor_,
                           [&](const Delivery& d, const Payload& reply) { delivered(d, reply); });
        cache_.reset();
        for (auto& [_, r] : rings_) r->set_fetch_enabled(true);
        recovering_ = false;
        spdlog::info("node {}: recovered from checkpoint {} ({} fetches)", opts_.id.value, cp->id, count_fetches());
    }

    Scenario sc_;
    NodeOptions opts_;
    Reactor reactor_;
    AtomicMulticast api_;
    std::map<GroupId, std::unique_ptr<Env>> envs_;
    std::map<GroupId, std::unique_ptr<RingReplica>> rings_;
    std::optional<MergeCursor> cursor_;
    std::unique_ptr<kv::Store> app_;
    std::optional<CacheBuffer> cache_;
    std::unique_ptr<CheckpointStore> store_;
    std::uint64_t checkpoint_id_ = 0;

    TopologyView view_;
    bool seen_self_ = false;
    bool rejected_ = false;
    Reactor::ConnId registry_conn_ = 0;
    std::map<NodeId, Reactor::ConnId> peers_;
    std::map<NodeId, Time> connect_after_;
    std::map<Reactor::ConnId, Hello> inbound_;
    std::map<std::uint32_t, Endpoint> reply_to_;

    std::atomic<std::uint64_t> delivered_{0};
    std::atomic<std::uint64_t> epoch_{0};
    std::atomic<std::uint64_t> fetches_{0};
    std::atomic<bool> recovering_{false};
    mutable std::mutex stats_mu_;
    std::vector<DeliveryRecord> trace_;
    std::uint64_t hash_ = 0;
};

}  // namespace mrp::tcp
