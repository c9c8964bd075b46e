#pragma once

#include "mrp/core.hpp"
#include "mrp/deployment.hpp"
#include "mrp/kv.hpp"
#include "mrp/merge.hpp"
#include "mrp/metrics.hpp"
#include "mrp/recovery.hpp"
#include "mrp/ring_consensus.hpp"
#include "mrp/scenario.hpp"
#include "mrp/sim/event_loop.hpp"
#include "mrp/topology.hpp"
#include "mrp/wire.hpp"
#include "mrp/workload.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace mrp::sim {

/// Endpoint numbering: 0 is the registry, 1..65535 are nodes, clients sit
/// above 0x10000.
using Address = std::uint32_t;
inline constexpr Address kRegistry = 0;
inline constexpr Address kClientBase = 0x10000;
inline Address address_of(NodeId n) { return n.value; }
inline Address client_address(std::uint32_t c) { return kClientBase + c; }

struct DeliveryRecord {
    Time at{0};
    GroupId group;
    std::uint64_t instance = 0;
    std::uint64_t ring_slot = 0;
    std::uint64_t global_slot = 0;
    MessageId id;
    std::uint64_t digest = 0;
};

struct LatencySample {
    Time at{0};
    GroupId group;
    Time latency{0};
    MessageId id;
};

struct SafetyReport {
    std::uint64_t agreement = 0;
    std::uint64_t order = 0;
    std::uint64_t integrity = 0;
    std::uint64_t single_value = 0;
    std::vector<std::string> details;

    bool ok() const noexcept { return agreement + order + integrity + single_value == 0; }
};

struct ClusterOptions {
    bool keep_trace = true;
    /// Checkpoint directory; in-memory store when empty.
    std::string checkpoint_dir;
    /// Width of the per-node delivery-rate buckets.
    Time rate_bucket = std::chrono::milliseconds(100);
    /// Event budget for a whole run; exceeding it raises HorizonExceeded.
    std::uint64_t max_events = 0;
};

/// A whole deployment simulated on one virtual-time loop.
class Cluster {
public:
    struct Submitted {
        Time first_sent{0};
        GroupId group;
        std::uint64_t digest = 0;
        bool completed = false;
    };

    struct Node;

    Cluster(Scenario sc, std::uint64_t seed, ClusterOptions opts = {})
        : sc_(std::move(sc)), seed_(seed), opts_(std::move(opts)), rng_(seed) {
        sc_.validate();
        if (opts_.checkpoint_dir.empty())
            store_ = std::make_unique<MemoryCheckpointStore>();
        else
            store_ = std::make_unique<DirectoryCheckpointStore>(opts_.checkpoint_dir);
        registry_region_ = sc_.registry_region.empty() ? sc_.nodes.front().region : sc_.registry_region;
        suspicion_ = from_millis(sc_.suspicion_ms);
        heartbeat_ = from_millis(sc_.heartbeat_ms);
        fd_.emplace(suspicion_);
        build();
    }

    Cluster(const Cluster&) = delete;
    Cluster& operator=(const Cluster&) = delete;

    // ------------------------------------------------------------- running

    Time now() const noexcept { return loop_.now(); }
    Time horizon() const { return from_seconds(sc_.duration_s + sc_.drain_s); }
    EventLoop& loop() noexcept { return loop_; }

    void run() { run_until(horizon()); }
    void run_until(Time t) { loop_.run_until(t, opts_.max_events); }

    // ------------------------------------------------------------- queries

    const Scenario& scenario() const noexcept { return sc_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t trace_hash() const noexcept { return trace_hash_.digest(); }
    const std::vector<metrics::Event>& events() const noexcept { return events_; }
    const metrics::ThroughputSeries& throughput() const noexcept { return throughput_; }
    const std::map<MessageId, Submitted>& submitted() const noexcept { return submitted_; }
    CheckpointStore& checkpoint_store() noexcept { return *store_; }
    const Registry& registry() const noexcept { return registry_; }

    Node& node(NodeId id) {
        auto it = nodes_.find(id);
        if (it == nodes_.end()) throw Error(Errc::UnknownNode, std::to_string(id.value));
        return *it->second;
    }
    const Node& node(NodeId id) const { return const_cast<Cluster*>(this)->node(id); }
    std::vector<NodeId> node_ids() const {
        std::vector<NodeId> out;
        for (const auto& [id, _] : nodes_) out.push_back(id);
        return out;
    }

    /// All latency samples over learners, optionally filtered.
    std::vector<Time> latencies(const std::function<bool(const Node&, const LatencySample&)>& keep = {}) const {
        std::vector<Time> out;
        for (const auto& [_, n] : nodes_)
            for (const auto& s : n->latencies)
                if (!keep || keep(*n, s)) out.push_back(s.latency);
        return out;
    }

    /// Deliveries per second at `node` in [from, to).
    double delivery_rate(NodeId id, Time from, Time to) const {
        const auto& n = node(id);
        const auto b = opts_.rate_bucket.count();
        std::uint64_t count = 0;
        for (auto it = n.rate_buckets.lower_bound(from.count() / b); it != n.rate_buckets.end() && it->first * b < to.count();
             ++it)
            count += it->second;
        return static_cast<double>(count) / to_seconds(to - from);
    }

    /// Per-bucket delivery rates (msgs/s) at `node` in [from, to).
    std::vector<double> delivery_rates(NodeId id, Time from, Time to) const {
        const auto& n = node(id);
        const auto b = opts_.rate_bucket.count();
        std::vector<double> out;
        for (auto k = from.count() / b; k * b < to.count(); ++k) {
            auto it = n.rate_buckets.find(k);
            out.push_back(it == n.rate_buckets.end() ? 0.0 : static_cast<double>(it->second) / to_seconds(opts_.rate_bucket));
        }
        return out;
    }

    std::vector<Time> client_latencies() const { return client_latencies_; }

    /// Time of the first event of `kind`, if any.
    std::optional<Time> event_time(std::string_view kind, std::string_view detail_prefix = {}) const {
        for (const auto& e : events_)
            if (e.kind == kind && e.detail.starts_with(detail_prefix)) return e.t;
        return std::nullopt;
    }

    // -------------------------------------------------------------- nodes

    struct Node {
        struct Env final : RingEnv {
            Node& n;
            GroupId g;
            Env(Node& node, GroupId group) : n(node), g(group) {}
            Time now() const override { return n.c.now() + n.skew; }
            void send(NodeId to, wire::Frame f) override { n.c.send_from(n, address_of(to), std::move(f)); }
            void deliver(GroupId group, std::uint64_t inst, const Value& v, std::uint64_t base) override {
                n.c.on_ring_delivery(n, group, inst, v, base);
            }
            void learned(GroupId group, std::uint64_t inst, const Value& v) override {
                n.c.on_learned(n, group, inst, v);
            }
            void log_reset(GroupId group, std::uint64_t inst) override { n.c.on_log_reset(n, group, inst); }
        };

        Node(Cluster& cluster, const NodeSpec& s) : c(cluster), spec(s) {}

        Cluster& c;
        const NodeSpec& spec;
        bool alive = true;
        bool ever_crashed = false;
        std::uint32_t incarnation = 0;
        Time skew{0};
        Time busy_until{0};
        TopologyView view;
        bool seen_self = false;
        std::map<GroupId, Roles> roles;  // roles this incarnation registers with
        std::map<GroupId, std::unique_ptr<Env>> envs;
        std::map<GroupId, std::unique_ptr<RingReplica>> rings;
        std::vector<GroupId> subscription;
        std::optional<MergeCursor> cursor;
        std::unique_ptr<kv::Store> app;

        bool recovering = false;
        bool new_protocol = true;
        RecoveryState recovery;
        std::optional<CacheBuffer> cache;
        bool installing = false;
        Time next_poll{0};
        Time recovery_started{0};
        std::optional<Time> recovery_live;
        std::uint64_t fetches_while_recovering = 0;

        std::uint64_t delivered = 0;
        std::vector<DeliveryRecord> trace;
        std::vector<LatencySample> latencies;
        std::map<std::int64_t, std::uint64_t> rate_buckets;
        std::set<MessageId> seen_ids;
        std::map<GroupId, std::uint64_t> last_ring_slot;
        std::optional<std::uint64_t> last_global_slot;

        bool is_learner_of(GroupId g) const {
            auto it = roles.find(g);
            return it != roles.end() && (it->second & kLearner);
        }
        bool live_replica() const { return alive && (!recovering || recovery.phase() == RecoveryPhase::Live); }
        std::uint64_t fetch_requests() const {
            std::uint64_t n = 0;
            for (const auto& [_, r] : rings) n += r->counters().fetch_requests_sent;
            return n;
        }
    };

    // ------------------------------------------------------------- faults

    void crash(NodeId id) {
        auto& n = node(id);
        if (!n.alive) return;
        n.alive = false;
        n.ever_crashed = true;
        ++n.incarnation;
        n.rings.clear();
        n.envs.clear();
        n.cursor.reset();
        n.app.reset();
        n.cache.reset();
        event("crash", "node=" + std::to_string(id.value));
    }

    void kill_region(const std::string& region) {
        event("kill_region", region);
        for (auto& [id, n] : nodes_)
            if (n->spec.region == region) crash(id);
        for (auto& [_, cl] : clients_)
            if (cl.spec.region == region) cl.alive = false;
    }

    void recover(NodeId id, bool new_protocol) {
        auto& n = node(id);
        if (n.alive) return;
        n.alive = true;
        n.busy_until = now();
        n.seen_self = false;
        n.recovering = true;
        n.new_protocol = new_protocol;
        n.recovery = RecoveryState{};
        n.installing = false;
        n.recovery_started = now();
        n.recovery_live.reset();
        n.fetches_while_recovering = 0;
        n.last_ring_slot.clear();
        n.last_global_slot.reset();
        // rejoin as a learner only
        n.roles.clear();
        for (auto g : n.subscription) n.roles[g] = kLearner;
        n.app = std::make_unique<kv::Store>();
        n.cursor.emplace(n.subscription, sc_.pacing.merge_m);
        n.cache.emplace(n.subscription, static_cast<std::size_t>(sc_.cache_mb * (1 << 20)));
        event("recover_start", "node=" + std::to_string(id.value) + " protocol=" + (new_protocol ? "new" : "old"));
        const auto inc = n.incarnation;
        start_timers(n);
        if (new_protocol) {
            make_rings(n);
            for (auto& [_, r] : n.rings) r->listen_from_next_decision();
            send_register(n);
            return;
        }
        // old protocol: fetch the latest checkpoint first, then pull the log tail
        std::optional<Checkpoint> cp;
        try {
            cp = store_->latest(n.subscription);
        } catch (const Error&) {
        }
        const auto transfer = cp ? transfer_time(cp->size_bytes()) : Time{0};
        loop_.after(transfer, [this, id, inc, cp = std::move(cp)] {
            auto& m = node(id);
            if (!m.alive || m.incarnation != inc) return;
            m.recovery.advance(RecoveryPhase::Replaying);
            if (cp) {
                m.app->restore(cp->state_blob);
                m.cursor->restore(cp->ring_slots);
            }
            make_rings(m);
            for (auto& [g, r] : m.rings) {
                const auto start = cp && cp->ring_instances.contains(g) ? cp->ring_instances.at(g) : 0;
                r->start_log_at(start);
            }
            event("recover_installed", "node=" + std::to_string(id.value) +
                                           (cp ? " checkpoint=" + std::to_string(cp->id) : std::string(" checkpoint=none")));
            send_register(m);
        });
    }

    // ------------------------------------------------------------- safety

    SafetyReport check_safety() const {
        SafetyReport rep;
        rep.single_value = single_value_violations_;
        rep.integrity = integrity_violations_;
        rep.agreement = agreement_violations_;
        for (const auto& d : violation_details_) rep.details.push_back(d);

        // agreement: correct learners share the same ring-slot prefix per group
        for (const auto& r : sc_.rings) {
            std::vector<const Node*> correct;
            for (const auto& [_, n] : nodes_)
                if (n->alive && !n->ever_crashed && n->is_learner_of(r.id) && n->cursor) correct.push_back(n.get());
            if (correct.size() < 2) continue;
            std::uint64_t floor = UINT64_MAX;
            for (auto* n : correct) floor = std::min(floor, n->cursor->consumed_slots(r.id));
            std::optional<std::vector<std::uint64_t>> reference;
            for (auto* n : correct) {
                std::vector<std::uint64_t> slots;
                for (const auto& d : n->trace)
                    if (d.group == r.id && d.ring_slot < floor) slots.push_back(d.ring_slot);
                if (!reference) {
                    reference = std::move(slots);
                } else if (*reference != slots) {
                    ++rep.agreement;
                    rep.details.push_back("agreement: group " + std::to_string(r.id.value) + " differs at node " +
                                          std::to_string(n->spec.id.value));
                }
            }
        }

        // order: the union of per-learner delivered-before edges is acyclic
        std::map<std::pair<GroupId, std::uint64_t>, std::size_t> index;
        auto key_of = [&](const DeliveryRecord& d) {
            auto [it, fresh] = index.try_emplace({d.group, d.ring_slot}, index.size());
            return it->second;
        };
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (const auto& [_, n] : nodes_) {
            std::optional<std::size_t> prev;
            for (const auto& d : n->trace) {
                auto k = key_of(d);
                if (prev && *prev != k) edges.emplace_back(*prev, k);
                prev = k;
            }
        }
        std::vector<std::vector<std::size_t>> adj(index.size());
        std::vector<std::size_t> indeg(index.size(), 0);
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        for (auto [a, b] : edges) {
            adj[a].push_back(b);
            ++indeg[b];
        }
        std::vector<std::size_t> ready;
        for (std::size_t i = 0; i < indeg.size(); ++i)
            if (indeg[i] == 0) ready.push_back(i);
        std::size_t visited = 0;
        while (!ready.empty()) {
            auto v = ready.back();
            ready.pop_back();
            ++visited;
            for (auto w : adj[v])
                if (--indeg[w] == 0) ready.push_back(w);
        }
        if (visited != index.size()) {
            rep.order = index.size() - visited;
            rep.details.push_back("order: " + std::to_string(rep.order) + " messages on delivered-before cycles");
        }
        return rep;
    }

    /// Messages multicast by clients that never crashed but not delivered
    /// by every correct subscriber.
    std::uint64_t undelivered() const {
        std::uint64_t missing = 0;
        for (const auto& [id, s] : submitted_) {
            auto cit = clients_.find(id.client);
            if (cit == clients_.end() || !cit->second.alive) continue;
            for (const auto& [_, n] : nodes_) {
                if (!n->alive || n->ever_crashed || !n->is_learner_of(s.group)) continue;
                if (!n->seen_ids.contains(id)) {
                    ++missing;
                    break;
                }
            }
        }
        return missing;
    }

    void event(std::string kind, std::string detail) {
        trace_hash_.update(kind);
        trace_hash_.update(detail);
        trace_hash_.update_int(now().count());
        events_.push_back({now(), std::move(kind), std::move(detail)});
    }

private:
    struct Client {
        ClientSpec spec;
        bool alive = true;
        std::uint64_t next_seq = 1;
        std::mt19937_64 rng;
        struct Pending {
            GroupId group;
            Payload payload;
            std::uint32_t attempts = 0;
        };
        std::map<std::uint64_t, Pending> outstanding;
        Time stop{0};
    };

    struct DelayWindow {
        std::optional<NodeId> node;
        std::string region;
        Time from{0}, to{0};
        Time extra{0};
    };

    // --------------------------------------------------------------- setup

    void build() {
        for (const auto& r : sc_.rings) {
            std::size_t acc = r.acceptors;
            if (acc == 0)
                for (const auto& n : sc_.nodes) {
                    auto it = n.rings.find(r.id);
                    if (it != n.rings.end() && (it->second & kAcceptor)) ++acc;
                }
            registry_.declare_ring(r.id, static_cast<std::uint8_t>(acc));
        }
        std::uniform_real_distribution<double> skew_dist(-sc_.pacing.skew_ms, sc_.pacing.skew_ms);
        for (const auto& spec : sc_.nodes) {
            auto n = std::make_unique<Node>(*this, spec);
            n->roles = spec.rings;
            n->skew = from_millis(spec.skew_ms ? *spec.skew_ms : (sc_.pacing.skew_ms > 0 ? skew_dist(rng_) : 0.0));
            for (const auto& [g, roles] : spec.rings)
                if (roles & kLearner) n->subscription.push_back(g);
            if (!n->subscription.empty()) n->cursor.emplace(n->subscription, sc_.pacing.merge_m);
            if (spec.kv) n->app = std::make_unique<kv::Store>();
            nodes_.emplace(spec.id, std::move(n));
        }
        // bootstrap: every initial node is registered before time starts
        for (const auto& spec : sc_.nodes) {
            std::vector<RingRole> rr;
            for (const auto& [g, roles] : spec.rings) rr.push_back({g, roles});
            registry_.register_node(spec.id, rr, "sim:" + std::to_string(spec.id.value));
            fd_->heartbeat(spec.id, Time{0});
        }
        for (auto& [_, n] : nodes_) {
            make_rings(*n);
            install_view(*n, registry_.view());
            start_timers(*n);
        }
        loop_.after(heartbeat_, [this] { registry_check(); });

        for (const auto& cs : sc_.clients) {
            Client cl;
            cl.spec = cs;
            cl.rng.seed(seed_ * 1000003ULL + cs.id);
            cl.stop = from_seconds(cs.stop_s < 0 ? sc_.duration_s : cs.stop_s);
            const auto id = cs.id;
            clients_.emplace(id, std::move(cl));
            loop_.at(from_seconds(cs.start_s), [this, id] { client_start(id); });
        }
        for (const auto& f : sc_.faults) {
            loop_.at(from_seconds(f.at_s), [this, f] { apply_fault(f); });
        }
    }

    /// Learner that acknowledges raw messages of `cs` in group `g`, judged
    /// from `view`: the configured one, else the first learner in the
    /// client's region, else the first learner.
    std::optional<NodeId> replier_for(const TopologyView& view, const ClientSpec& cs, GroupId g) const {
        if (cs.reply_from) return cs.reply_from;
        if (!view.has_group(g)) return std::nullopt;
        std::optional<NodeId> any;
        for (const auto& m : view.members(g)) {
            if (!(m.roles & kLearner)) continue;
            if (node(m.node).spec.region == cs.region) return m.node;
            if (!any) any = m.node;
        }
        return any;
    }

    RingConfig ring_config() const { return ring_config_for(sc_); }

    void make_rings(Node& n) {
        n.envs.clear();
        n.rings.clear();
        for (const auto& [g, _] : n.roles) {
            auto env = std::make_unique<Node::Env>(n, g);
            n.rings.emplace(g, std::make_unique<RingReplica>(n.spec.id, g, ring_config(), *env));
            n.envs.emplace(g, std::move(env));
        }
        if (n.view.epoch > 0)
            for (auto& [_, r] : n.rings) r->on_view(n.view);
    }

    void install_view(Node& n, const TopologyView& v) {
        if (v.epoch <= n.view.epoch && n.view.epoch != 0) return;
        n.view = v;
        bool present = false;
        for (const auto& [g, _] : n.roles)
            if (v.contains(g, n.spec.id)) present = true;
        for (auto& [_, r] : n.rings) r->on_view(v);
        if (present) {
            n.seen_self = true;
        } else if (n.seen_self) {
            // dropped after a (possibly wrong) suspicion: join again
            n.seen_self = false;
            event("rejoin", "node=" + std::to_string(n.spec.id.value));
            send_register(n);
        }
    }

    void start_timers(Node& n) {
        const auto inc = n.incarnation;
        const auto id = n.spec.id;
        const auto dt = from_millis(sc_.pacing.delta_t_ms);
        // ticks fall on multiples of delta_t of the node's own clock, so a
        // skewed coordinator also ticks early or late in virtual time
        const auto local = now() + n.skew;
        const auto first = Time{(local.count() / dt.count() + 1) * dt.count()} - n.skew;
        loop_.at(first + tick_jitter(), [this, id, inc, first] { tick(id, inc, first); });
        loop_.after(heartbeat_, [this, id, inc] { heartbeat(id, inc); });
        if (n.app && sc_.checkpoint_period_s > 0)
            loop_.after(from_seconds(sc_.checkpoint_period_s), [this, id, inc] { checkpoint_timer(id, inc); });
    }

    // ------------------------------------------------------------- timers

    Time tick_jitter() {
        if (sc_.pacing.jitter_ms <= 0) return Time{0};
        return from_millis(std::uniform_real_distribution<double>(0, sc_.pacing.jitter_ms)(rng_));
    }

    /// `nominal` is the undelayed fire time; jitter never accumulates.
    void tick(NodeId id, std::uint32_t inc, Time nominal) {
        auto& n = node(id);
        if (!n.alive || n.incarnation != inc) return;
        for (auto& [g, r] : n.rings) {
            if (r->is_coordinator()) r->pacing_tick();
            r->housekeeping();
        }
        if (n.recovering) recovery_step(n);
        const auto next = nominal + from_millis(sc_.pacing.delta_t_ms);
        loop_.at(next + tick_jitter(), [this, id, inc, next] { tick(id, inc, next); });
    }

    void heartbeat(NodeId id, std::uint32_t inc) {
        auto& n = node(id);
        if (!n.alive || n.incarnation != inc) return;
        wire::Frame f;
        f.type = wire::FrameType::Heartbeat;
        wire::Writer w;
        w.u16(id.value);
        f.blob = w.take();
        send_from(n, kRegistry, std::move(f));
        loop_.after(heartbeat_, [this, id, inc] { heartbeat(id, inc); });
    }

    void checkpoint_timer(NodeId id, std::uint32_t inc) {
        auto& n = node(id);
        if (!n.alive || n.incarnation != inc) return;
        if (n.live_replica() && n.app && n.cursor) {
            auto& next = checkpoint_ids_[id];
            Checkpoint cp = make_checkpoint(++next, *n.cursor, n.app->take_snapshot());
            try {
                store_->put(cp, id);
                event("checkpoint", "node=" + std::to_string(id.value) + " id=" + std::to_string(cp.id) +
                                        " slots=" + std::to_string(cp.total_slots()));
            } catch (const Error&) {
                --next;
                event("checkpoint_failed", "node=" + std::to_string(id.value) + " StoreUnavailable");
            }
        }
        loop_.after(from_seconds(sc_.checkpoint_period_s), [this, id, inc] { checkpoint_timer(id, inc); });
    }

    void send_register(Node& n) {
        Registration reg;
        reg.node = n.spec.id;
        reg.address = "sim:" + std::to_string(n.spec.id.value);
        for (const auto& [g, roles] : n.roles) reg.rings.push_back({g, roles});
        wire::Frame f;
        f.type = wire::FrameType::Register;
        f.blob = reg.encode();
        send_from(n, kRegistry, std::move(f));
    }

    // ----------------------------------------------------------- registry

    void registry_check() {
        bool changed = false;
        for (auto id : fd_->suspects(now())) {
            fd_->forget(id);
            if (registry_.remove_node(id)) {
                changed = true;
                event("suspect", "node=" + std::to_string(id.value));
            }
        }
        if (changed) broadcast_view();
        loop_.after(heartbeat_, [this] { registry_check(); });
    }

    void broadcast_view() {
        const auto& v = registry_.view();
        event("view", "epoch=" + std::to_string(v.epoch));
        const auto blob = v.encode();
        for (auto id : registry_.registered()) {
            wire::Frame f;
            f.type = wire::FrameType::View;
            f.blob = blob;
            transmit(kRegistry, address_of(id), std::move(f), now());
        }
    }

    void registry_receive(const wire::Frame& f) {
        if (f.type == wire::FrameType::Heartbeat) {
            wire::Reader r(f.blob);
            NodeId id{r.u16()};
            if (registry_.is_registered(id)) fd_->heartbeat(id, now());
        } else if (f.type == wire::FrameType::Register) {
            auto reg = Registration::decode(f.blob);
            if (registry_.is_registered(reg.node)) return;  // DuplicateNode
            registry_.register_node(reg.node, reg.rings, reg.address);
            fd_->heartbeat(reg.node, now());
            event("register", "node=" + std::to_string(reg.node.value));
            broadcast_view();
        }
    }

    // ------------------------------------------------------------ network

    static bool costed(wire::FrameType t) {
        using wire::FrameType;
        return t != FrameType::View && t != FrameType::Heartbeat && t != FrameType::Register;
    }

    Time frame_cost(const Node& n, std::size_t bytes) const {
        return Time{static_cast<std::int64_t>(n.spec.frame_us * 1e3 + n.spec.byte_ns * static_cast<double>(bytes))};
    }
    static Time apply_cost(const Node& n) { return Time{static_cast<std::int64_t>(n.spec.apply_us * 1e3)}; }

    /// Occupies the node's processor for `cost`; returns when it is done.
    Time charge(Node& n, Time cost) {
        n.busy_until = std::max(n.busy_until, now()) + cost;
        return n.busy_until;
    }

    void send_from(Node& n, Address to, wire::Frame f) {
        if (!n.alive) return;
        Time depart = now();
        if (costed(f.type)) depart = charge(n, frame_cost(n, wire::encoded_size(f)));
        transmit(address_of(n.spec.id), to, std::move(f), depart);
    }

    const std::string& region_of(Address a) const {
        if (a == kRegistry) return registry_region_;
        if (a >= kClientBase) return clients_.at(a - kClientBase).spec.region;
        return node(NodeId{static_cast<std::uint16_t>(a)}).spec.region;
    }

    const LinkRule* rule_for(Address a, Address b) const {
        const LinkRule* best = nullptr;
        int best_rank = -1;
        const auto& ra = region_of(a);
        const auto& rb = region_of(b);
        const bool nodes = a != kRegistry && b != kRegistry && a < kClientBase && b < kClientBase;
        for (const auto& l : sc_.links) {
            int rank = -1;
            switch (l.scope) {
                case LinkRule::Scope::Node:
                    if (nodes && ((l.a == std::to_string(a) && l.b == std::to_string(b)) ||
                                  (l.a == std::to_string(b) && l.b == std::to_string(a))))
                        rank = 3;
                    break;
                case LinkRule::Scope::Region:
                    if ((l.a == ra && l.b == rb) || (l.a == rb && l.b == ra)) rank = 2;
                    break;
                case LinkRule::Scope::Intra:
                    if (ra == rb) rank = 1;
                    break;
                case LinkRule::Scope::Default:
                    rank = 0;
                    break;
            }
            if (rank > best_rank) {
                best_rank = rank;
                best = &l;
            }
        }
        return best;
    }

    Time extra_delay(Address a, Address b) const {
        Time extra{0};
        for (const auto& w : delays_) {
            if (now() < w.from || now() >= w.to) continue;
            bool hit = false;
            for (auto x : {a, b}) {
                if (w.node && x == address_of(*w.node)) hit = true;
                if (!w.region.empty() && region_of(x) == w.region) hit = true;
            }
            if (hit) extra += w.extra;
        }
        return extra;
    }

    /// Reliable FIFO link: latency sample plus retransmission delays for
    /// dropped attempts; never reorders frames between the same endpoints.
    void transmit(Address from, Address to, wire::Frame f, Time depart) {
        Time lat{0};
        if (from != to) {
            const auto* rule = rule_for(from, to);
            const auto dist = rule ? rule->latency : LatencyDist::constant(0.1);
            lat = dist.sample(rng_) + extra_delay(from, to);
            if (rule && rule->drop > 0) {
                std::uniform_real_distribution<double> u(0.0, 1.0);
                const Time rto = 2 * lat + std::chrono::milliseconds(1);
                while (u(rng_) < rule->drop) lat += rto;
            }
        }
        auto& last = link_clock_[{from, to}];
        const auto arrival = std::max(depart + lat, last);
        last = arrival;
        std::uint32_t inc = 0;
        if (to != kRegistry && to < kClientBase) inc = node(NodeId{static_cast<std::uint16_t>(to)}).incarnation;
        loop_.at(arrival, [this, from, to, inc, f = std::move(f)]() mutable { arrive(from, to, inc, std::move(f)); });
    }

    void arrive(Address from, Address to, std::uint32_t inc, wire::Frame f) {
        if (to == kRegistry) {
            registry_receive(f);
            return;
        }
        if (to >= kClientBase) {
            client_receive(to - kClientBase, f);
            return;
        }
        auto& n = node(NodeId{static_cast<std::uint16_t>(to)});
        if (!n.alive || n.incarnation != inc) return;
        if (!costed(f.type)) {
            node_receive(n, from, f);
            return;
        }
        const auto done = charge(n, frame_cost(n, wire::encoded_size(f)));
        const auto id = n.spec.id;
        loop_.at(done, [this, id, from, inc, f = std::move(f)] {
            auto& m = node(id);
            if (!m.alive || m.incarnation != inc) return;
            node_receive(m, from, f);
        });
    }

    void node_receive(Node& n, Address from, const wire::Frame& f) {
        using wire::FrameType;
        if (f.type == FrameType::View) {
            install_view(n, TopologyView::decode(f.blob));
            return;
        }
        auto it = n.rings.find(f.group);
        if (it == n.rings.end()) return;
        const NodeId sender{static_cast<std::uint16_t>(from < kClientBase ? from : 0)};
        it->second->on_frame(sender, f);
    }

    // ------------------------------------------------------- learner path

    void on_learned(Node& n, GroupId g, std::uint64_t inst, const Value& v) {
        const auto d = value_digest(v);
        auto [it, fresh] = decided_.try_emplace({g, inst}, d);
        if (!fresh && it->second != d) {
            ++single_value_violations_;
            violation_details_.push_back("single-value: group " + std::to_string(g.value) + " instance " +
                                         std::to_string(inst) + " at node " + std::to_string(n.spec.id.value));
        }
    }

    void on_log_reset(Node& n, GroupId g, std::uint64_t inst) {
        event("log_reset", "node=" + std::to_string(n.spec.id.value) + " group=" + std::to_string(g.value) +
                               " instance=" + std::to_string(inst));
        if (n.cache) n.cache->restart_ring(g);
    }

    void on_ring_delivery(Node& n, GroupId g, std::uint64_t inst, const Value& v, std::uint64_t base) {
        if (!n.is_learner_of(g) || !n.cursor) return;
        if (n.recovering && n.new_protocol && n.recovery.phase() < RecoveryPhase::Replaying) {
            n.cache->append(g, inst, v, base);
            return;
        }
        if (n.recovering && n.new_protocol && n.recovery.phase() == RecoveryPhase::Replaying) {
            // still transferring the checkpoint; keep caching
            n.cache->append(g, inst, v, base);
            return;
        }
        try {
            n.cursor->enqueue_decision_at(g, inst, v, base);
        } catch (const Error& e) {
            ++integrity_violations_;
            violation_details_.push_back("integrity: node " + std::to_string(n.spec.id.value) + " " + e.what());
            return;
        }
        drain_cursor(n);
    }

    void drain_cursor(Node& n) {
        n.cursor->try_deliver([&](Delivery&& d) { on_delivery(n, d); });
    }

    void on_delivery(Node& n, const Delivery& d) {
        ++n.delivered;
        Fnv1a ph;
        ph.update(d.payload.data(), d.payload.size());
        const auto digest = ph.digest();
        n.seen_ids.insert(d.id);

        // integrity: ring slots and global slots strictly increase, payload was multicast
        auto [ls, fresh] = n.last_ring_slot.try_emplace(d.group, d.ring_slot);
        if (!fresh) {
            if (d.ring_slot <= ls->second) integrity_violation(n, "ring slot repeated");
            ls->second = d.ring_slot;
        }
        if (n.last_global_slot && d.global_slot <= *n.last_global_slot) integrity_violation(n, "global slot repeated");
        n.last_global_slot = d.global_slot;
        auto sit = submitted_.find(d.id);
        if (sit == submitted_.end() || sit->second.digest != digest || sit->second.group != d.group)
            integrity_violation(n, "delivered a message that was not multicast");

        auto [slot, first] = slot_contents_.try_emplace({d.group, d.ring_slot}, std::make_pair(d.id, digest));
        if (!first && slot->second != std::make_pair(d.id, digest)) {
            ++agreement_violations_;
            violation_details_.push_back("agreement: group " + std::to_string(d.group.value) + " slot " +
                                         std::to_string(d.ring_slot) + " differs at node " +
                                         std::to_string(n.spec.id.value));
        }

        trace_hash_.update_int(n.spec.id.value);
        trace_hash_.update_int(d.global_slot);
        trace_hash_.update_int(d.group.value);
        trace_hash_.update_int(d.ring_slot);
        trace_hash_.update_int(d.id.client);
        trace_hash_.update_int(d.id.seq);
        trace_hash_.update_int(now().count());
        if (opts_.keep_trace)
            n.trace.push_back({now(), d.group, d.ring_instance, d.ring_slot, d.global_slot, d.id, digest});
        ++n.rate_buckets[now().count() / opts_.rate_bucket.count()];
        if (sit != submitted_.end()) {
            n.latencies.push_back({now(), d.group, now() - sit->second.first_sent, d.id});
            throughput_.add(now(), d.group, d.payload.size(), 1.0 / learner_count(d.group));
        }

        if (n.app) {
            auto reply = n.app->apply(d);
            charge(n, apply_cost(n));
            if (n.live_replica()) send_reply(n, d.id, std::move(reply));
            return;
        }
        auto cit = clients_.find(d.id.client);
        if (cit != clients_.end() && cit->second.spec.workload == Workload::Raw &&
            replier_for(n.view, cit->second.spec, d.group) == n.spec.id)
            send_reply(n, d.id, {});
    }

    void integrity_violation(Node& n, const std::string& what) {
        ++integrity_violations_;
        violation_details_.push_back("integrity: node " + std::to_string(n.spec.id.value) + " " + what);
    }

    double learner_count(GroupId g) {
        auto it = learner_counts_.find(g);
        if (it != learner_counts_.end()) return it->second;
        double c = 0;
        for (const auto& n : sc_.nodes) {
            auto r = n.rings.find(g);
            if (r != n.rings.end() && (r->second & kLearner)) ++c;
        }
        return learner_counts_[g] = std::max(1.0, c);
    }

    void send_reply(Node& n, MessageId id, Payload reply) {
        if (!clients_.contains(id.client)) return;
        wire::Frame f;
        f.type = wire::FrameType::ClientReply;
        f.value = Value::app({Submission{id, std::move(reply)}});
        send_from(n, client_address(id.client), std::move(f));
    }

    // ----------------------------------------------------------- recovery

    Time transfer_time(std::size_t bytes) const {
        return from_seconds(static_cast<double>(bytes) * 8.0 / (sc_.store_mbps * 1e6));
    }

    void recovery_step(Node& n) {
        if (!n.recovering || n.recovery.phase() == RecoveryPhase::Live) return;
        n.fetches_while_recovering = n.fetch_requests();
        if (!n.new_protocol) {
            if (n.recovery.phase() != RecoveryPhase::Replaying || n.rings.empty()) return;
            for (const auto& [_, r] : n.rings)
                if (r->log().first_after_gap() || r->log().contiguous_end() <= r->log().start()) return;
            go_live(n);
            return;
        }
        if (n.recovery.phase() == RecoveryPhase::Caching && n.cache->started()) {
            n.recovery.advance(RecoveryPhase::FetchingCheckpoint);
            event("recover_cached", "node=" + std::to_string(n.spec.id.value));
        }
        if (n.recovery.phase() != RecoveryPhase::FetchingCheckpoint || n.installing || now() < n.next_poll) return;
        n.next_poll = now() + std::chrono::milliseconds(100);
        std::optional<Checkpoint> cp;
        try {
            cp = store_->latest(n.subscription);
        } catch (const Error&) {
            return;
        }
        if (!cp || !is_valid_checkpoint(*cp, *n.cache)) return;
        n.installing = true;
        const auto id = n.spec.id;
        const auto inc = n.incarnation;
        loop_.after(transfer_time(cp->size_bytes()), [this, id, inc, cp = std::move(*cp)] {
            auto& m = node(id);
            if (!m.alive || m.incarnation != inc) return;
            m.installing = false;
            if (!is_valid_checkpoint(cp, *m.cache)) return;  // cache moved on; wait for a newer one
            m.recovery.advance(RecoveryPhase::Replaying);
            std::uint64_t replayed = 0;
            install_and_replay(cp, *m.cache, *m.app, *m.cursor, [&](const Delivery& d, const Payload&) {
                ++replayed;
                record_replayed(m, d);
            });
            charge(m, apply_cost(m) * static_cast<std::int64_t>(replayed));
            m.cache.reset();
            event("recover_installed", "node=" + std::to_string(id.value) + " checkpoint=" + std::to_string(cp.id) +
                                           " replayed=" + std::to_string(replayed));
            go_live(m);
        });
    }

    /// Deliveries replayed from the cache: recorded for tracing only.
    void record_replayed(Node& n, const Delivery& d) {
        ++n.delivered;
        n.seen_ids.insert(d.id);
        n.last_ring_slot[d.group] = d.ring_slot;
        n.last_global_slot = d.global_slot;
    }

    void go_live(Node& n) {
        n.recovery.advance(RecoveryPhase::Live);
        n.recovery_live = now();
        n.fetches_while_recovering = n.fetch_requests();
        for (auto& [_, r] : n.rings) r->set_fetch_enabled(true);
        event("recover_live", "node=" + std::to_string(n.spec.id.value) +
                                  " fetches=" + std::to_string(n.fetches_while_recovering));
    }

    // ------------------------------------------------------------ clients

    void client_start(std::uint32_t id) {
        auto& cl = clients_.at(id);
        if (!cl.alive) return;
        if (cl.spec.open_loop) {
            open_loop_next(id);
        } else {
            for (std::uint32_t t = 0; t < cl.spec.threads; ++t) client_submit(id);
        }
    }

    void open_loop_next(std::uint32_t id) {
        auto& cl = clients_.at(id);
        if (!cl.alive || now() >= cl.stop) return;
        client_submit(id);
        loop_.after(from_seconds(1.0 / cl.spec.rate), [this, id] { open_loop_next(id); });
    }

    GroupId pick_group(Client& cl) {
        if (cl.spec.groups.size() == 1) return cl.spec.groups[0].first;
        double total = 0;
        for (const auto& [_, w] : cl.spec.groups) total += w;
        double x = std::uniform_real_distribution<double>(0, total)(cl.rng);
        for (const auto& [g, w] : cl.spec.groups) {
            if (x < w) return g;
            x -= w;
        }
        return cl.spec.groups.back().first;
    }

    Payload make_payload(Client& cl, std::uint64_t seq) { return mrp::make_payload(cl.spec, seq, cl.rng); }

    void client_submit(std::uint32_t id) {
        auto& cl = clients_.at(id);
        if (!cl.alive || now() >= cl.stop) return;
        const auto seq = cl.next_seq++;
        const auto g = pick_group(cl);
        auto payload = make_payload(cl, seq);
        Fnv1a h;
        h.update(payload.data(), payload.size());
        submitted_[MessageId{id, seq}] = Submitted{now(), g, h.digest(), false};
        cl.outstanding[seq] = Client::Pending{g, std::move(payload), 0};
        client_send(id, seq);
    }

    void client_send(std::uint32_t id, std::uint64_t seq) {
        auto& cl = clients_.at(id);
        auto it = cl.outstanding.find(seq);
        if (!cl.alive || it == cl.outstanding.end()) return;
        auto& p = it->second;
        auto contact = pick_contact(cl, p.group, p.attempts);
        if (contact) {
            wire::Frame f;
            f.type = wire::FrameType::ClientSubmit;
            f.group = p.group;
            f.value = Value::app({Submission{MessageId{id, seq}, p.payload}});
            transmit(client_address(id), address_of(*contact), std::move(f), now());
        }
        ++p.attempts;
        loop_.after(from_millis(cl.spec.timeout_ms), [this, id, seq] { client_send(id, seq); });
    }

    std::optional<NodeId> pick_contact(const Client& cl, GroupId g, std::uint32_t attempt) const {
        const auto& v = registry_.view();
        if (!v.has_group(g) || v.members(g).empty()) return std::nullopt;
        const auto& ms = v.members(g);
        if (attempt == 0) {
            if (cl.spec.contact && v.contains(g, *cl.spec.contact)) return cl.spec.contact;
            for (const auto& m : ms)
                if (node(m.node).spec.region == cl.spec.region) return m.node;
        }
        return ms[attempt % ms.size()].node;
    }

    void client_receive(std::uint32_t id, const wire::Frame& f) {
        if (f.type != wire::FrameType::ClientReply || !f.value.is_app()) return;
        auto& cl = clients_.at(id);
        if (!cl.alive) return;
        for (const auto& s : f.value.batch()) {
            auto it = cl.outstanding.find(s.id.seq);
            if (it == cl.outstanding.end()) continue;
            cl.outstanding.erase(it);
            auto& sub = submitted_.at(s.id);
            sub.completed = true;
            client_latencies_.push_back(now() - sub.first_sent);
            if (!cl.spec.open_loop) client_submit(id);
        }
    }

    // ------------------------------------------------------------- faults

    void apply_fault(const FaultSpec& f) {
        switch (f.kind) {
            case FaultKind::Crash: crash(*f.node); break;
            case FaultKind::Recover: recover(*f.node, f.new_protocol); break;
            case FaultKind::KillRegion: kill_region(f.region); break;
            case FaultKind::Delay:
                delays_.push_back({f.node, f.region, now(), now() + from_seconds(f.for_s), from_millis(f.extra_ms)});
                event("delay", (f.node ? "node=" + std::to_string(f.node->value) : "region=" + f.region) +
                                   " extra_ms=" + std::to_string(f.extra_ms));
                break;
            case FaultKind::StoreDown:
                store_->set_available(false);
                event("store_down", "");
                break;
            case FaultKind::StoreUp:
                store_->set_available(true);
                event("store_up", "");
                break;
        }
    }

    Scenario sc_;
    std::uint64_t seed_;
    ClusterOptions opts_;
    std::mt19937_64 rng_;
    EventLoop loop_;
    std::map<NodeId, std::unique_ptr<Node>> nodes_;
    std::map<std::uint32_t, Client> clients_;
    Registry registry_;
    std::optional<FailureDetector> fd_;
    std::string registry_region_;
    Time suspicion_{0};
    Time heartbeat_{0};
    std::map<std::pair<Address, Address>, Time> link_clock_;
    std::vector<DelayWindow> delays_;
    std::unique_ptr<CheckpointStore> store_;
    std::map<NodeId, std::uint64_t> checkpoint_ids_;

    std::map<MessageId, Submitted> submitted_;
    std::map<std::pair<GroupId, std::uint64_t>, std::uint64_t> decided_;
    std::map<std::pair<GroupId, std::uint64_t>, std::pair<MessageId, std::uint64_t>> slot_contents_;
    std::map<GroupId, double> learner_counts_;
    std::uint64_t single_value_violations_ = 0;
    std::uint64_t integrity_violations_ = 0;
    std::uint64_t agreement_violations_ = 0;
    std::vector<std::string> violation_details_;

    std::vector<metrics::Event> events_;
    metrics::ThroughputSeries throughput_;
    std::vector<Time> client_latencies_;
    Fnv1a trace_hash_;
};

}  // namespace mrp::sim
