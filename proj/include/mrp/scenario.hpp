#pragma once

#include "mrp/coordinator.hpp"
#include "mrp/core.hpp"
#include "mrp/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mrp {

/// One-way latency distribution, in milliseconds.
struct LatencyDist {
    enum class Kind { Const, Uniform, Normal };
    Kind kind = Kind::Const;
    double a = 0.0;  // const value, uniform low, normal mean
    double b = 0.0;  // uniform high, normal sigma

    static LatencyDist constant(double ms) { return {Kind::Const, ms, 0}; }

    /// "const:<ms>", "uniform:<lo>:<hi>" or "normal:<mean>:<sigma>".
    static LatencyDist parse(std::string_view s) {
        auto parts = split(s, ':');
        auto num = [&](std::size_t i) {
            if (i >= parts.size()) throw Error(Errc::InvalidScenario, "latency '" + std::string(s) + "'");
            return std::stod(parts[i]);
        };
        LatencyDist d;
        if (parts[0] == "const") {
            d = constant(num(1));
        } else if (parts[0] == "uniform") {
            d = {Kind::Uniform, num(1), num(2)};
            if (d.b < d.a) throw Error(Errc::InvalidScenario, "uniform bounds reversed");
        } else if (parts[0] == "normal") {
            d = {Kind::Normal, num(1), num(2)};
        } else {
            throw Error(Errc::InvalidScenario, "latency '" + std::string(s) + "'");
        }
        if (d.a < 0 || d.b < 0) throw Error(Errc::InvalidScenario, "negative latency");
        return d;
    }

    std::string str() const {
        std::ostringstream o;
        switch (kind) {
            case Kind::Const: o << "const:" << a; break;
            case Kind::Uniform: o << "uniform:" << a << ':' << b; break;
            case Kind::Normal: o << "normal:" << a << ':' << b; break;
        }
        return o.str();
    }

    double mean_ms() const { return kind == Kind::Uniform ? (a + b) / 2 : a; }

    template <typename Rng>
    Time sample(Rng& rng) const {
        double ms = a;
        if (kind == Kind::Uniform) {
            ms = std::uniform_real_distribution<double>(a, b)(rng);
        } else if (kind == Kind::Normal) {
            ms = std::max(0.0, std::normal_distribution<double>(a, b)(rng));
        }
        return from_millis(ms);
    }

    static std::vector<std::string> split(std::string_view s, char sep) {
        std::vector<std::string> out;
        std::size_t pos = 0;
        while (true) {
            auto end = s.find(sep, pos);
            out.emplace_back(s.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
            if (end == std::string_view::npos) break;
            pos = end + 1;
        }
        return out;
    }
};

struct LinkRule {
    enum class Scope { Default, Intra, Region, Node };
    Scope scope = Scope::Default;
    std::string a, b;  // regions or node ids, depending on scope
    LatencyDist latency;
    double drop = 0.0;
};

struct NodeSpec {
    NodeId id;
    std::string region = "local";
    std::map<GroupId, Roles> rings;
    std::optional<double> skew_ms;
    double frame_us = 0.0;  // processing cost per frame sent or received
    double byte_ns = 0.0;   // processing cost per byte sent or received
    double apply_us = 0.0;  // application cost per delivered command
    bool kv = false;        // hosts a replicated key-value store
};

struct RingSpec {
    GroupId id;
    std::uint8_t acceptors = 0;
};

enum class Workload { Raw, Kv };

struct ClientSpec {
    std::uint32_t id = 0;
    std::string region = "local";
    std::vector<std::pair<GroupId, double>> groups;  // weighted mix
    std::uint32_t threads = 1;
    std::uint32_t size = 200;
    bool open_loop = false;
    double rate = 0.0;  // open loop, messages per second across all threads
    double start_s = 0.0;
    double stop_s = -1.0;  // < 0: scenario duration
    std::optional<NodeId> contact;
    std::optional<NodeId> reply_from;
    double timeout_ms = 2000.0;
    Workload workload = Workload::Raw;
    std::uint32_t kv_keys = 1000;
    double kv_insert = 0.1;  // share of inserts in the kv mix; the rest are updates and reads
    double kv_read = 0.1;
};

enum class FaultKind { Crash, Recover, KillRegion, Delay, StoreDown, StoreUp };

struct FaultSpec {
    FaultKind kind = FaultKind::Crash;
    double at_s = 0.0;
    std::optional<NodeId> node;
    std::string region;
    double for_s = 0.0;
    double extra_ms = 0.0;
    bool new_protocol = true;
};

struct PacingSpec {
    double lambda = 1000.0;
    double delta_t_ms = 5.0;
    Compensation compensation{CompensationMode::Auto, {}};
    double skew_ms = 0.0;    // per-node skew drawn from [-skew, +skew]
    double jitter_ms = 0.0;  // each pacing tick fires late by up to this much
    std::uint64_t merge_m = 1;
    bool enabled = true;
};

struct Scenario {
    std::string name = "unnamed";
    double duration_s = 10.0;
    double drain_s = 1.0;
    double warmup_s = 1.0;
    std::uint64_t seed = 1;
    std::string registry_region;
    double heartbeat_ms = 50.0;
    double suspicion_ms = 200.0;
    double checkpoint_period_s = 30.0;
    double store_mbps = 200.0;
    double cache_mb = 256.0;
    double retry_ms = 1000.0;
    std::size_t batch_bytes = 32768;
    std::size_t window = 1000;
    std::uint64_t retain = 100000;

    std::vector<RingSpec> rings;
    std::vector<NodeSpec> nodes;
    std::vector<LinkRule> links;
    std::vector<ClientSpec> clients;
    std::vector<FaultSpec> faults;
    PacingSpec pacing;

    const NodeSpec* node(NodeId id) const {
        for (const auto& n : nodes)
            if (n.id == id) return &n;
        return nullptr;
    }
    bool has_ring(GroupId g) const {
        return std::any_of(rings.begin(), rings.end(), [&](const RingSpec& r) { return r.id == g; });
    }
    std::set<std::string> regions() const {
        std::set<std::string> out;
        for (const auto& n : nodes) out.insert(n.region);
        for (const auto& c : clients) out.insert(c.region);
        return out;
    }

    /// Throws InvalidScenario when something references an undeclared node,
    /// group or region.
    void validate() const {
        auto fail = [](const std::string& m) { throw Error(Errc::InvalidScenario, m); };
        if (rings.empty()) fail("no rings");
        if (duration_s <= 0) fail("duration must be positive");
        std::set<GroupId> gs;
        for (const auto& r : rings)
            if (!gs.insert(r.id).second) fail("ring " + std::to_string(r.id.value) + " declared twice");
        std::set<NodeId> ids;
        for (const auto& n : nodes) {
            if (n.id.value == 0) fail("node id 0 is reserved");
            if (!ids.insert(n.id).second) fail("node " + std::to_string(n.id.value) + " declared twice");
            if (n.rings.empty()) fail("node " + std::to_string(n.id.value) + " joins no ring");
            for (const auto& [g, roles] : n.rings) {
                if (!gs.contains(g)) fail("node " + std::to_string(n.id.value) + " references undeclared group " +
                                          std::to_string(g.value));
                if (roles == 0) fail("node " + std::to_string(n.id.value) + " has no role in ring");
            }
            if (n.kv && std::none_of(n.rings.begin(), n.rings.end(), [](auto& p) { return p.second & kLearner; }))
                fail("kv node " + std::to_string(n.id.value) + " is not a learner");
        }
        for (const auto& r : rings) {
            std::size_t acc = 0;
            for (const auto& n : nodes) {
                auto it = n.rings.find(r.id);
                if (it != n.rings.end() && (it->second & kAcceptor)) ++acc;
            }
            if (acc == 0) fail("ring " + std::to_string(r.id.value) + " has no acceptor");
        }
        const auto regs = regions();
        if (!registry_region.empty() && !regs.contains(registry_region))
            fail("registry region '" + registry_region + "' is not used by any node");
        for (const auto& l : links) {
            if (l.drop < 0 || l.drop >= 1) fail("drop probability out of range");
            if (l.scope == LinkRule::Scope::Region && (!regs.contains(l.a) || !regs.contains(l.b)))
                fail("link references undeclared region");
            if (l.scope == LinkRule::Scope::Node &&
                (!ids.contains(NodeId{static_cast<std::uint16_t>(std::stoi(l.a))}) ||
                 !ids.contains(NodeId{static_cast<std::uint16_t>(std::stoi(l.b))})))
                fail("link references undeclared node");
        }
        std::set<std::uint32_t> cids;
        for (const auto& c : clients) {
            if (!cids.insert(c.id).second) fail("client " + std::to_string(c.id) + " declared twice");
            if (c.groups.empty()) fail("client " + std::to_string(c.id) + " has no groups");
            for (const auto& [g, w] : c.groups) {
                if (!gs.contains(g)) fail("client references undeclared group " + std::to_string(g.value));
                if (w <= 0) fail("client group weight must be positive");
            }
            if (c.contact && !ids.contains(*c.contact)) fail("client contact is not a declared node");
            if (c.reply_from && !ids.contains(*c.reply_from)) fail("client reply_from is not a declared node");
            if (c.open_loop && c.rate <= 0) fail("open-loop client needs rate");
            if (c.size == 0 || c.size > kDefaultMaxMessageSize) fail("client payload size out of range");
            if (c.threads == 0) fail("client needs at least one thread");
        }
        for (const auto& f : faults) {
            if (f.node && !ids.contains(*f.node)) fail("fault references undeclared node");
            if (f.kind == FaultKind::KillRegion && !regs.contains(f.region))
                fail("fault references undeclared region '" + f.region + "'");
            if ((f.kind == FaultKind::Crash || f.kind == FaultKind::Recover) && !f.node)
                fail("crash/recover needs node=");
            if (f.kind == FaultKind::Recover && !node(*f.node)->kv) fail("only kv replicas can recover");
            if (f.kind == FaultKind::Delay && !f.node && f.region.empty()) fail("delay needs node= or region=");
        }
        if (pacing.lambda <= 0 || pacing.delta_t_ms <= 0) fail("pacing parameters must be positive");
        if (pacing.jitter_ms < 0 || pacing.jitter_ms >= pacing.delta_t_ms) fail("clock.jitter_ms must be in [0, delta_t)");
        if (pacing.merge_m == 0) fail("merge.m must be positive");
    }
};

namespace scenario_detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> words(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

inline std::pair<std::string, std::string> split_pair(const std::string& w, int line) {
    auto eq = w.find('=');
    if (eq == std::string::npos)
        throw Error(Errc::InvalidScenario, "line " + std::to_string(line) + ": expected key=value, got '" + w + "'");
    return {w.substr(0, eq), w.substr(eq + 1)};
}

inline double num(const std::string& v, int line) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw Error(Errc::InvalidScenario, "line " + std::to_string(line) + ": bad number '" + v + "'");
    }
}

inline std::uint16_t id16(const std::string& v, int line) {
    auto d = num(v, line);
    if (d < 0 || d > 65535 || d != std::floor(d))
        throw Error(Errc::InvalidScenario, "line " + std::to_string(line) + ": bad id '" + v + "'");
    return static_cast<std::uint16_t>(d);
}

}  // namespace scenario_detail

/// Parses the scenario text format: top-level key=value lines followed by
/// [rings] [nodes] [links] [clients] [faults] [pacing] sections. TCP
/// deployments pass `validate = false` since they declare no nodes.
inline Scenario parse_scenario(std::string_view text, bool validate = true) {
    using namespace scenario_detail;
    Scenario sc;
    std::string section;
    NodeSpec node_defaults;
    std::istringstream in{std::string(text)};
    int lineno = 0;
    auto fail = [&](const std::string& m) -> void {
        throw Error(Errc::InvalidScenario, "line " + std::to_string(lineno) + ": " + m);
    };
    for (std::string raw; std::getline(in, raw);) {
        ++lineno;
        auto hash = raw.find('#');
        auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header");
            section = line.substr(1, line.size() - 2);
            static const std::set<std::string> known{"rings", "nodes", "links", "clients", "faults", "pacing"};
            if (!known.contains(section)) fail("unknown section [" + section + "]");
            continue;
        }
        auto w = words(line);
        if (section.empty() || section == "pacing") {
            for (const auto& word : w) {
                auto [k, v] = split_pair(word, lineno);
                if (section.empty()) {
                    if (k == "name") sc.name = v;
                    else if (k == "duration_s") sc.duration_s = num(v, lineno);
                    else if (k == "drain_s") sc.drain_s = num(v, lineno);
                    else if (k == "warmup_s") sc.warmup_s = num(v, lineno);
                    else if (k == "seed") sc.seed = static_cast<std::uint64_t>(num(v, lineno));
                    else if (k == "registry_region") sc.registry_region = v;
                    else if (k == "heartbeat_ms") sc.heartbeat_ms = num(v, lineno);
                    else if (k == "suspicion_ms") sc.suspicion_ms = num(v, lineno);
                    else if (k == "checkpoint_period_s") sc.checkpoint_period_s = num(v, lineno);
                    else if (k == "store_mbps") sc.store_mbps = num(v, lineno);
                    else if (k == "cache_mb") sc.cache_mb = num(v, lineno);
                    else if (k == "retry_ms") sc.retry_ms = num(v, lineno);
                    else if (k == "batch_bytes") sc.batch_bytes = static_cast<std::size_t>(num(v, lineno));
                    else if (k == "window") sc.window = static_cast<std::size_t>(num(v, lineno));
                    else if (k == "retain") sc.retain = static_cast<std::uint64_t>(num(v, lineno));
                    else fail("unknown key '" + k + "'");
                } else {
                    if (k == "ring.lambda") sc.pacing.lambda = num(v, lineno);
                    else if (k == "ring.delta_t_ms") sc.pacing.delta_t_ms = num(v, lineno);
                    else if (k == "ring.compensation") {
                        try {
                            sc.pacing.compensation = Compensation::parse(v);
                        } catch (const std::invalid_argument& e) {
                            fail(e.what());
                        }
                    } else if (k == "ring.pacing") sc.pacing.enabled = v == "on";
                    else if (k == "clock.skew_ms") sc.pacing.skew_ms = num(v, lineno);
                    else if (k == "clock.jitter_ms") sc.pacing.jitter_ms = num(v, lineno);
                    else if (k == "merge.m") sc.pacing.merge_m = static_cast<std::uint64_t>(num(v, lineno));
                    else fail("unknown pacing key '" + k + "'");
                }
            }
        } else if (section == "rings") {
            // <group> acceptors=<n>
            RingSpec r;
            r.id.value = id16(w[0], lineno);
            for (std::size_t i = 1; i < w.size(); ++i) {
                auto [k, v] = split_pair(w[i], lineno);
                if (k == "acceptors") r.acceptors = static_cast<std::uint8_t>(num(v, lineno));
                else fail("unknown ring key '" + k + "'");
            }
            sc.rings.push_back(r);
        } else if (section == "nodes") {
            // defaults k=v... | <id> region=R ring:<g>=<roles> [k=v...]
            const bool defaults = w[0] == "defaults";
            NodeSpec n = node_defaults;
            if (!defaults) n.id.value = id16(w[0], lineno);
            for (std::size_t i = 1; i < w.size(); ++i) {
                auto [k, v] = split_pair(w[i], lineno);
                if (k == "region") n.region = v;
                else if (k.starts_with("ring:")) {
                    try {
                        n.rings[GroupId{id16(k.substr(5), lineno)}] = parse_roles(v);
                    } catch (const std::invalid_argument& e) {
                        fail(e.what());
                    }
                } else if (k == "skew_ms") n.skew_ms = num(v, lineno);
                else if (k == "frame_us") n.frame_us = num(v, lineno);
                else if (k == "byte_ns") n.byte_ns = num(v, lineno);
                else if (k == "apply_us") n.apply_us = num(v, lineno);
                else if (k == "app") {
                    if (v != "kv" && v != "none") fail("app must be kv or none");
                    n.kv = v == "kv";
                } else fail("unknown node key '" + k + "'");
            }
            if (defaults)
                node_defaults = n;
            else
                sc.nodes.push_back(n);
        } else if (section == "links") {
            // default <dist> | intra <dist> | region <a> <b> <dist> | node <a> <b> <dist>; [drop=p]
            LinkRule l;
            std::size_t at = 1;
            if (w[0] == "default") l.scope = LinkRule::Scope::Default;
            else if (w[0] == "intra") l.scope = LinkRule::Scope::Intra;
            else if (w[0] == "region" || w[0] == "node") {
                if (w.size() < 4) fail("link needs two endpoints and a latency");
                l.scope = w[0] == "region" ? LinkRule::Scope::Region : LinkRule::Scope::Node;
                l.a = w[1];
                l.b = w[2];
                at = 3;
            } else fail("unknown link scope '" + w[0] + "'");
            if (w.size() <= at) fail("link needs a latency");
            l.latency = LatencyDist::parse(w[at]);
            for (std::size_t i = at + 1; i < w.size(); ++i) {
                auto [k, v] = split_pair(w[i], lineno);
                if (k == "drop") l.drop = num(v, lineno);
                else fail("unknown link key '" + k + "'");
            }
            sc.links.push_back(l);
        } else if (section == "clients") {
            ClientSpec c;
            c.id = static_cast<std::uint32_t>(num(w[0], lineno));
            for (std::size_t i = 1; i < w.size(); ++i) {
                auto [k, v] = split_pair(w[i], lineno);
                if (k == "region") c.region = v;
                else if (k == "groups") {
                    for (const auto& part : LatencyDist::split(v, ',')) {
                        auto colon = part.find(':');
                        GroupId g{id16(part.substr(0, colon), lineno)};
                        double weight = colon == std::string::npos ? 1.0 : num(part.substr(colon + 1), lineno);
                        c.groups.emplace_back(g, weight);
                    }
                } else if (k == "threads") c.threads = static_cast<std::uint32_t>(num(v, lineno));
                else if (k == "size") c.size = static_cast<std::uint32_t>(num(v, lineno));
                else if (k == "mode") {
                    if (v != "open" && v != "closed") fail("mode must be open or closed");
                    c.open_loop = v == "open";
                } else if (k == "rate") c.rate = num(v, lineno);
                else if (k == "start_s") c.start_s = num(v, lineno);
                else if (k == "stop_s") c.stop_s = num(v, lineno);
                else if (k == "contact") c.contact = NodeId{id16(v, lineno)};
                else if (k == "reply_from") c.reply_from = NodeId{id16(v, lineno)};
                else if (k == "timeout_ms") c.timeout_ms = num(v, lineno);
                else if (k == "workload") {
                    if (v != "raw" && v != "kv") fail("workload must be raw or kv");
                    c.workload = v == "kv" ? Workload::Kv : Workload::Raw;
                } else if (k == "keys") c.kv_keys = static_cast<std::uint32_t>(num(v, lineno));
                else if (k == "insert") c.kv_insert = num(v, lineno);
                else if (k == "read") c.kv_read = num(v, lineno);
                else fail("unknown client key '" + k + "'");
            }
            sc.clients.push_back(c);
        } else if (section == "faults") {
            // crash|recover|kill_region|delay|store_down|store_up at=<s> ...
            FaultSpec f;
            if (w[0] == "crash") f.kind = FaultKind::Crash;
            else if (w[0] == "recover") f.kind = FaultKind::Recover;
            else if (w[0] == "kill_region") f.kind = FaultKind::KillRegion;
            else if (w[0] == "delay") f.kind = FaultKind::Delay;
            else if (w[0] == "store_down") f.kind = FaultKind::StoreDown;
            else if (w[0] == "store_up") f.kind = FaultKind::StoreUp;
            else fail("unknown fault '" + w[0] + "'");
            for (std::size_t i = 1; i < w.size(); ++i) {
                auto [k, v] = split_pair(w[i], lineno);
                if (k == "at") f.at_s = num(v, lineno);
                else if (k == "node") f.node = NodeId{id16(v, lineno)};
                else if (k == "region") f.region = v;
                else if (k == "for") f.for_s = num(v, lineno);
                else if (k == "extra_ms") f.extra_ms = num(v, lineno);
                else if (k == "protocol") {
                    if (v != "new" && v != "old") fail("protocol must be new or old");
                    f.new_protocol = v == "new";
                } else fail("unknown fault key '" + k + "'");
            }
            sc.faults.push_back(f);
        }
    }
    if (validate) sc.validate();
    return sc;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::InvalidScenario, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Scenario load_scenario(const std::string& path, bool validate = true) {
    return parse_scenario(read_text_file(path), validate);
}

}  // namespace mrp
