#pragma once

#include "mrp/core.hpp"
#include "mrp/wire.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mrp {

enum Role : std::uint8_t {
    kProposer = 1 << 0,
    kAcceptor = 1 << 1,
    kLearner = 1 << 2,
};
using Roles = std::uint8_t;

inline Roles parse_roles(std::string_view s) {
    Roles r = 0;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        auto end = s.find(',', pos);
        if (end == std::string_view::npos) end = s.size();
        auto tok = s.substr(pos, end - pos);
        if (tok == "proposer") r |= kProposer;
        else if (tok == "acceptor") r |= kAcceptor;
        else if (tok == "learner") r |= kLearner;
        else if (tok == "all") r |= kProposer | kAcceptor | kLearner;
        else if (!tok.empty()) throw std::invalid_argument("unknown role '" + std::string(tok) + "'");
        pos = end + 1;
    }
    return r;
}

inline std::string roles_string(Roles r) {
    std::string out;
    auto add = [&](const char* n) {
        if (!out.empty()) out += ',';
        out += n;
    };
    if (r & kProposer) add("proposer");
    if (r & kAcceptor) add("acceptor");
    if (r & kLearner) add("learner");
    return out;
}

struct RingMember {
    NodeId node;
    Roles roles = 0;
    bool operator==(const RingMember&) const = default;
};

struct RingRole {
    GroupId group;
    Roles roles = 0;
};

/// Ring membership as published by the registry. List order within a ring
/// defines successor links; the last member's successor is the first.
struct TopologyView {
    std::uint64_t epoch = 0;
    std::map<GroupId, std::vector<RingMember>> rings;
    std::map<GroupId, std::uint8_t> acceptor_count;  // configured acceptors, live or not
    std::map<NodeId, std::string> addresses;

    bool operator==(const TopologyView&) const = default;

    bool has_group(GroupId g) const { return rings.contains(g); }

    const std::vector<RingMember>& members(GroupId g) const {
        auto it = rings.find(g);
        if (it == rings.end()) throw Error(Errc::UnknownGroup, std::to_string(g.value));
        return it->second;
    }

    std::optional<Roles> roles_of(GroupId g, NodeId n) const {
        auto it = rings.find(g);
        if (it == rings.end()) return std::nullopt;
        for (const auto& m : it->second)
            if (m.node == n) return m.roles;
        return std::nullopt;
    }

    bool contains(GroupId g, NodeId n) const { return roles_of(g, n).has_value(); }

    std::optional<NodeId> successor(GroupId g, NodeId n) const {
        const auto& ms = members(g);
        for (std::size_t i = 0; i < ms.size(); ++i)
            if (ms[i].node == n) return ms[(i + 1) % ms.size()].node;
        return std::nullopt;
    }

    std::size_t majority(GroupId g) const {
        auto it = acceptor_count.find(g);
        const std::size_t n = it == acceptor_count.end() ? 0 : it->second;
        return n / 2 + 1;
    }

    std::vector<NodeId> acceptors(GroupId g) const {
        std::vector<NodeId> out;
        for (const auto& m : members(g))
            if (m.roles & kAcceptor) out.push_back(m.node);
        return out;
    }

    std::vector<GroupId> groups_of(NodeId n) const {
        std::vector<GroupId> out;
        for (const auto& [g, ms] : rings)
            for (const auto& m : ms)
                if (m.node == n) out.push_back(g);
        return out;
    }

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u64(epoch);
        w.u16(static_cast<std::uint16_t>(rings.size()));
        for (const auto& [g, ms] : rings) {
            w.u16(g.value);
            auto ac = acceptor_count.find(g);
            w.u8(ac == acceptor_count.end() ? 0 : ac->second);
            w.u16(static_cast<std::uint16_t>(ms.size()));
            for (const auto& m : ms) {
                w.u16(m.node.value);
                w.u8(m.roles);
            }
        }
        w.u16(static_cast<std::uint16_t>(addresses.size()));
        for (const auto& [n, a] : addresses) {
            w.u16(n.value);
            w.str(a);
        }
        return w.take();
    }

    static TopologyView decode(std::span<const std::uint8_t> b) {
        wire::Reader r(b);
        TopologyView v;
        v.epoch = r.u64();
        auto nr = r.u16();
        for (std::uint16_t i = 0; i < nr; ++i) {
            GroupId g{r.u16()};
            v.acceptor_count[g] = r.u8();
            auto nm = r.u16();
            auto& ms = v.rings[g];
            for (std::uint16_t j = 0; j < nm; ++j) {
                RingMember m;
                m.node.value = r.u16();
                m.roles = r.u8();
                ms.push_back(m);
            }
        }
        auto na = r.u16();
        for (std::uint16_t i = 0; i < na; ++i) {
            NodeId n{r.u16()};
            v.addresses[n] = r.str();
        }
        return v;
    }
};

/// Body of a REGISTER frame.
struct Registration {
    NodeId node;
    std::string address;
    std::vector<RingRole> rings;

    std::vector<std::uint8_t> encode() const {
        wire::Writer w;
        w.u16(node.value);
        w.str(address);
        w.u16(static_cast<std::uint16_t>(rings.size()));
        for (const auto& rr : rings) {
            w.u16(rr.group.value);
            w.u8(rr.roles);
        }
        return w.take();
    }

    static Registration decode(std::span<const std::uint8_t> b) {
        wire::Reader r(b);
        Registration reg;
        reg.node.value = r.u16();
        reg.address = r.str();
        auto n = r.u16();
        for (std::uint16_t i = 0; i < n; ++i) {
            RingRole rr;
            rr.group.value = r.u16();
            rr.roles = r.u8();
            reg.rings.push_back(rr);
        }
        return reg;
    }
};

/// Membership registry: the single authority for ring composition.
/// Ring order is registration order.
class Registry {
public:
    /// Pre-declares a ring so its quorum size is fixed before members join.
    void declare_ring(GroupId g, std::uint8_t acceptors) {
        view_.rings[g];
        view_.acceptor_count[g] = std::max(view_.acceptor_count[g], acceptors);
    }

    const TopologyView& view() const noexcept { return view_; }
    bool is_registered(NodeId n) const { return registered_.contains(n); }

    const TopologyView& register_node(NodeId node, std::vector<RingRole> rings, std::string address = {}) {
        if (registered_.contains(node)) throw Error(Errc::DuplicateNode, std::to_string(node.value));
        for (const auto& rr : rings) {
            auto& ms = view_.rings[rr.group];
            ms.push_back(RingMember{node, rr.roles});
            if (rr.roles & kAcceptor) {
                auto& known = acceptors_ever_[rr.group];
                known.insert(node);
                auto& count = view_.acceptor_count[rr.group];
                count = std::max<std::uint8_t>(count, static_cast<std::uint8_t>(known.size()));
            } else {
                view_.acceptor_count.try_emplace(rr.group, 0);
            }
        }
        view_.addresses[node] = std::move(address);
        registered_[node] = std::move(rings);
        ++view_.epoch;
        return view_;
    }

    const TopologyView& register_node(NodeId node, Roles roles, const std::vector<GroupId>& groups,
                                      std::string address = {}) {
        std::vector<RingRole> rr;
        for (auto g : groups) rr.push_back(RingRole{g, roles});
        return register_node(node, std::move(rr), std::move(address));
    }

    /// Drops `node` from every ring. Returns false if it was not registered.
    bool remove_node(NodeId node) {
        if (!registered_.erase(node)) return false;
        for (auto& [g, ms] : view_.rings)
            std::erase_if(ms, [&](const RingMember& m) { return m.node == node; });
        view_.addresses.erase(node);
        ++view_.epoch;
        return true;
    }

    std::vector<NodeId> registered() const {
        std::vector<NodeId> out;
        for (const auto& [n, _] : registered_) out.push_back(n);
        return out;
    }

private:
    TopologyView view_;
    std::map<NodeId, std::vector<RingRole>> registered_;
    std::map<GroupId, std::set<NodeId>> acceptors_ever_;
};

/// Timeout-based suspicion over heartbeat arrival times.
class FailureDetector {
public:
    explicit FailureDetector(Time timeout) : timeout_(timeout) {}

    void heartbeat(NodeId n, Time now) { last_[n] = now; }
    void forget(NodeId n) { last_.erase(n); }
    Time timeout() const noexcept { return timeout_; }

    std::vector<NodeId> suspects(Time now) const {
        std::vector<NodeId> out;
        for (const auto& [n, t] : last_)
            if (now - t > timeout_) out.push_back(n);
        return out;
    }

private:
    Time timeout_;
    std::map<NodeId, Time> last_;
};

}  // namespace mrp
