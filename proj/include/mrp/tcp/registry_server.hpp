#pragma once

#include "mrp/scenario.hpp"
#include "mrp/tcp/net.hpp"
#include "mrp/tcp/protocol.hpp"
#include "mrp/topology.hpp"

#include <spdlog/spdlog.h>

#include <map>
#include <set>

namespace mrp::tcp {

/// Membership registry over TCP: accepts registrations, tracks heartbeats,
/// and publishes a new view on every change to nodes and watching clients.
class RegistryServer {
public:
    RegistryServer(Endpoint listen, const Scenario& deployment)
        : fd_(from_millis(deployment.suspicion_ms)), heartbeat_(from_millis(deployment.heartbeat_ms)) {
        for (const auto& r : deployment.rings) registry_.declare_ring(r.id, r.acceptors);
        const int lfd = tcp_listen(listen);
        port_ = bound_port(lfd);
        reactor_.listen(lfd);
        reactor_.on_frame = [this](Reactor::ConnId c, wire::Frame&& f) { receive(c, f); };
        reactor_.on_close = [this](Reactor::ConnId c) {
            watchers_.erase(c);
            node_conn_.erase(c);
        };
        reactor_.every(heartbeat_, [this] { check(); });
    }

    std::uint16_t port() const noexcept { return port_; }
    const TopologyView& view() const noexcept { return registry_.view(); }

    void run() { reactor_.run(); }
    void stop() { reactor_.stop(); }

private:
    void receive(Reactor::ConnId c, const wire::Frame& f) {
        using wire::FrameType;
        if (f.type == FrameType::Register) {
            auto reg = Registration::decode(f.blob);
            if (registry_.is_registered(reg.node)) {
                spdlog::warn("registry: node {} already registered", reg.node.value);
                reactor_.send(c, rejection());
                return;
            }
            registry_.register_node(reg.node, reg.rings, reg.address);
            node_conn_[c] = reg.node;
            fd_.heartbeat(reg.node, reactor_.now());
            spdlog::info("registry: node {} joined at {}", reg.node.value, reg.address);
            publish();
        } else if (f.type == FrameType::Heartbeat) {
            auto h = Hello::parse(f);
            if (h.is_client()) {
                watchers_.insert(c);
                send_view(c);
            } else if (registry_.is_registered(h.node)) {
                node_conn_[c] = h.node;
                fd_.heartbeat(h.node, reactor_.now());
            }
        }
    }

    void check() {
        bool changed = false;
        for (auto id : fd_.suspects(reactor_.now())) {
            fd_.forget(id);
            if (registry_.remove_node(id)) {
                spdlog::warn("registry: node {} suspected, removed", id.value);
                changed = true;
            }
        }
        if (changed) publish();
    }

    void publish() {
        spdlog::info("registry: view epoch {}", registry_.view().epoch);
        for (const auto& [c, _] : node_conn_) send_view(c);
        for (auto c : watchers_) send_view(c);
    }

    void send_view(Reactor::ConnId c) {
        wire::Frame f;
        f.type = wire::FrameType::View;
        f.blob = registry_.view().encode();
        reactor_.send(c, f);
    }

    Reactor reactor_;
    Registry registry_;
    FailureDetector fd_;
    Time heartbeat_;
    std::uint16_t port_ = 0;
    std::map<Reactor::ConnId, NodeId> node_conn_;
    std::set<Reactor::ConnId> watchers_;
};

}  // namespace mrp::tcp
