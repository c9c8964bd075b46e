#pragma once

#include "mrp/core.hpp"
#include "mrp/wire.hpp"

#include <string>

namespace mrp::tcp {

/// First frame on every TCP connection, carried in a HEARTBEAT frame. Nodes
/// send their id (the same body doubles as the periodic heartbeat to the
/// registry); clients send node id 0, their client id and the UDP endpoint
/// replies should go to (empty for none).
struct Hello {
    NodeId node;
    std::uint32_t client = 0;
    std::string reply_to;

    static Hello from_node(NodeId n) {
        Hello h;
        h.node = n;
        return h;
    }

    bool is_client() const noexcept { return node.value == 0; }

    wire::Frame frame() const {
        wire::Writer w;
        w.u16(node.value);
        if (is_client()) {
            w.u32(client);
            w.str(reply_to);
        }
        wire::Frame f;
        f.type = wire::FrameType::Heartbeat;
        f.blob = w.take();
        return f;
    }

    static Hello parse(const wire::Frame& f) {
        if (f.type != wire::FrameType::Heartbeat) throw Error(Errc::MalformedFrame, "expected hello");
        wire::Reader r(f.blob);
        Hello h;
        h.node.value = r.u16();
        if (h.is_client()) {
            h.client = r.u32();
            h.reply_to = r.str();
        }
        return h;
    }
};

/// The registry answers a rejected REGISTER with a VIEW frame whose body is
/// empty.
inline wire::Frame rejection() {
    wire::Frame f;
    f.type = wire::FrameType::View;
    return f;
}

}  // namespace mrp::tcp
