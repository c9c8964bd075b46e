#pragma once

#include <chrono>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mrp {

/// Virtual or wall-clock time, always carried in nanoseconds.
using Time = std::chrono::nanoseconds;

constexpr double to_seconds(Time t) noexcept {
    return static_cast<double>(t.count()) / 1e9;
}

constexpr Time from_seconds(double s) noexcept {
    return Time{static_cast<std::int64_t>(s * 1e9 + (s >= 0 ? 0.5 : -0.5))};
}

constexpr Time from_millis(double ms) noexcept {
    return from_seconds(ms / 1e3);
}

/// A multicast group; one group is served by exactly one ring.
struct GroupId {
    std::uint16_t value = 0;
    auto operator<=>(const GroupId&) const = default;
};

struct NodeId {
    std::uint16_t value = 0;
    auto operator<=>(const NodeId&) const = default;
};

/// (client, client sequence number); unique per submitting client.
struct MessageId {
    std::uint32_t client = 0;
    std::uint64_t seq = 0;
    auto operator<=>(const MessageId&) const = default;
};

using Payload = std::vector<std::uint8_t>;

inline constexpr std::size_t kDefaultMaxMessageSize = 32768;

/// One application message handed to a subscriber, in merged order.
struct Delivery {
    GroupId group;
    std::uint64_t ring_instance = 0;
    std::uint64_t global_slot = 0;
    MessageId id;
    Payload payload;
    /// Position of the message in its ring's slot sequence (skips included).
    std::uint64_t ring_slot = 0;
};

enum class Errc {
    UnknownGroup,
    PayloadTooLarge,
    NotConnected,
    AlreadySubscribed,
    EmptySubscription,
    SubscriptionClosed,
    ConcurrentConsumer,
    NoLiveAcceptor,
    NotCoordinator,
    NoPromisedRange,
    Preempted,
    StaleBallot,
    Trimmed,
    Undecided,
    OutOfOrderInstance,
    NoSamples,
    StoreUnavailable,
    SubscriptionMismatch,
    ValidityViolated,
    DuplicateNode,
    UnknownNode,
    LinkDown,
    HorizonExceeded,
    InvalidScenario,
    KeyNotFound,
    NoSamplesForCdf,
    MalformedFrame,
    RegistryUnreachable,
    BindFailure,
};

constexpr std::string_view to_string(Errc e) noexcept {
    switch (e) {
        case Errc::UnknownGroup: return "UnknownGroup";
        case Errc::PayloadTooLarge: return "PayloadTooLarge";
        case Errc::NotConnected: return "NotConnected";
        case Errc::AlreadySubscribed: return "AlreadySubscribed";
        case Errc::EmptySubscription: return "EmptySubscription";
        case Errc::SubscriptionClosed: return "SubscriptionClosed";
        case Errc::ConcurrentConsumer: return "ConcurrentConsumer";
        case Errc::NoLiveAcceptor: return "NoLiveAcceptor";
        case Errc::NotCoordinator: return "NotCoordinator";
        case Errc::NoPromisedRange: return "NoPromisedRange";
        case Errc::Preempted: return "Preempted";
        case Errc::StaleBallot: return "StaleBallot";
        case Errc::Trimmed: return "Trimmed";
        case Errc::Undecided: return "Undecided";
        case Errc::OutOfOrderInstance: return "OutOfOrderInstance";
        case Errc::NoSamples: return "NoSamples";
        case Errc::StoreUnavailable: return "StoreUnavailable";
        case Errc::SubscriptionMismatch: return "SubscriptionMismatch";
        case Errc::ValidityViolated: return "ValidityViolated";
        case Errc::DuplicateNode: return "DuplicateNode";
        case Errc::UnknownNode: return "UnknownNode";
        case Errc::LinkDown: return "LinkDown";
        case Errc::HorizonExceeded: return "HorizonExceeded";
        case Errc::InvalidScenario: return "InvalidScenario";
        case Errc::KeyNotFound: return "KeyNotFound";
        case Errc::NoSamplesForCdf: return "NoSamples";
        case Errc::MalformedFrame: return "MalformedFrame";
        case Errc::RegistryUnreachable: return "RegistryUnreachable";
        case Errc::BindFailure: return "BindFailure";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    explicit Error(Errc code, const std::string& detail = {})
        : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                            : std::string(to_string(code)) + ": " + detail),
          code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

// FNV-1a, used wherever a stable cross-run digest is needed.
class Fnv1a {
public:
    void update(const void* data, std::size_t n) noexcept {
        const auto* p = static_cast<const std::uint8_t*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 1099511628211ULL;
        }
    }
    void update(std::string_view s) noexcept { update(s.data(), s.size()); }
    template <typename T>
        requires std::is_integral_v<T>
    void update_int(T v) noexcept {
        auto u = static_cast<std::uint64_t>(v);
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(u >> (8 * i));
        update(b, 8);
    }
    std::uint64_t digest() const noexcept { return h_; }

private:
    std::uint64_t h_ = 14695981039346656037ULL;
};

}  // namespace mrp

template <>
struct std::hash<mrp::GroupId> {
    std::size_t operator()(const mrp::GroupId& g) const noexcept { return g.value; }
};

template <>
struct std::hash<mrp::NodeId> {
    std::size_t operator()(const mrp::NodeId& n) const noexcept { return n.value; }
};
