#pragma once

#include "mrp/core.hpp"

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

namespace mrp {

/// Paxos ballot. Round 0 belongs to the ring's initial coordinator.
struct Ballot {
    std::uint32_t round = 0;
    NodeId node;
    auto operator<=>(const Ballot&) const = default;
};

/// An application payload together with the id it was submitted under.
struct Submission {
    MessageId id;
    Payload payload;
    bool operator==(const Submission&) const = default;
};

enum class ValueKind : std::uint8_t { None = 0, App = 1, Skip = 2 };

/// A consensus value: either a batch of submissions or a skip count.
class Value {
public:
    Value() = default;

    static Value app(std::vector<Submission> batch) {
        if (batch.empty()) throw std::invalid_argument("app batch must hold at least one payload");
        Value v;
        v.data_ = std::move(batch);
        return v;
    }

    static Value skip(std::uint64_t count) {
        if (count == 0) throw std::invalid_argument("skip count must be positive");
        Value v;
        v.data_ = count;
        return v;
    }

    ValueKind kind() const noexcept {
        switch (data_.index()) {
            case 1: return ValueKind::App;
            case 2: return ValueKind::Skip;
            default: return ValueKind::None;
        }
    }
    bool is_app() const noexcept { return kind() == ValueKind::App; }
    bool is_skip() const noexcept { return kind() == ValueKind::Skip; }

    const std::vector<Submission>& batch() const { return std::get<1>(data_); }
    std::uint64_t skip_count() const { return std::get<2>(data_); }

    /// Merge slots this value occupies: one per payload, or the skip count.
    std::uint64_t slots() const noexcept {
        switch (kind()) {
            case ValueKind::App: return std::get<1>(data_).size();
            case ValueKind::Skip: return std::get<2>(data_);
            default: return 0;
        }
    }

    std::size_t payload_bytes() const noexcept {
        if (!is_app()) return 0;
        std::size_t n = 0;
        for (const auto& s : batch()) n += s.payload.size();
        return n;
    }

    bool operator==(const Value&) const = default;

private:
    std::variant<std::monostate, std::vector<Submission>, std::uint64_t> data_;
};

struct Decision {
    GroupId group;
    std::uint64_t instance = 0;
    Value value;
    bool operator==(const Decision&) const = default;
};

inline std::uint64_t value_digest(const Value& v) {
    Fnv1a h;
    h.update_int(static_cast<int>(v.kind()));
    if (v.is_skip()) {
        h.update_int(v.skip_count());
    } else if (v.is_app()) {
        for (const auto& s : v.batch()) {
            h.update_int(s.id.client);
            h.update_int(s.id.seq);
            h.update(s.payload.data(), s.payload.size());
        }
    }
    return h.digest();
}

}  // namespace mrp
