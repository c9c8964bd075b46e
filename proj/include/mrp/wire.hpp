#pragma once

#include "mrp/core.hpp"
#include "mrp/value.hpp"

#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mrp::wire {

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    std::size_t size() const noexcept { return buf_.size(); }
    std::vector<std::uint8_t>& buffer() noexcept { return buf_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(buf_); }

    void patch_u32(std::size_t at, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_[at + i] = static_cast<std::uint8_t>(v >> (8 * (3 - i)));
    }

private:
    void put(std::uint64_t v, int n) {
        for (int i = n - 1; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() {
        auto n = u32();
        auto b = bytes(n);
        return {b.begin(), b.end()};
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    bool done() const noexcept { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw Error(Errc::MalformedFrame, "truncated");
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v = (v << 8) | data_[pos_ + i];
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

enum class FrameType : std::uint8_t {
    Phase1A = 1,
    Phase1B = 2,
    Phase2 = 3,
    Decision = 4,
    Fetch = 5,
    FetchReply = 6,
    Nack = 7,
    ClientSubmit = 8,
    ClientReply = 9,
    Register = 10,
    View = 11,
    Heartbeat = 12,
    DelayReport = 13,
};

enum class FetchStatus : std::uint8_t { Ok = 0, Trimmed = 1, Undecided = 2 };

/// A value an acceptor reports during phase 1.
struct AcceptedEntry {
    std::uint64_t instance = 0;
    Ballot ballot;
    std::uint64_t slot_base = 0;
    Value value;
    bool operator==(const AcceptedEntry&) const = default;
};

/// In-memory form of every frame. Which optional fields are meaningful
/// depends on `type`; the codec writes only those.
struct Frame {
    FrameType type = FrameType::Heartbeat;
    GroupId group;
    Ballot ballot;
    std::uint64_t instance = 0;
    std::uint8_t votes = 0;
    Value value;

    std::uint64_t slot_base = 0;          // Phase2, Decision, FetchReply(Ok)
    std::uint8_t ttl = 0;                 // Phase1A, Phase1B, Phase2, Decision
    std::vector<NodeId> voters;           // Phase1A, Phase1B, Phase2, Decision
    std::vector<AcceptedEntry> accepted;  // Phase1A, Phase1B
    std::uint64_t range_end = 0;          // Fetch
    std::uint8_t status = 0;              // FetchReply, ClientReply
    std::vector<std::uint8_t> blob;       // registry frames, DelayReport

    bool operator==(const Frame&) const = default;
};

inline constexpr std::size_t kHeaderBytes = 1 + 2 + 4 + 2 + 8 + 1 + 1;
inline constexpr std::size_t kEntryIdBytes = 4 + 8;

inline void write_value_body(Writer& w, const Value& v) {
    switch (v.kind()) {
        case ValueKind::Skip:
            w.u64(v.skip_count());
            break;
        case ValueKind::App:
            w.u16(static_cast<std::uint16_t>(v.batch().size()));
            for (const auto& s : v.batch()) {
                w.u32(static_cast<std::uint32_t>(kEntryIdBytes + s.payload.size()));
                w.u32(s.id.client);
                w.u64(s.id.seq);
                w.bytes(s.payload);
            }
            break;
        case ValueKind::None:
            break;
    }
}

inline Value read_value_body(Reader& r, ValueKind kind) {
    switch (kind) {
        case ValueKind::Skip: {
            auto n = r.u64();
            if (n == 0) throw Error(Errc::MalformedFrame, "zero skip");
            return Value::skip(n);
        }
        case ValueKind::App: {
            auto n = r.u16();
            if (n == 0) throw Error(Errc::MalformedFrame, "empty batch");
            std::vector<Submission> batch;
            batch.reserve(n);
            for (std::uint16_t i = 0; i < n; ++i) {
                auto len = r.u32();
                if (len < kEntryIdBytes) throw Error(Errc::MalformedFrame, "short entry");
                Submission s;
                s.id.client = r.u32();
                s.id.seq = r.u64();
                auto body = r.bytes(len - kEntryIdBytes);
                s.payload.assign(body.begin(), body.end());
                batch.push_back(std::move(s));
            }
            return Value::app(std::move(batch));
        }
        case ValueKind::None:
            return {};
    }
    throw Error(Errc::MalformedFrame, "value kind");
}

inline ValueKind checked_kind(std::uint8_t k) {
    if (k > 2) throw Error(Errc::MalformedFrame, "value kind " + std::to_string(k));
    return static_cast<ValueKind>(k);
}

inline void write_voters(Writer& w, const std::vector<NodeId>& voters) {
    w.u8(static_cast<std::uint8_t>(voters.size()));
    for (auto n : voters) w.u16(n.value);
}

inline std::vector<NodeId> read_voters(Reader& r) {
    std::vector<NodeId> out(r.u8());
    for (auto& n : out) n.value = r.u16();
    return out;
}

/// Encodes `f` including its leading len:u32.
inline std::vector<std::uint8_t> encode(const Frame& f) {
    Writer w;
    w.u32(0);
    w.u8(static_cast<std::uint8_t>(f.type));
    w.u16(f.group.value);
    w.u32(f.ballot.round);
    w.u16(f.ballot.node.value);
    w.u64(f.instance);
    w.u8(f.votes);
    w.u8(static_cast<std::uint8_t>(f.value.kind()));
    write_value_body(w, f.value);
    switch (f.type) {
        case FrameType::Phase1A:
        case FrameType::Phase1B:
            w.u8(f.ttl);
            write_voters(w, f.voters);
            w.u32(static_cast<std::uint32_t>(f.accepted.size()));
            for (const auto& e : f.accepted) {
                w.u64(e.instance);
                w.u32(e.ballot.round);
                w.u16(e.ballot.node.value);
                w.u64(e.slot_base);
                w.u8(static_cast<std::uint8_t>(e.value.kind()));
                write_value_body(w, e.value);
            }
            break;
        case FrameType::Phase2:
        case FrameType::Decision:
            w.u64(f.slot_base);
            w.u8(f.ttl);
            write_voters(w, f.voters);
            break;
        case FrameType::Fetch:
            w.u64(f.range_end);
            break;
        case FrameType::FetchReply:
            if (f.value.kind() != ValueKind::None) w.u64(f.slot_base);
            w.u8(f.status);
            break;
        case FrameType::ClientReply:
            w.u8(f.status);
            break;
        case FrameType::Register:
        case FrameType::View:
        case FrameType::Heartbeat:
        case FrameType::DelayReport:
            w.bytes(f.blob);
            break;
        case FrameType::Nack:
        case FrameType::ClientSubmit:
            break;
    }
    w.patch_u32(0, static_cast<std::uint32_t>(w.size() - 4));
    return w.take();
}

/// Decodes one complete frame (with its len prefix).
inline Frame decode(std::span<const std::uint8_t> bytes) {
    Reader outer(bytes);
    auto len = outer.u32();
    if (len != outer.remaining()) throw Error(Errc::MalformedFrame, "length mismatch");
    Reader r(bytes.subspan(4));
    Frame f;
    auto type = r.u8();
    if (type < 1 || type > 13) throw Error(Errc::MalformedFrame, "frame type " + std::to_string(type));
    f.type = static_cast<FrameType>(type);
    f.group.value = r.u16();
    f.ballot.round = r.u32();
    f.ballot.node.value = r.u16();
    f.instance = r.u64();
    f.votes = r.u8();
    auto kind = checked_kind(r.u8());
    f.value = read_value_body(r, kind);
    switch (f.type) {
        case FrameType::Phase1A:
        case FrameType::Phase1B: {
            f.ttl = r.u8();
            f.voters = read_voters(r);
            auto n = r.u32();
            for (std::uint32_t i = 0; i < n; ++i) {
                AcceptedEntry e;
                e.instance = r.u64();
                e.ballot.round = r.u32();
                e.ballot.node.value = r.u16();
                e.slot_base = r.u64();
                e.value = read_value_body(r, checked_kind(r.u8()));
                f.accepted.push_back(std::move(e));
            }
            break;
        }
        case FrameType::Phase2:
        case FrameType::Decision:
            f.slot_base = r.u64();
            f.ttl = r.u8();
            f.voters = read_voters(r);
            break;
        case FrameType::Fetch:
            f.range_end = r.u64();
            break;
        case FrameType::FetchReply:
            if (kind != ValueKind::None) f.slot_base = r.u64();
            f.status = r.u8();
            break;
        case FrameType::ClientReply:
            f.status = r.u8();
            break;
        case FrameType::Register:
        case FrameType::View:
        case FrameType::Heartbeat:
        case FrameType::DelayReport: {
            auto rest = r.bytes(r.remaining());
            f.blob.assign(rest.begin(), rest.end());
            break;
        }
        case FrameType::Nack:
        case FrameType::ClientSubmit:
            break;
    }
    if (!r.done()) throw Error(Errc::MalformedFrame, "trailing bytes");
    return f;
}

/// Size of `f` on the wire; used for cost accounting in the simulator.
inline std::size_t encoded_size(const Frame& f) {
    std::size_t n = 4 + kHeaderBytes;
    auto value_bytes = [](const Value& v) -> std::size_t {
        if (v.is_skip()) return 8;
        if (!v.is_app()) return 0;
        std::size_t b = 2;
        for (const auto& s : v.batch()) b += 4 + kEntryIdBytes + s.payload.size();
        return b;
    };
    n += value_bytes(f.value);
    switch (f.type) {
        case FrameType::Phase1A:
        case FrameType::Phase1B:
            n += 1 + 1 + 2 * f.voters.size() + 4;
            for (const auto& e : f.accepted) n += 8 + 4 + 2 + 8 + 1 + value_bytes(e.value);
            break;
        case FrameType::Phase2:
        case FrameType::Decision:
            n += 8 + 1 + 1 + 2 * f.voters.size();
            break;
        case FrameType::Fetch:
            n += 8;
            break;
        case FrameType::FetchReply:
            n += (f.value.kind() != ValueKind::None ? 8 : 0) + 1;
            break;
        case FrameType::ClientReply:
            n += 1;
            break;
        default:
            n += f.blob.size();
    }
    return n;
}

/// Accumulates a TCP byte stream and yields complete frames.
class FrameAssembler {
public:
    void feed(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

    std::optional<Frame> next() {
        if (buf_.size() < 4) return std::nullopt;
        std::uint32_t len = (std::uint32_t{buf_[0]} << 24) | (std::uint32_t{buf_[1]} << 16) |
                            (std::uint32_t{buf_[2]} << 8) | std::uint32_t{buf_[3]};
        if (len > kMaxFrame) throw Error(Errc::MalformedFrame, "frame too large");
        if (buf_.size() < 4 + std::size_t{len}) return std::nullopt;
        auto f = decode(std::span(buf_.data(), 4 + std::size_t{len}));
        buf_.erase(buf_.begin(), buf_.begin() + 4 + len);
        return f;
    }

    static constexpr std::uint32_t kMaxFrame = 64u << 20;

private:
    std::vector<std::uint8_t> buf_;
};

}  // namespace mrp::wire
