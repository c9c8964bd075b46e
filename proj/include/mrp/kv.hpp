#pragma once

#include "mrp/core.hpp"
#include "mrp/wire.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mrp {

/// Deterministic replicated application driven by the merged delivery stream.
class StateMachine {
public:
    virtual ~StateMachine() = default;
    /// Applies one delivered command and returns the reply payload.
    virtual Payload apply(const Delivery& d) = 0;
    virtual std::vector<std::uint8_t> snapshot() const = 0;
    virtual void restore(std::span<const std::uint8_t> blob) = 0;
    virtual std::uint64_t state_hash() const = 0;
    virtual std::uint64_t applied() const = 0;
};

namespace kv {

enum class Op : std::uint8_t { Insert = 1, Remove = 2, Read = 3, Update = 4, Range = 5 };
enum class Status : std::uint8_t { Ok = 0, KeyNotFound = 1, KeyExists = 2, BadCommand = 3 };

struct Command {
    Op op = Op::Read;
    std::string key;
    std::string value;       // Insert, Update
    std::string end_key;     // Range: [key, end_key)
    std::uint32_t limit = 0;  // Range: 0 = unlimited
};

inline Payload encode(const Command& c) {
    wire::Writer w;
    w.u8(static_cast<std::uint8_t>(c.op));
    w.str(c.key);
    w.u32(static_cast<std::uint32_t>(c.value.size()));
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(c.value.data()), c.value.size()));
    if (c.op == Op::Range) {
        w.str(c.end_key);
        w.u32(c.limit);
    }
    return w.take();
}

inline Command decode(std::span<const std::uint8_t> b) {
    wire::Reader r(b);
    Command c;
    const auto op = r.u8();
    if (op < 1 || op > 5) throw Error(Errc::MalformedFrame, "bad kv op");
    c.op = static_cast<Op>(op);
    c.key = r.str();
    auto vb = r.bytes(r.u32());
    c.value.assign(vb.begin(), vb.end());
    if (c.op == Op::Range) {
        c.end_key = r.str();
        c.limit = r.u32();
    }
    if (!r.done()) throw Error(Errc::MalformedFrame, "trailing kv bytes");
    return c;
}

struct Reply {
    Status status = Status::Ok;
    std::vector<std::pair<std::string, std::string>> entries;
};

inline Payload encode(const Reply& rep) {
    wire::Writer w;
    w.u8(static_cast<std::uint8_t>(rep.status));
    w.u32(static_cast<std::uint32_t>(rep.entries.size()));
    for (const auto& [k, v] : rep.entries) {
        w.str(k);
        w.u32(static_cast<std::uint32_t>(v.size()));
        w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size()));
    }
    return w.take();
}

inline Reply decode_reply(std::span<const std::uint8_t> b) {
    wire::Reader r(b);
    Reply rep;
    rep.status = static_cast<Status>(r.u8());
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto k = r.str();
        auto vb = r.bytes(r.u32());
        rep.entries.emplace_back(std::move(k), std::string(vb.begin(), vb.end()));
    }
    return rep;
}

/// Key-value store with bucketed copy-on-write: a snapshot pins the current
/// buckets, and a later write clones only the bucket it touches.
class Store final : public StateMachine {
public:
    static constexpr std::size_t kBuckets = 256;
    using Bucket = std::map<std::string, std::string>;

    /// Immutable view of the store at the time it was taken.
    struct Snapshot {
        std::array<std::shared_ptr<const Bucket>, kBuckets> buckets;
        std::uint64_t hash = 0;
        std::uint64_t applied = 0;

        std::vector<std::uint8_t> serialize() const {
            wire::Writer w;
            w.u64(applied);
            std::uint64_t n = 0;
            for (const auto& b : buckets) n += b->size();
            w.u64(n);
            for (const auto& b : buckets)
                for (const auto& [k, v] : *b) {
                    w.str(k);
                    w.u32(static_cast<std::uint32_t>(v.size()));
                    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size()));
                }
            return w.take();
        }
    };

    Store() {
        for (auto& b : buckets_) b = std::make_shared<const Bucket>();
    }

    Payload apply(const Delivery& d) override {
        ++applied_;
        Command c;
        try {
            c = decode(d.payload);
        } catch (const std::exception&) {
            return encode(Reply{Status::BadCommand, {}});
        }
        return encode(execute(c));
    }

    Reply execute(const Command& c) {
        Reply rep;
        switch (c.op) {
            case Op::Insert: {
                auto& b = writable(c.key);
                auto [it, fresh] = b.try_emplace(c.key, c.value);
                if (!fresh) {
                    rep.status = Status::KeyExists;
                    break;
                }
                hash_ += entry_hash(c.key, c.value);
                ++size_;
                break;
            }
            case Op::Remove: {
                if (!bucket(c.key).contains(c.key)) {
                    rep.status = Status::KeyNotFound;
                    break;
                }
                auto& b = writable(c.key);
                auto it = b.find(c.key);
                hash_ -= entry_hash(it->first, it->second);
                b.erase(it);
                --size_;
                break;
            }
            case Op::Read: {
                const auto& b = bucket(c.key);
                auto it = b.find(c.key);
                if (it == b.end())
                    rep.status = Status::KeyNotFound;
                else
                    rep.entries.emplace_back(it->first, it->second);
                break;
            }
            case Op::Update: {
                if (!bucket(c.key).contains(c.key)) {
                    rep.status = Status::KeyNotFound;
                    break;
                }
                auto& b = writable(c.key);
                auto it = b.find(c.key);
                hash_ -= entry_hash(it->first, it->second);
                it->second = c.value;
                hash_ += entry_hash(it->first, it->second);
                break;
            }
            case Op::Range: {
                for (const auto& b : buckets_)
                    for (auto it = b->lower_bound(c.key); it != b->end() && it->first < c.end_key; ++it)
                        rep.entries.emplace_back(it->first, it->second);
                std::sort(rep.entries.begin(), rep.entries.end());
                if (c.limit && rep.entries.size() > c.limit) rep.entries.resize(c.limit);
                break;
            }
        }
        return rep;
    }

    /// O(buckets) pointer copy; writes after this clone one bucket each.
    Snapshot take_snapshot() const {
        Snapshot s;
        s.buckets = buckets_;
        s.hash = hash_;
        s.applied = applied_;
        return s;
    }

    std::vector<std::uint8_t> snapshot() const override { return take_snapshot().serialize(); }

    void restore(std::span<const std::uint8_t> blob) override {
        std::array<Bucket, kBuckets> fresh;
        wire::Reader r(blob);
        const auto applied = r.u64();
        const auto n = r.u64();
        std::uint64_t hash = 0;
        for (std::uint64_t i = 0; i < n; ++i) {
            auto k = r.str();
            auto vb = r.bytes(r.u32());
            std::string v(vb.begin(), vb.end());
            hash += entry_hash(k, v);
            fresh[bucket_of(k)].emplace(std::move(k), std::move(v));
        }
        if (!r.done()) throw Error(Errc::MalformedFrame, "trailing snapshot bytes");
        for (std::size_t i = 0; i < kBuckets; ++i) buckets_[i] = std::make_shared<const Bucket>(std::move(fresh[i]));
        hash_ = hash;
        size_ = n;
        applied_ = applied;
    }

    /// Order-independent digest of the key-value contents.
    std::uint64_t state_hash() const override { return hash_; }
    std::uint64_t applied() const override { return applied_; }
    std::size_t size() const noexcept { return size_; }

    std::optional<std::string> get(const std::string& key) const {
        const auto& b = bucket(key);
        auto it = b.find(key);
        if (it == b.end()) return std::nullopt;
        return it->second;
    }

private:
    static std::size_t bucket_of(const std::string& key) {
        Fnv1a h;
        h.update(key);
        return h.digest() % kBuckets;
    }

    static std::uint64_t entry_hash(const std::string& k, const std::string& v) {
        Fnv1a h;
        h.update(k);
        h.update_int(std::uint64_t{0xff});
        h.update(v);
        // spread the low bits so the additive combination does not cancel
        auto x = h.digest();
        x ^= x >> 33;
        x *= 0xff51afd7ed558ccdULL;
        x ^= x >> 33;
        return x;
    }

    const Bucket& bucket(const std::string& key) const { return *buckets_[bucket_of(key)]; }

    Bucket& writable(const std::string& key) {
        auto& slot = buckets_[bucket_of(key)];
        if (slot.use_count() > 1) slot = std::make_shared<const Bucket>(*slot);
        // sole owner now; the const is only there to protect snapshot holders
        return const_cast<Bucket&>(*slot);
    }

    std::array<std::shared_ptr<const Bucket>, kBuckets> buckets_;
    std::uint64_t hash_ = 0;
    std::uint64_t size_ = 0;
    std::uint64_t applied_ = 0;
};

}  // namespace kv
}  // namespace mrp
