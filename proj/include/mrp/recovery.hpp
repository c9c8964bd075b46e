#pragma once

#include "mrp/core.hpp"
#include "mrp/kv.hpp"
#include "mrp/merge.hpp"
#include "mrp/value.hpp"
#include "mrp/wire.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mrp {

/// Application snapshot tagged with the merge position it covers.
struct Checkpoint {
    std::uint64_t id = 0;
    std::map<GroupId, std::uint64_t> ring_slots;
    /// Instance holding each ring's next unconsumed slot. Lets the old
    /// recovery protocol know where to start fetching.
    std::map<GroupId, std::uint64_t> ring_instances;
    std::vector<std::uint8_t> state_blob;

    std::size_t size_bytes() const noexcept { return state_blob.size(); }
    std::uint64_t total_slots() const noexcept {
        std::uint64_t n = 0;
        for (const auto& [_, s] : ring_slots) n += s;
        return n;
    }
    bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Checkpoint file bytes. Ring instances follow the blob as an optional
/// trailer: ring_count:u16 | ring_count × (group:u16, instance:u64).
inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& cp) {
    wire::Writer w;
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>("MRCP"), 4));
    w.u16(kCheckpointVersion);
    w.u64(cp.id);
    w.u16(static_cast<std::uint16_t>(cp.ring_slots.size()));
    for (const auto& [g, s] : cp.ring_slots) {
        w.u16(g.value);
        w.u64(s);
    }
    w.u64(cp.state_blob.size());
    w.bytes(cp.state_blob);
    if (!cp.ring_instances.empty()) {
        w.u16(static_cast<std::uint16_t>(cp.ring_instances.size()));
        for (const auto& [g, i] : cp.ring_instances) {
            w.u16(g.value);
            w.u64(i);
        }
    }
    return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    try {
        wire::Reader r(bytes);
        auto magic = r.bytes(4);
        if (!std::equal(magic.begin(), magic.end(), "MRCP")) throw Error(Errc::MalformedFrame, "bad checkpoint magic");
        if (r.u16() != kCheckpointVersion) throw Error(Errc::MalformedFrame, "unsupported checkpoint version");
        Checkpoint cp;
        cp.id = r.u64();
        auto n = r.u16();
        for (std::uint16_t i = 0; i < n; ++i) {
            GroupId g{r.u16()};
            cp.ring_slots[g] = r.u64();
        }
        auto len = r.u64();
        if (len > r.remaining()) throw Error(Errc::MalformedFrame, "checkpoint blob truncated");
        auto blob = r.bytes(static_cast<std::size_t>(len));
        cp.state_blob.assign(blob.begin(), blob.end());
        if (!r.done()) {
            auto m = r.u16();
            for (std::uint16_t i = 0; i < m; ++i) {
                GroupId g{r.u16()};
                cp.ring_instances[g] = r.u64();
            }
        }
        if (!r.done()) throw Error(Errc::MalformedFrame, "trailing checkpoint bytes");
        return cp;
    } catch (const std::out_of_range&) {
        throw Error(Errc::MalformedFrame, "checkpoint truncated");
    }
}

inline std::string checkpoint_file_name(std::uint64_t id, NodeId node) {
    return "cp_" + std::to_string(id) + "_" + std::to_string(node.value) + ".mrcp";
}

/// Shared location all replicas write checkpoints to and recovering
/// replicas read from.
class CheckpointStore {
public:
    virtual ~CheckpointStore() = default;
    virtual void put(const Checkpoint& cp, NodeId node) = 0;
    /// Most advanced checkpoint (largest total slot count, then id) whose
    /// ring set is exactly `rings`.
    virtual std::optional<Checkpoint> latest(const std::vector<GroupId>& rings) const = 0;
    virtual std::size_t count() const = 0;

    void set_available(bool up) noexcept { available_ = up; }
    bool available() const noexcept { return available_; }

protected:
    void check_available() const {
        if (!available_) throw Error(Errc::StoreUnavailable);
    }
    static bool same_rings(const Checkpoint& cp, const std::vector<GroupId>& rings) {
        if (cp.ring_slots.size() != rings.size()) return false;
        for (auto g : rings)
            if (!cp.ring_slots.contains(g)) return false;
        return true;
    }
    static bool better(const Checkpoint& a, const std::optional<Checkpoint>& b) {
        if (!b) return true;
        if (a.total_slots() != b->total_slots()) return a.total_slots() > b->total_slots();
        return a.id > b->id;
    }

private:
    bool available_ = true;
};

class MemoryCheckpointStore final : public CheckpointStore {
public:
    void put(const Checkpoint& cp, NodeId node) override {
        check_available();
        // round-trip through the file encoding so both stores behave alike
        items_[{cp.id, node}] = std::make_shared<const std::vector<std::uint8_t>>(encode_checkpoint(cp));
    }
    std::optional<Checkpoint> latest(const std::vector<GroupId>& rings) const override {
        check_available();
        std::optional<Checkpoint> best;
        for (const auto& [_, bytes] : items_) {
            auto cp = decode_checkpoint(*bytes);
            if (same_rings(cp, rings) && better(cp, best)) best = std::move(cp);
        }
        return best;
    }
    std::size_t count() const override { return items_.size(); }

private:
    std::map<std::pair<std::uint64_t, NodeId>, std::shared_ptr<const std::vector<std::uint8_t>>> items_;
};

/// Directory of cp_<id>_<node>.mrcp files.
class DirectoryCheckpointStore final : public CheckpointStore {
public:
    explicit DirectoryCheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }
    const std::filesystem::path& dir() const noexcept { return dir_; }

    void put(const Checkpoint& cp, NodeId node) override {
        check_available();
        const auto bytes = encode_checkpoint(cp);
        const auto final_path = dir_ / checkpoint_file_name(cp.id, node);
        const auto tmp = final_path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error(Errc::StoreUnavailable, tmp);
            out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
            if (!out) throw Error(Errc::StoreUnavailable, tmp);
        }
        std::filesystem::rename(tmp, final_path);
    }

    std::optional<Checkpoint> latest(const std::vector<GroupId>& rings) const override {
        check_available();
        std::optional<Checkpoint> best;
        if (!std::filesystem::exists(dir_)) return best;
        for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
            if (entry.path().extension() != ".mrcp") continue;
            std::ifstream in(entry.path(), std::ios::binary);
            std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
            Checkpoint cp;
            try {
                cp = decode_checkpoint(bytes);
            } catch (const Error&) {
                continue;
            }
            if (same_rings(cp, rings) && better(cp, best)) best = std::move(cp);
        }
        return best;
    }

    std::size_t count() const override {
        if (!std::filesystem::exists(dir_)) return 0;
        std::size_t n = 0;
        for (const auto& entry : std::filesystem::directory_iterator(dir_))
            if (entry.path().extension() == ".mrcp") ++n;
        return n;
    }

private:
    std::filesystem::path dir_;
};

/// Builds a checkpoint from a replica's merge position and a copy-on-write
/// snapshot of its store.
inline Checkpoint make_checkpoint(std::uint64_t id, const MergeCursor& cursor, const kv::Store::Snapshot& snap) {
    Checkpoint cp;
    cp.id = id;
    cp.ring_slots = cursor.consumed_map();
    for (auto g : cursor.rings()) cp.ring_instances[g] = cursor.frontier_instance(g);
    cp.state_blob = snap.serialize();
    return cp;
}

/// Decisions cached by a recovering learner while it waits for a checkpoint.
class CacheBuffer {
public:
    struct Entry {
        GroupId group;
        std::uint64_t instance = 0;
        std::shared_ptr<const Value> value;
        std::uint64_t slot_base = 0;
    };

    static constexpr std::size_t kDefaultCapacity = 256u << 20;

    explicit CacheBuffer(std::vector<GroupId> rings, std::size_t capacity_bytes = kDefaultCapacity)
        : rings_(std::move(rings)), capacity_(capacity_bytes) {
        std::sort(rings_.begin(), rings_.end());
    }

    const std::vector<GroupId>& rings() const noexcept { return rings_; }
    const std::map<GroupId, std::uint64_t>& start_slots() const noexcept { return start_slots_; }
    const std::deque<Entry>& entries() const noexcept { return entries_; }
    std::size_t bytes_used() const noexcept { return bytes_; }
    std::size_t capacity_bytes() const noexcept { return capacity_; }
    std::uint64_t overflow_drops() const noexcept { return drops_; }

    /// True once every subscribed ring has a recorded start.
    bool started() const noexcept { return start_slots_.size() == rings_.size(); }

    /// Appends a decision. Each ring's entries must be gap-free; the first
    /// entry of a ring fixes its start.
    void append(GroupId g, std::uint64_t instance, const Value& v, std::uint64_t slot_base) {
        if (!std::binary_search(rings_.begin(), rings_.end(), g)) throw Error(Errc::UnknownGroup);
        auto [it, fresh] = next_slot_.try_emplace(g, slot_base);
        if (fresh) {
            start_slots_[g] = slot_base;
        } else if (slot_base != it->second) {
            throw Error(Errc::ValidityViolated, "cache gap in group " + std::to_string(g.value));
        }
        it->second = slot_base + v.slots();
        const auto sz = entry_bytes(v);
        entries_.push_back(Entry{g, instance, std::make_shared<const Value>(v), slot_base});
        bytes_ += sz;
        while (bytes_ > capacity_ && !entries_.empty()) drop_oldest();
    }

    /// Forgets everything recorded for `g` (after a ring log reset).
    void restart_ring(GroupId g) {
        std::erase_if(entries_, [&](const Entry& e) {
            if (e.group != g) return false;
            bytes_ -= entry_bytes(*e.value);
            return true;
        });
        start_slots_.erase(g);
        next_slot_.erase(g);
    }

private:
    static std::size_t entry_bytes(const Value& v) { return 32 + v.payload_bytes(); }

    void drop_oldest() {
        auto e = std::move(entries_.front());
        entries_.pop_front();
        bytes_ -= entry_bytes(*e.value);
        start_slots_[e.group] = e.slot_base + e.value->slots();
        ++drops_;
    }

    std::vector<GroupId> rings_;
    std::size_t capacity_;
    std::map<GroupId, std::uint64_t> start_slots_;
    std::map<GroupId, std::uint64_t> next_slot_;
    std::deque<Entry> entries_;
    std::size_t bytes_ = 0;
    std::uint64_t drops_ = 0;
};

enum class RecoveryPhase { Caching = 0, FetchingCheckpoint = 1, Replaying = 2, Live = 3 };

inline std::string_view to_string(RecoveryPhase p) {
    switch (p) {
        case RecoveryPhase::Caching: return "Caching";
        case RecoveryPhase::FetchingCheckpoint: return "FetchingCheckpoint";
        case RecoveryPhase::Replaying: return "Replaying";
        case RecoveryPhase::Live: return "Live";
    }
    return "?";
}

/// Forward-only phase tracker.
class RecoveryState {
public:
    RecoveryPhase phase() const noexcept { return phase_; }
    void advance(RecoveryPhase next) {
        if (static_cast<int>(next) < static_cast<int>(phase_))
            throw std::logic_error("recovery phase cannot move backwards");
        phase_ = next;
    }

private:
    RecoveryPhase phase_ = RecoveryPhase::Caching;
};

/// The checkpoint leaves no gap before the cache: for every ring the
/// checkpoint covers at least up to the cache start.
inline bool is_valid_checkpoint(const Checkpoint& cp, const CacheBuffer& cache) {
    if (cp.ring_slots.size() != cache.rings().size()) throw Error(Errc::SubscriptionMismatch);
    for (auto g : cache.rings())
        if (!cp.ring_slots.contains(g)) throw Error(Errc::SubscriptionMismatch);
    if (!cache.started()) return false;
    for (const auto& [g, start] : cache.start_slots())
        if (cp.ring_slots.at(g) < start) return false;
    return true;
}

/// Installs `cp` into `app` and `cursor`, then replays the cached decisions
/// the checkpoint does not cover. `on_delivery` sees every delivery applied.
template <typename OnDelivery>
void install_and_replay(const Checkpoint& cp, const CacheBuffer& cache, StateMachine& app, MergeCursor& cursor,
                        OnDelivery&& on_delivery) {
    if (!is_valid_checkpoint(cp, cache)) throw Error(Errc::ValidityViolated, "checkpoint does not reach cache start");
    app.restore(cp.state_blob);
    cursor.restore(cp.ring_slots);
    for (const auto& e : cache.entries()) cursor.enqueue_decision_at(e.group, e.instance, *e.value, e.slot_base);
    cursor.try_deliver([&](Delivery&& d) {
        auto reply = app.apply(d);
        on_delivery(d, reply);
    });
}

inline void install_and_replay(const Checkpoint& cp, const CacheBuffer& cache, StateMachine& app,
                               MergeCursor& cursor) {
    install_and_replay(cp, cache, app, cursor, [](const Delivery&, const Payload&) {});
}

}  // namespace mrp
