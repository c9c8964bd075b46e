#pragma once

#include "mrp/core.hpp"
#include "mrp/value.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <vector>

namespace mrp {

/// Position in the merged stream of the `ring_slot`-th slot of the ring at
/// `ring_index`, for `k` rings consumed `m` slots per turn.
constexpr std::uint64_t global_slot(std::uint64_t ring_index, std::uint64_t ring_slot, std::uint64_t k,
                                    std::uint64_t m) noexcept {
    return (ring_slot / m) * (k * m) + ring_index * m + (ring_slot % m);
}

/// Number of slots the ring at `ring_index` has contributed to the first
/// `position` slots of the merged stream (inverse view of global_slot).
constexpr std::uint64_t ring_share(std::uint64_t position, std::uint64_t ring_index, std::uint64_t k,
                                   std::uint64_t m) noexcept {
    const std::uint64_t round = k * m;
    const std::uint64_t rem = position % round;
    const std::uint64_t lo = ring_index * m;
    const std::uint64_t partial = rem <= lo ? 0 : std::min(rem - lo, m);
    return (position / round) * m + partial;
}

/// Deterministic round-robin merge of per-ring decision streams.
///
/// Each ring contributes M slots per turn, rings visited in ascending
/// GroupId order. App batches count one slot per payload; a Skip(n) counts n
/// slots and is consumed silently, possibly across several turns.
class MergeCursor {
public:
    MergeCursor(std::vector<GroupId> rings, std::uint64_t m) : m_(m) {
        if (rings.empty()) throw Error(Errc::EmptySubscription);
        if (m == 0) throw std::invalid_argument("M must be positive");
        std::sort(rings.begin(), rings.end());
        rings.erase(std::unique(rings.begin(), rings.end()), rings.end());
        for (auto g : rings) {
            index_.emplace(g, rings_.size());
            RingState r;
            r.group = g;
            rings_.push_back(std::move(r));
        }
    }

    std::vector<GroupId> rings() const {
        std::vector<GroupId> out;
        for (const auto& r : rings_) out.push_back(r.group);
        return out;
    }
    std::uint64_t m() const noexcept { return m_; }
    std::uint64_t next_global_slot() const noexcept { return next_global_; }
    bool subscribes(GroupId g) const noexcept { return index_.contains(g); }

    std::uint64_t consumed_slots(GroupId g) const { return ring(g).consumed; }
    std::uint64_t pending_slots(GroupId g) const { return ring(g).pending_slots; }
    std::uint64_t expected_instance(GroupId g) const { return ring(g).next_instance; }

    /// Instance holding the ring's next unconsumed slot.
    std::uint64_t frontier_instance(GroupId g) const {
        const auto& r = ring(g);
        return r.queue.empty() ? r.next_instance : r.queue.front().instance;
    }

    std::map<GroupId, std::uint64_t> consumed_map() const {
        std::map<GroupId, std::uint64_t> out;
        for (const auto& r : rings_) out[r.group] = r.consumed;
        return out;
    }

    /// Ring whose turn it currently is.
    GroupId current_ring() const noexcept { return rings_[turn_].group; }

    void enqueue_decision(GroupId g, std::uint64_t instance, const Value& v) {
        auto& r = ring(g);
        if (instance != r.next_instance) {
            throw Error(Errc::OutOfOrderInstance, "group " + std::to_string(g.value) + " expected " +
                                                      std::to_string(r.next_instance) + " got " +
                                                      std::to_string(instance));
        }
        push(r, instance, std::make_shared<const Value>(v), 0);
    }

    /// Enqueues a decision whose first slot is `slot_base` in the ring's slot
    /// sequence. Slots below the ring's enqueued frontier are dropped; used
    /// when resuming from a checkpoint.
    void enqueue_decision_at(GroupId g, std::uint64_t instance, const Value& v, std::uint64_t slot_base) {
        auto& r = ring(g);
        const std::uint64_t frontier = r.consumed + r.pending_slots;
        const std::uint64_t end = slot_base + v.slots();
        r.next_instance = instance;
        if (end <= frontier) {
            r.next_instance = instance + 1;
            return;
        }
        if (slot_base > frontier) {
            throw Error(Errc::ValidityViolated, "gap before slot " + std::to_string(slot_base) + " in group " +
                                                    std::to_string(g.value));
        }
        push(r, instance, std::make_shared<const Value>(v), frontier - slot_base);
    }

    /// Repositions an empty cursor at the given per-ring consumed counts.
    /// The counts must describe a reachable round-robin position.
    void restore(const std::map<GroupId, std::uint64_t>& consumed) {
        std::uint64_t total = 0;
        for (auto& r : rings_) {
            auto it = consumed.find(r.group);
            if (it == consumed.end()) throw Error(Errc::SubscriptionMismatch);
            r.consumed = it->second;
            r.queue.clear();
            r.pending_slots = 0;
            total += r.consumed;
        }
        if (consumed.size() != rings_.size()) throw Error(Errc::SubscriptionMismatch);
        const auto k = static_cast<std::uint64_t>(rings_.size());
        for (std::size_t i = 0; i < rings_.size(); ++i) {
            if (ring_share(total, i, k, m_) != rings_[i].consumed)
                throw Error(Errc::ValidityViolated, "inconsistent merge position");
        }
        next_global_ = total;
        turn_ = static_cast<std::size_t>((total / m_) % k);
        in_turn_ = total % m_;
    }

    /// Consumes as many slots as possible in round-robin order. Stops as soon
    /// as the ring whose turn it is has nothing pending.
    std::vector<Delivery> try_deliver() {
        std::vector<Delivery> out;
        try_deliver([&](Delivery&& d) { out.push_back(std::move(d)); });
        return out;
    }

    template <typename Sink>
    std::uint64_t try_deliver(Sink&& sink) {
        std::uint64_t emitted = 0;
        while (true) {
            auto& r = rings_[turn_];
            if (r.queue.empty()) break;
            auto& e = r.queue.front();
            const std::uint64_t available = e.value->slots() - e.offset;
            const std::uint64_t take = std::min(available, m_ - in_turn_);
            if (e.value->is_app()) {
                const auto& batch = e.value->batch();
                for (std::uint64_t i = 0; i < take; ++i) {
                    const auto& s = batch[e.offset + i];
                    sink(Delivery{r.group, e.instance, next_global_ + i, s.id, s.payload, r.consumed + i});
                    ++emitted;
                }
            }
            next_global_ += take;
            e.offset += take;
            r.consumed += take;
            r.pending_slots -= take;
            in_turn_ += take;
            if (e.offset == e.value->slots()) r.queue.pop_front();
            if (in_turn_ == m_) {
                in_turn_ = 0;
                turn_ = (turn_ + 1) % rings_.size();
            }
        }
        return emitted;
    }

private:
    struct Entry {
        std::uint64_t instance;
        std::shared_ptr<const Value> value;
        std::uint64_t offset;
    };
    struct RingState {
        GroupId group;
        std::uint64_t next_instance = 0;
        std::uint64_t consumed = 0;
        std::uint64_t pending_slots = 0;
        std::deque<Entry> queue;
    };

    void push(RingState& r, std::uint64_t instance, std::shared_ptr<const Value> v, std::uint64_t offset) {
        if (v->slots() == 0) throw std::invalid_argument("decision without slots");
        r.pending_slots += v->slots() - offset;
        r.queue.push_back(Entry{instance, std::move(v), offset});
        r.next_instance = instance + 1;
    }

    RingState& ring(GroupId g) {
        auto it = index_.find(g);
        if (it == index_.end()) throw Error(Errc::UnknownGroup, std::to_string(g.value));
        return rings_[it->second];
    }
    const RingState& ring(GroupId g) const { return const_cast<MergeCursor*>(this)->ring(g); }

    std::uint64_t m_;
    std::vector<RingState> rings_;
    std::map<GroupId, std::size_t> index_;
    std::size_t turn_ = 0;
    std::uint64_t in_turn_ = 0;
    std::uint64_t next_global_ = 0;
};

}  // namespace mrp
