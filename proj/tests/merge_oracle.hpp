#pragma once

// Brute-force merge: expands every ring into its slot sequence (a message or
// a hole for skipped slots) and walks the round-robin schedule slot by slot
// until the first slot that has not been decided yet.

#include "mrp/merge.hpp"

#include <random>

namespace mrp::oracle {

struct ReferenceMerge {
    struct Slot {
        bool hole;
        MessageId id;
        Payload payload;
        std::uint64_t instance;
    };
    std::vector<std::vector<Slot>> slots;  // by ring index, rings sorted

    explicit ReferenceMerge(std::size_t rings) : slots(rings) {}

    void add(std::size_t ring, std::uint64_t instance, const Value& v) {
        for (std::uint64_t s = 0; s < v.slots(); ++s) {
            if (v.is_app())
                slots[ring].push_back({false, v.batch()[s].id, v.batch()[s].payload, instance});
            else
                slots[ring].push_back({true, {}, {}, instance});
        }
    }

    std::vector<Delivery> run(const std::vector<GroupId>& rings, std::uint64_t m) const {
        std::vector<Delivery> out;
        std::vector<std::size_t> pos(rings.size(), 0);
        std::uint64_t global = 0;
        for (std::size_t turn = 0;; turn = (turn + 1) % rings.size()) {
            for (std::uint64_t i = 0; i < m; ++i) {
                if (pos[turn] >= slots[turn].size()) return out;
                const auto& s = slots[turn][pos[turn]];
                if (!s.hole) out.push_back(Delivery{rings[turn], s.instance, global, s.id, s.payload, pos[turn]});
                ++pos[turn];
                ++global;
            }
        }
    }
};

/// Random decision streams for `k` rings, each at most `max_slots` slots
/// long, with random payload bytes.
inline std::vector<std::vector<Value>> random_streams(std::mt19937_64& rng, std::size_t k, std::uint64_t max_slots) {
    std::vector<std::vector<Value>> streams(k);
    std::uint64_t seq = 0;
    for (auto& s : streams) {
        const std::uint64_t budget = rng() % (max_slots + 1);
        std::uint64_t used = 0;
        while (used < budget) {
            Value v;
            if (rng() % 3 == 0) {
                v = Value::skip(1 + rng() % std::min<std::uint64_t>(20, budget - used));
            } else {
                std::vector<Submission> b;
                const auto n = 1 + rng() % std::min<std::uint64_t>(4, budget - used);
                for (std::uint64_t j = 0; j < n; ++j) {
                    Payload p(1 + rng() % 24);
                    for (auto& byte : p) byte = static_cast<std::uint8_t>(rng());
                    b.push_back({MessageId{1, seq++}, std::move(p)});
                }
                v = Value::app(std::move(b));
            }
            used += v.slots();
            s.push_back(std::move(v));
        }
    }
    return streams;
}

}  // namespace mrp::oracle
