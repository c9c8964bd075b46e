#pragma once

// Random (checkpoint, cache) pairs over key-value command streams, with the
// expected replica state computed by applying the merged stream directly.

#include "mrp/kv.hpp"
#include "mrp/merge.hpp"
#include "mrp/recovery.hpp"

#include <random>

namespace mrp::oracle {

struct RecoveryCase {
    std::vector<GroupId> rings;
    std::uint64_t m = 1;
    Checkpoint checkpoint;
    CacheBuffer cache{{}};
    bool expect_valid = false;
    std::uint64_t expect_hash = 0;  // state after every deliverable slot
    std::uint64_t expect_end = 0;   // merged position after replay
};

struct RingStream {
    struct Decision {
        std::uint64_t instance;
        Value value;
        std::uint64_t slot_base;
    };
    std::vector<Decision> decisions;
    std::uint64_t slots = 0;
};

inline RecoveryCase make_recovery_case(std::mt19937_64& rng) {
    RecoveryCase rc;
    const std::size_t k = 1 + rng() % 4;
    rc.m = 1 + rng() % 3;
    for (std::size_t i = 0; i < k; ++i) rc.rings.push_back(GroupId{static_cast<std::uint16_t>(1 + i)});

    std::uint64_t seq = 0;
    std::vector<RingStream> streams(k);
    for (auto& s : streams) {
        const auto n = 5 + rng() % 40;
        for (std::uint64_t i = 0; i < n; ++i) {
            Value v;
            if (rng() % 4 == 0) {
                v = Value::skip(1 + rng() % 6);
            } else {
                std::vector<Submission> batch;
                const auto b = 1 + rng() % 3;
                for (std::uint64_t j = 0; j < b; ++j) {
                    kv::Command c;
                    c.op = static_cast<kv::Op>(1 + rng() % 4);
                    c.key = "k" + std::to_string(rng() % 12);
                    c.value = "v" + std::to_string(seq);
                    batch.push_back({MessageId{1, seq++}, kv::encode(c)});
                }
                v = Value::app(std::move(batch));
            }
            s.decisions.push_back({i, v, s.slots});
            s.slots += v.slots();
        }
    }

    // reference: the full merged stream, applied slot by slot
    struct Step {
        std::size_t ring;
        const Submission* sub;  // null for a skipped slot
    };
    std::vector<Step> merged;
    {
        std::vector<std::pair<std::size_t, std::uint64_t>> pos(k, {0, 0});  // decision, offset
        for (std::size_t turn = 0;; turn = (turn + 1) % k) {
            bool stop = false;
            for (std::uint64_t i = 0; i < rc.m && !stop; ++i) {
                auto& [d, off] = pos[turn];
                if (d >= streams[turn].decisions.size()) {
                    stop = true;
                    break;
                }
                const auto& v = streams[turn].decisions[d].value;
                merged.push_back({turn, v.is_app() ? &v.batch()[off] : nullptr});
                if (++off == v.slots()) {
                    ++d;
                    off = 0;
                }
            }
            if (stop) break;
        }
    }
    auto state_at = [&](std::uint64_t position) {
        kv::Store s;
        for (std::uint64_t p = 0; p < position; ++p) {
            if (!merged[p].sub) continue;
            Delivery d;
            d.group = rc.rings[merged[p].ring];
            d.id = merged[p].sub->id;
            d.payload = merged[p].sub->payload;
            s.apply(d);
        }
        return s;
    };
    rc.expect_end = merged.size();
    rc.expect_hash = state_at(merged.size()).state_hash();

    // checkpoint at a random reachable position
    const std::uint64_t cp_pos = rng() % (merged.size() + 1);
    rc.checkpoint.id = 1 + rng() % 100;
    for (std::size_t i = 0; i < k; ++i) rc.checkpoint.ring_slots[rc.rings[i]] = ring_share(cp_pos, i, k, rc.m);
    rc.checkpoint.state_blob = state_at(cp_pos).snapshot();

    // cache: each ring from a random decision boundary to the end; sometimes
    // a ring has not been cached at all
    rc.cache = CacheBuffer(rc.rings);
    rc.expect_valid = true;
    for (std::size_t i = 0; i < k; ++i) {
        const auto& ds = streams[i].decisions;
        if (rng() % 20 == 0) {
            rc.expect_valid = false;
            continue;
        }
        const std::size_t from = rng() % ds.size();
        for (std::size_t d = from; d < ds.size(); ++d)
            rc.cache.append(rc.rings[i], ds[d].instance, ds[d].value, ds[d].slot_base);
        if (rc.checkpoint.ring_slots[rc.rings[i]] < ds[from].slot_base) rc.expect_valid = false;
    }
    return rc;
}

}  // namespace mrp::oracle
