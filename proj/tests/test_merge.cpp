// Deterministic merge of per-ring decision streams.

#include "mrp/merge.hpp"

#include "merge_oracle.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mrp;

namespace {

constexpr GroupId g1{1}, g2{2}, g3{3};

Value one(std::uint64_t seq) {
    return Value::app({Submission{MessageId{1, seq}, Payload{static_cast<std::uint8_t>(seq)}}});
}

std::vector<std::uint64_t> seqs(const std::vector<Delivery>& ds) {
    std::vector<std::uint64_t> out;
    for (const auto& d : ds) out.push_back(d.id.seq);
    return out;
}

}  // namespace

TEST(GlobalSlot, InterleavesRingsInTurnsOfM) {
    EXPECT_EQ(global_slot(0, 0, 3, 2), 0u);
    EXPECT_EQ(global_slot(0, 1, 3, 2), 1u);
    EXPECT_EQ(global_slot(1, 0, 3, 2), 2u);
    EXPECT_EQ(global_slot(2, 5, 3, 2), 17u);
    EXPECT_EQ(global_slot(1, 3, 2, 1), 7u);
}

TEST(GlobalSlot, RingShareInvertsGlobalSlot) {
    for (std::uint64_t k = 1; k <= 5; ++k)
        for (std::uint64_t m = 1; m <= 4; ++m)
            for (std::uint64_t i = 0; i < k; ++i)
                for (std::uint64_t s = 0; s < 40; ++s) {
                    const auto p = global_slot(i, s, k, m);
                    EXPECT_EQ(ring_share(p, i, k, m), s);
                    EXPECT_EQ(ring_share(p + 1, i, k, m), s + 1);
                }
}

TEST(MergeCursor, WorkedExampleWithSkip) {
    MergeCursor c({g2, g1}, 1);
    c.enqueue_decision(g1, 0, one('a'));
    c.enqueue_decision(g1, 1, one('b'));
    c.enqueue_decision(g2, 0, one('c'));
    c.enqueue_decision(g2, 1, Value::skip(1));
    c.enqueue_decision(g2, 2, one('d'));
    auto first = c.try_deliver();
    EXPECT_EQ(seqs(first), (std::vector<std::uint64_t>{'a', 'c', 'b'}));
    // g2's skip was consumed silently; the merge now waits on g1
    EXPECT_EQ(c.next_global_slot(), 4u);
    EXPECT_EQ(c.current_ring(), g1);
    c.enqueue_decision(g1, 2, one('e'));
    auto second = c.try_deliver();
    EXPECT_EQ(seqs(second), (std::vector<std::uint64_t>{'e', 'd'}));
    EXPECT_EQ(second[0].global_slot, 4u);
    EXPECT_EQ(second[1].global_slot, 5u);
    EXPECT_EQ(second[1].ring_slot, 2u);
}

TEST(MergeCursor, SkipCreditsItsCountAcrossTurns) {
    MergeCursor c({g1, g2}, 4);
    c.enqueue_decision(g1, 0, Value::skip(600));
    c.try_deliver();
    EXPECT_EQ(c.consumed_slots(g1), 4u);
    EXPECT_EQ(c.pending_slots(g1), 596u);
    for (std::uint64_t i = 0; i < 150; ++i) c.enqueue_decision(g2, i, Value::skip(4));
    c.try_deliver();
    EXPECT_EQ(c.consumed_slots(g1), 600u);
    EXPECT_EQ(c.consumed_slots(g2), 600u);
    EXPECT_EQ(c.next_global_slot(), 1200u);
}

TEST(MergeCursor, AppBatchCountsOneSlotPerPayload) {
    MergeCursor c({g1}, 1);
    std::vector<Submission> batch;
    for (std::uint64_t i = 0; i < 3; ++i) batch.push_back({MessageId{1, i}, {}});
    c.enqueue_decision(g1, 0, Value::app(batch));
    auto d = c.try_deliver();
    ASSERT_EQ(d.size(), 3u);
    EXPECT_EQ(c.consumed_slots(g1), 3u);
    EXPECT_EQ(d[2].global_slot, 2u);
    EXPECT_EQ(d[2].ring_instance, 0u);
}

TEST(MergeCursor, RejectsOutOfOrderAndUnknownRings) {
    MergeCursor c({g1, g2}, 1);
    c.enqueue_decision(g1, 0, one(1));
    try {
        c.enqueue_decision(g1, 2, one(2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::OutOfOrderInstance);
    }
    EXPECT_THROW(c.enqueue_decision(g3, 0, one(3)), Error);
    EXPECT_THROW(MergeCursor({}, 1), Error);
}

TEST(MergeCursor, BlocksOnTheRingWhoseTurnItIs) {
    MergeCursor c({g1, g2, g3}, 2);
    for (std::uint64_t i = 0; i < 10; ++i) {
        c.enqueue_decision(g1, i, one(i));
        c.enqueue_decision(g3, i, one(100 + i));
    }
    auto d = c.try_deliver();
    EXPECT_EQ(seqs(d), (std::vector<std::uint64_t>{0, 1}));
    EXPECT_EQ(c.current_ring(), g2);
    c.enqueue_decision(g2, 0, one(50));
    EXPECT_EQ(seqs(c.try_deliver()), std::vector<std::uint64_t>{50});
    EXPECT_EQ(c.current_ring(), g2);  // g2 still owes one slot of its turn
    EXPECT_TRUE(c.try_deliver().empty());
    c.enqueue_decision(g2, 1, one(51));
    d = c.try_deliver();
    EXPECT_EQ(seqs(d), (std::vector<std::uint64_t>{51, 100, 101, 2, 3}));
}

TEST(MergeCursor, DuplicateRingsAreMerged) {
    MergeCursor c({g2, g1, g2}, 1);
    EXPECT_EQ(c.rings(), (std::vector<GroupId>{g1, g2}));
}

TEST(MergeCursor, MatchesReferenceMergeOnRandomStreams) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 1 + rng() % 8;
        const std::uint64_t m = 1 + rng() % 4;
        std::vector<GroupId> rings;
        for (std::size_t i = 0; i < k; ++i) rings.push_back(GroupId{static_cast<std::uint16_t>(10 + 3 * i)});
        MergeCursor cursor(rings, m);
        const auto streams = oracle::random_streams(rng, k, 200);
        oracle::ReferenceMerge ref(k);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t d = 0; d < streams[i].size(); ++d) ref.add(i, d, streams[i][d]);
        std::vector<std::size_t> next(k, 0);
        std::vector<Delivery> got;
        while (true) {
            std::vector<std::size_t> open;
            for (std::size_t i = 0; i < k; ++i)
                if (next[i] < streams[i].size()) open.push_back(i);
            if (open.empty()) break;
            const auto i = open[rng() % open.size()];
            cursor.enqueue_decision(rings[i], next[i], streams[i][next[i]]);
            ++next[i];
            if (rng() % 2) {
                auto d = cursor.try_deliver();
                got.insert(got.end(), d.begin(), d.end());
            }
        }
        auto d = cursor.try_deliver();
        got.insert(got.end(), d.begin(), d.end());

        const auto want = ref.run(rings, m);
        ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
        for (std::size_t i = 0; i < got.size(); ++i) {
            ASSERT_EQ(got[i].id, want[i].id) << "trial " << trial << " pos " << i;
            ASSERT_EQ(got[i].group, want[i].group);
            ASSERT_EQ(got[i].payload, want[i].payload);
            ASSERT_EQ(got[i].global_slot, want[i].global_slot);
            ASSERT_EQ(got[i].ring_slot, want[i].ring_slot);
            ASSERT_EQ(got[i].ring_instance, want[i].ring_instance);
        }
        // slot conservation: consumed + pending equals what was enqueued
        for (std::size_t i = 0; i < k; ++i)
            EXPECT_EQ(cursor.consumed_slots(rings[i]) + cursor.pending_slots(rings[i]), ref.slots[i].size());
        std::uint64_t consumed = 0;
        for (auto [_, n] : cursor.consumed_map()) consumed += n;
        EXPECT_EQ(consumed, cursor.next_global_slot());
    }
}

TEST(MergeCursor, RestoreResumesAtTheSamePosition) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const std::uint64_t m = 1 + rng() % 3;
        MergeCursor a({g1, g2, g3}, m);
        std::vector<std::vector<Value>> streams(3);
        std::uint64_t seq = 0;
        for (auto& s : streams)
            for (int i = 0; i < 30; ++i)
                s.push_back(rng() % 4 == 0 ? Value::skip(1 + rng() % 5) : one(seq++));
        const GroupId gs[3] = {g1, g2, g3};
        // first half in a, then snapshot its position into b
        const std::size_t half = 15 + rng() % 10;
        for (int r = 0; r < 3; ++r)
            for (std::size_t i = 0; i < half; ++i) a.enqueue_decision(gs[r], i, streams[r][i]);
        a.try_deliver();
        MergeCursor b({g1, g2, g3}, m);
        b.restore(a.consumed_map());
        EXPECT_EQ(b.next_global_slot(), a.next_global_slot());
        EXPECT_EQ(b.current_ring(), a.current_ring());
        // b re-reads every decision with its slot base; a continues normally
        std::vector<std::uint64_t> base(3, 0);
        for (int r = 0; r < 3; ++r)
            for (std::size_t i = 0; i < streams[r].size(); ++i) {
                if (i >= half) a.enqueue_decision(gs[r], i, streams[r][i]);
                b.enqueue_decision_at(gs[r], i, streams[r][i], base[r]);
                base[r] += streams[r][i].slots();
            }
        auto da = a.try_deliver();
        auto db = b.try_deliver();
        ASSERT_EQ(seqs(da), seqs(db)) << "trial " << trial;
        EXPECT_EQ(a.consumed_map(), b.consumed_map());
    }
}

TEST(MergeCursor, RestoreRejectsUnreachablePositions) {
    MergeCursor c({g1, g2}, 2);
    EXPECT_THROW(c.restore({{g1, 1}, {g2, 3}}), Error);
    EXPECT_THROW(c.restore({{g1, 2}}), Error);
    EXPECT_NO_THROW(c.restore({{g1, 4}, {g2, 3}}));
    EXPECT_EQ(c.current_ring(), g2);
}
