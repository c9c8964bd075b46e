// Checkpoints, the decision cache and checkpoint installation.

#include "mrp/recovery.hpp"

#include "recovery_oracle.hpp"

#include <gtest/gtest.h>

using namespace mrp;

namespace {

constexpr GroupId g1{1}, g2{2};

Value put(const std::string& key, const std::string& value, std::uint64_t seq) {
    kv::Command c{kv::Op::Insert, key, value, {}, 0};
    return Value::app({Submission{MessageId{3, seq}, kv::encode(c)}});
}

Checkpoint checkpoint(std::uint64_t s1, std::uint64_t s2, std::vector<std::uint8_t> blob = kv::Store().snapshot()) {
    Checkpoint cp;
    cp.id = 1;
    cp.ring_slots = {{g1, s1}, {g2, s2}};
    cp.state_blob = std::move(blob);
    return cp;
}

}  // namespace

TEST(Checkpoint, FileEncodingRoundTrips) {
    Checkpoint cp;
    cp.id = 42;
    cp.ring_slots = {{g1, 1000}, {g2, 2000}};
    cp.ring_instances = {{g1, 17}, {g2, 30}};
    cp.state_blob = {1, 2, 3, 4, 5};
    const auto bytes = encode_checkpoint(cp);
    EXPECT_TRUE(std::equal(bytes.begin(), bytes.begin() + 4, "MRCP"));
    EXPECT_EQ(bytes[4], 0);
    EXPECT_EQ(bytes[5], 1);  // version
    EXPECT_EQ(decode_checkpoint(bytes), cp);

    cp.ring_instances.clear();
    EXPECT_EQ(decode_checkpoint(encode_checkpoint(cp)), cp);

    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), Error);
    auto cut = bytes;
    cut.resize(20);
    EXPECT_THROW(decode_checkpoint(cut), Error);
    EXPECT_EQ(checkpoint_file_name(7, NodeId{3}), "cp_7_3.mrcp");
}

TEST(Checkpoint, StoresPickTheMostAdvancedMatchingCheckpoint) {
    const auto dir = std::filesystem::temp_directory_path() / "mrp_cp_store_test";
    std::filesystem::remove_all(dir);
    DirectoryCheckpointStore disk(dir);
    MemoryCheckpointStore mem;
    for (CheckpointStore* s : {static_cast<CheckpointStore*>(&disk), static_cast<CheckpointStore*>(&mem)}) {
        auto a = checkpoint(10, 10);
        a.id = 1;
        auto b = checkpoint(20, 15);
        b.id = 2;
        auto other = checkpoint(99, 99);
        other.ring_slots = {{g1, 500}};
        other.id = 3;
        s->put(a, NodeId{1});
        s->put(b, NodeId{2});
        s->put(other, NodeId{1});
        EXPECT_EQ(s->count(), 3u);
        EXPECT_EQ(s->latest({g1, g2})->id, 2u);
        EXPECT_EQ(s->latest({g1})->id, 3u);
        EXPECT_FALSE(s->latest({g2}));
        s->set_available(false);
        try {
            s->latest({g1, g2});
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::StoreUnavailable);
        }
        EXPECT_THROW(s->put(a, NodeId{4}), Error);
    }
    EXPECT_TRUE(std::filesystem::exists(dir / "cp_2_2.mrcp"));
    std::filesystem::remove_all(dir);
}

TEST(CacheBuffer, ValidityComparesCheckpointAgainstCacheStart) {
    CacheBuffer cache({g1, g2});
    cache.append(g1, 10, Value::skip(4), 100);
    EXPECT_FALSE(cache.started());
    EXPECT_FALSE(is_valid_checkpoint(checkpoint(200, 200), cache));
    cache.append(g2, 3, Value::skip(4), 50);
    EXPECT_TRUE(cache.started());
    EXPECT_TRUE(is_valid_checkpoint(checkpoint(100, 50), cache));   // exactly at the start
    EXPECT_TRUE(is_valid_checkpoint(checkpoint(103, 60), cache));   // overlapping
    EXPECT_FALSE(is_valid_checkpoint(checkpoint(99, 60), cache));   // one slot short on g1
    EXPECT_FALSE(is_valid_checkpoint(checkpoint(150, 49), cache));  // one slot short on g2

    Checkpoint wrong;
    wrong.ring_slots = {{g1, 500}};
    try {
        is_valid_checkpoint(wrong, cache);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::SubscriptionMismatch);
    }
}

TEST(CacheBuffer, RejectsGapsAndUnknownRings) {
    CacheBuffer cache({g1});
    cache.append(g1, 0, Value::skip(3), 0);
    cache.append(g1, 1, Value::skip(2), 3);
    try {
        cache.append(g1, 3, Value::skip(1), 9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ValidityViolated);
    }
    EXPECT_THROW(cache.append(g2, 0, Value::skip(1), 0), Error);
}

TEST(CacheBuffer, OverflowDropsOldestAndMovesStart) {
    CacheBuffer cache({g1}, 32 * 3);
    for (std::uint64_t i = 0; i < 5; ++i) cache.append(g1, i, Value::skip(10), 10 * i);
    EXPECT_EQ(cache.entries().size(), 3u);
    EXPECT_EQ(cache.overflow_drops(), 2u);
    EXPECT_EQ(cache.start_slots().at(g1), 20u);
    cache.restart_ring(g1);
    EXPECT_FALSE(cache.started());
    EXPECT_EQ(cache.bytes_used(), 0u);
}

TEST(RecoveryState, PhasesOnlyMoveForward) {
    RecoveryState s;
    EXPECT_EQ(s.phase(), RecoveryPhase::Caching);
    s.advance(RecoveryPhase::FetchingCheckpoint);
    s.advance(RecoveryPhase::Replaying);
    EXPECT_THROW(s.advance(RecoveryPhase::Caching), std::logic_error);
    s.advance(RecoveryPhase::Live);
    EXPECT_EQ(to_string(s.phase()), "Live");
}

TEST(InstallAndReplay, SkipsWhatTheCheckpointAlreadyCovers) {
    // g1 decisions: a, b, c (one slot each); g2: d, e, f; M = 1
    kv::Store donor;
    MergeCursor donor_cursor({g1, g2}, 1);
    std::vector<Value> r1{put("a", "1", 0), put("b", "2", 1), put("c", "3", 2)};
    std::vector<Value> r2{put("d", "4", 3), put("e", "5", 4), put("f", "6", 5)};
    donor_cursor.enqueue_decision(g1, 0, r1[0]);
    donor_cursor.enqueue_decision(g2, 0, r2[0]);
    donor_cursor.enqueue_decision(g1, 1, r1[1]);
    for (auto& d : donor_cursor.try_deliver()) donor.apply(d);
    // checkpoint after a, d, b: g1 consumed 2, g2 consumed 1
    const auto cp = make_checkpoint(5, donor_cursor, donor.take_snapshot());
    EXPECT_EQ(cp.ring_slots, (std::map<GroupId, std::uint64_t>{{g1, 2}, {g2, 1}}));

    CacheBuffer cache({g1, g2});
    cache.append(g1, 1, r1[1], 1);  // overlaps the checkpoint
    cache.append(g1, 2, r1[2], 2);
    cache.append(g2, 1, r2[1], 1);  // starts exactly at the checkpoint
    cache.append(g2, 2, r2[2], 2);

    kv::Store replica;
    MergeCursor cursor({g1, g2}, 1);
    std::vector<std::uint64_t> replayed;
    install_and_replay(cp, cache, replica, cursor,
                       [&](const Delivery& d, const Payload&) { replayed.push_back(d.id.seq); });
    EXPECT_EQ(replayed, (std::vector<std::uint64_t>{4, 2, 5}));
    EXPECT_EQ(replica.size(), 6u);
    EXPECT_EQ(cursor.next_global_slot(), 6u);
}

TEST(InstallAndReplay, InvalidCheckpointIsRefused) {
    CacheBuffer cache({g1, g2});
    cache.append(g1, 5, Value::skip(1), 5);
    cache.append(g2, 5, Value::skip(1), 5);
    kv::Store replica;
    MergeCursor cursor({g1, g2}, 1);
    try {
        install_and_replay(checkpoint(4, 5), cache, replica, cursor);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ValidityViolated);
    }
    EXPECT_EQ(replica.applied(), 0u);
}

TEST(InstallAndReplay, SucceedsExactlyForValidCheckpointsAndMatchesOracle) {
    std::mt19937_64 rng(77);
    int valid = 0;
    for (int trial = 0; trial < 300; ++trial) {
        auto rc = oracle::make_recovery_case(rng);
        bool valid_now = false;
        ASSERT_NO_THROW(valid_now = is_valid_checkpoint(rc.checkpoint, rc.cache));
        ASSERT_EQ(valid_now, rc.expect_valid) << "trial " << trial;
        kv::Store replica;
        MergeCursor cursor(rc.rings, rc.m);
        bool ok = true;
        try {
            install_and_replay(rc.checkpoint, rc.cache, replica, cursor);
        } catch (const Error& e) {
            ASSERT_EQ(e.code(), Errc::ValidityViolated);
            ok = false;
        }
        ASSERT_EQ(ok, rc.expect_valid) << "trial " << trial;
        if (ok) {
            ++valid;
            EXPECT_EQ(replica.state_hash(), rc.expect_hash) << "trial " << trial;
            EXPECT_EQ(cursor.next_global_slot(), rc.expect_end) << "trial " << trial;
        }
    }
    EXPECT_GT(valid, 30);
    EXPECT_LT(valid, 270);
}
