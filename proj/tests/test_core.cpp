// Vocabulary types, wire codec, metrics, key-value store, scenario parsing
// and the membership registry.

#include "mrp/kv.hpp"
#include "mrp/metrics.hpp"
#include "mrp/scenario.hpp"
#include "mrp/sim/bundled.hpp"
#include "mrp/topology.hpp"
#include "mrp/wire.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace mrp;

namespace {

Payload bytes(std::string_view s) { return Payload(s.begin(), s.end()); }

Value app(std::initializer_list<std::pair<std::uint64_t, std::string_view>> items) {
    std::vector<Submission> batch;
    for (auto [seq, text] : items) batch.push_back(Submission{MessageId{7, seq}, bytes(text)});
    return Value::app(std::move(batch));
}

Time ms(double v) { return from_millis(v); }

}  // namespace

// ------------------------------------------------------------------ values

TEST(Value, SlotsCountPayloadsOrSkipCount) {
    EXPECT_EQ(app({{1, "a"}, {2, "b"}, {3, "c"}}).slots(), 3u);
    EXPECT_EQ(Value::skip(600).slots(), 600u);
    EXPECT_EQ(Value{}.slots(), 0u);
    EXPECT_THROW(Value::skip(0), std::invalid_argument);
    EXPECT_THROW(Value::app({}), std::invalid_argument);
}

TEST(Ballot, OrdersByRoundThenNode) {
    EXPECT_LT((Ballot{0, NodeId{9}}), (Ballot{1, NodeId{1}}));
    EXPECT_LT((Ballot{1, NodeId{1}}), (Ballot{1, NodeId{2}}));
}

// ------------------------------------------------------------------- wire

TEST(Wire, HeaderLayoutIsBigEndian) {
    wire::Frame f;
    f.type = wire::FrameType::Phase2;
    f.group = GroupId{0x0102};
    f.ballot = Ballot{0x03040506, NodeId{0x0708}};
    f.instance = 0x1122334455667788ULL;
    f.votes = 2;
    f.value = Value::skip(5);
    const auto b = wire::encode(f);
    ASSERT_GE(b.size(), 4 + wire::kHeaderBytes);
    const std::uint32_t len = (b[0] << 24) | (b[1] << 16) | (b[2] << 8) | b[3];
    EXPECT_EQ(len, b.size() - 4);
    EXPECT_EQ(b[4], 3);  // PHASE2
    EXPECT_EQ(b[5], 0x01);
    EXPECT_EQ(b[6], 0x02);
    EXPECT_EQ(b[7], 0x03);
    EXPECT_EQ(b[10], 0x06);
    EXPECT_EQ(b[11], 0x07);
    EXPECT_EQ(b[12], 0x08);
    EXPECT_EQ(b[13], 0x11);
    EXPECT_EQ(b[20], 0x88);
    EXPECT_EQ(b[21], 2);  // votes
    EXPECT_EQ(b[22], 2);  // value kind Skip
    // skip body: count as u64
    EXPECT_EQ(b[30], 5);
}

TEST(Wire, AppBodyIsCountThenLengthPrefixedEntries) {
    wire::Frame f;
    f.type = wire::FrameType::ClientSubmit;
    f.value = app({{1, "xy"}});
    const auto b = wire::encode(f);
    const std::size_t body = 4 + wire::kHeaderBytes;
    EXPECT_EQ(b[body], 0);
    EXPECT_EQ(b[body + 1], 1);  // n = 1
    const std::uint32_t len = (b[body + 2] << 24) | (b[body + 3] << 16) | (b[body + 4] << 8) | b[body + 5];
    EXPECT_EQ(len, wire::kEntryIdBytes + 2);
    EXPECT_EQ(b.size(), body + 2 + 4 + len);
}

TEST(Wire, EveryFrameTypeRoundTrips) {
    std::mt19937_64 rng(11);
    for (std::uint8_t t = 1; t <= 13; ++t) {
        for (int variant = 0; variant < 3; ++variant) {
            wire::Frame f;
            f.type = static_cast<wire::FrameType>(t);
            f.group = GroupId{static_cast<std::uint16_t>(rng())};
            f.ballot = Ballot{static_cast<std::uint32_t>(rng()), NodeId{static_cast<std::uint16_t>(rng())}};
            f.instance = rng();
            f.votes = static_cast<std::uint8_t>(rng());
            if (variant == 1) f.value = Value::skip(1 + rng() % 1000);
            if (variant == 2) f.value = app({{rng(), "hello"}, {rng(), ""}, {rng(), "x"}});
            switch (f.type) {
                case wire::FrameType::Phase1A:
                case wire::FrameType::Phase1B:
                    f.ttl = 9;
                    f.voters = {NodeId{1}, NodeId{4}};
                    f.accepted.push_back({3, Ballot{0, NodeId{1}}, 12, Value::skip(4)});
                    f.accepted.push_back({4, Ballot{2, NodeId{3}}, 16, app({{5, "v"}})});
                    break;
                case wire::FrameType::Phase2:
                case wire::FrameType::Decision:
                    f.slot_base = rng();
                    f.ttl = 3;
                    f.voters = {NodeId{2}};
                    break;
                case wire::FrameType::Fetch: f.range_end = rng(); break;
                case wire::FrameType::FetchReply:
                    if (variant) f.slot_base = rng();
                    f.status = 1;
                    break;
                case wire::FrameType::ClientReply: f.status = 2; break;
                case wire::FrameType::Register:
                case wire::FrameType::View:
                case wire::FrameType::Heartbeat:
                case wire::FrameType::DelayReport: f.blob = {1, 2, 3, 4}; break;
                default: break;
            }
            const auto enc = wire::encode(f);
            EXPECT_EQ(enc.size(), wire::encoded_size(f)) << "type " << int(t);
            EXPECT_EQ(wire::decode(enc), f) << "type " << int(t);
        }
    }
}

TEST(Wire, MalformedInputIsRejected) {
    wire::Frame f;
    f.type = wire::FrameType::Decision;
    f.value = app({{1, "abc"}});
    auto enc = wire::encode(f);

    auto truncated = enc;
    truncated.pop_back();
    EXPECT_THROW(wire::decode(truncated), Error);

    auto trailing = enc;
    trailing.push_back(0);
    trailing[3] += 1;  // keep the length consistent so only the trailing byte is wrong
    EXPECT_THROW(wire::decode(trailing), Error);

    auto bad_type = enc;
    bad_type[4] = 99;
    EXPECT_THROW(wire::decode(bad_type), Error);

    auto bad_kind = enc;
    bad_kind[22] = 7;
    EXPECT_THROW(wire::decode(bad_kind), Error);
}

TEST(Wire, AssemblerHandlesArbitrarySplits) {
    std::vector<std::uint8_t> stream;
    std::vector<wire::Frame> frames;
    for (int i = 0; i < 20; ++i) {
        wire::Frame f;
        f.type = i % 2 ? wire::FrameType::Phase2 : wire::FrameType::Heartbeat;
        f.instance = static_cast<std::uint64_t>(i);
        if (i % 2) f.value = app({{static_cast<std::uint64_t>(i), std::string(i * 7, 'p')}});
        else f.blob = {static_cast<std::uint8_t>(i)};
        frames.push_back(f);
        auto e = wire::encode(f);
        stream.insert(stream.end(), e.begin(), e.end());
    }
    std::mt19937 rng(3);
    wire::FrameAssembler a;
    std::vector<wire::Frame> got;
    for (std::size_t pos = 0; pos < stream.size();) {
        const std::size_t n = std::min<std::size_t>(1 + rng() % 17, stream.size() - pos);
        a.feed(std::span(stream.data() + pos, n));
        pos += n;
        while (auto fr = a.next()) got.push_back(*fr);
    }
    EXPECT_EQ(got, frames);
}

// ----------------------------------------------------------------- metrics

TEST(LatencyCdf, BucketsRoundUpToWholeMilliseconds) {
    std::vector<Time> s{ms(1.2), ms(1.7)};
    auto rows = metrics::latency_cdf(s);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].bucket_ms, 2u);
    EXPECT_DOUBLE_EQ(rows[0].cum_fraction, 1.0);
}

TEST(LatencyCdf, SingleSampleIsOneRow) {
    std::vector<Time> s{ms(7.0)};
    auto rows = metrics::latency_cdf(s);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].bucket_ms, 7u);
    EXPECT_DOUBLE_EQ(rows[0].cum_fraction, 1.0);
}

TEST(LatencyCdf, NoSamplesIsAnError) {
    std::vector<Time> none;
    try {
        metrics::latency_cdf(none);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NoSamples);
    }
}

TEST(LatencyCdf, UniformSamplesGiveLinearCdf) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<Time> s;
    for (int i = 0; i < 100000; ++i) s.push_back(ms(u(rng)));
    auto rows = metrics::latency_cdf(s);
    ASSERT_EQ(rows.size(), 10u);
    double prev = 0;
    for (const auto& r : rows) {
        EXPECT_GE(r.cum_fraction, prev);
        prev = r.cum_fraction;
        EXPECT_NEAR(r.cum_fraction, static_cast<double>(r.bucket_ms) / 10.0, 0.01);
    }
    EXPECT_DOUBLE_EQ(rows.back().cum_fraction, 1.0);
}

TEST(LatencyCdf, HistogramConservesCounts) {
    std::mt19937_64 rng(8);
    std::vector<Time> s;
    for (int i = 0; i < 5000; ++i) s.push_back(Time{static_cast<std::int64_t>(rng() % 50'000'000)});
    std::uint64_t total = 0;
    for (const auto& [_, n] : metrics::latency_histogram(s)) total += n;
    EXPECT_EQ(total, s.size());
}

TEST(Metrics, PercentileIsNearestRank) {
    std::vector<Time> s;
    for (int i = 1; i <= 100; ++i) s.push_back(ms(i));
    EXPECT_EQ(metrics::percentile(s, 50), ms(50));
    EXPECT_EQ(metrics::percentile(s, 90), ms(90));
    EXPECT_EQ(metrics::percentile(s, 99), ms(99));
    EXPECT_EQ(metrics::percentile(s, 100), ms(100));
}

TEST(Metrics, LineFitRecoversSlope) {
    std::vector<double> x{3, 4, 8, 16, 24}, y;
    for (double v : x) y.push_back(2.5 * v + 1.0);
    auto f = metrics::fit_line(x, y);
    EXPECT_NEAR(f.slope, 2.5, 1e-12);
    EXPECT_NEAR(f.intercept, 1.0, 1e-9);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
}

TEST(Metrics, ModeCountSeparatesClusters) {
    std::vector<Time> one, three;
    for (int i = 0; i < 300; ++i) one.push_back(ms(1 + (i % 3) * 0.3));
    for (int i = 0; i < 300; ++i) three.push_back(ms(i % 3 == 0 ? 20 : i % 3 == 1 ? 90 : 160));
    EXPECT_EQ(metrics::latency_modes(one), 1u);
    EXPECT_EQ(metrics::latency_modes(three), 3u);
}

TEST(Metrics, ThroughputSeriesKeepsAggregateInRingZero) {
    metrics::ThroughputSeries s;
    s.add(ms(100), GroupId{1}, 200);
    s.add(ms(900), GroupId{2}, 100);
    s.add(ms(1500), GroupId{1}, 200);
    EXPECT_DOUBLE_EQ(s.mean_rate(0, Time{0}, from_seconds(2)), 1.5);
    EXPECT_DOUBLE_EQ(s.peak_rate(1, Time{0}, from_seconds(2)), 1.0);
    std::ostringstream o;
    s.write_csv(o);
    EXPECT_EQ(o.str(), "t_s,ring,msgs,bits\n0,0,2,2400\n0,1,1,1600\n0,2,1,800\n1,0,1,1600\n1,1,1,1600\n");
}

TEST(Metrics, EventsCsvQuotesDetails) {
    std::vector<metrics::Event> ev{{from_seconds(1.5), "view", "epoch=3"}, {Time{0}, "note", "a,\"b\""}};
    std::ostringstream o;
    metrics::write_events_csv(o, ev);
    EXPECT_EQ(o.str(), "t_s,kind,detail\n1.500000,view,epoch=3\n0.000000,note,\"a,\"\"b\"\"\"\n");
}

// ---------------------------------------------------------------------- kv

namespace {

Delivery kv_delivery(const kv::Command& c) {
    Delivery d;
    d.payload = kv::encode(c);
    return d;
}

kv::Reply run(kv::Store& s, kv::Command c) { return kv::decode_reply(s.apply(kv_delivery(c))); }

}  // namespace

TEST(KvStore, InsertThenReadReturnsValue) {
    kv::Store s;
    EXPECT_EQ(run(s, {kv::Op::Insert, "k", "v", {}, 0}).status, kv::Status::Ok);
    auto r = run(s, {kv::Op::Read, "k", {}, {}, 0});
    EXPECT_EQ(r.status, kv::Status::Ok);
    ASSERT_EQ(r.entries.size(), 1u);
    EXPECT_EQ(r.entries[0].second, "v");
}

TEST(KvStore, AbsentKeysReportKeyNotFound) {
    kv::Store s;
    EXPECT_EQ(run(s, {kv::Op::Update, "nope", "v", {}, 0}).status, kv::Status::KeyNotFound);
    EXPECT_EQ(run(s, {kv::Op::Read, "nope", {}, {}, 0}).status, kv::Status::KeyNotFound);
    EXPECT_EQ(run(s, {kv::Op::Remove, "nope", {}, {}, 0}).status, kv::Status::KeyNotFound);
    EXPECT_EQ(s.size(), 0u);
}

TEST(KvStore, DuplicateInsertAndBadCommand) {
    kv::Store s;
    run(s, {kv::Op::Insert, "k", "1", {}, 0});
    EXPECT_EQ(run(s, {kv::Op::Insert, "k", "2", {}, 0}).status, kv::Status::KeyExists);
    EXPECT_EQ(s.get("k"), "1");
    Delivery junk;
    junk.payload = {42, 1};
    EXPECT_EQ(kv::decode_reply(s.apply(junk)).status, kv::Status::BadCommand);
}

TEST(KvStore, RangeIsSortedAndLimited) {
    kv::Store s;
    for (auto k : {"b", "a", "d", "c", "e"}) run(s, {kv::Op::Insert, k, std::string("v") + k, {}, 0});
    auto r = run(s, {kv::Op::Range, "b", {}, "e", 0});
    ASSERT_EQ(r.entries.size(), 3u);
    EXPECT_EQ(r.entries[0].first, "b");
    EXPECT_EQ(r.entries[2].first, "d");
    auto lim = run(s, {kv::Op::Range, "a", {}, "z", 2});
    EXPECT_EQ(lim.entries.size(), 2u);
}

TEST(KvStore, CommandCodecRoundTrips) {
    kv::Command c{kv::Op::Range, "from", std::string("\0bin", 4), "to", 9};
    auto d = kv::decode(kv::encode(c));
    EXPECT_EQ(d.op, c.op);
    EXPECT_EQ(d.key, c.key);
    EXPECT_EQ(d.value, c.value);
    EXPECT_EQ(d.end_key, c.end_key);
    EXPECT_EQ(d.limit, c.limit);
}

TEST(KvStore, SnapshotIsUnaffectedByLaterWrites) {
    kv::Store s;
    run(s, {kv::Op::Insert, "k", "old", {}, 0});
    auto snap = s.take_snapshot();
    const auto blob = snap.serialize();
    run(s, {kv::Op::Update, "k", "new", {}, 0});
    run(s, {kv::Op::Insert, "k2", "x", {}, 0});
    EXPECT_EQ(snap.serialize(), blob);
    kv::Store restored;
    restored.restore(blob);
    EXPECT_EQ(restored.get("k"), "old");
    EXPECT_FALSE(restored.get("k2"));
    EXPECT_EQ(restored.state_hash(), snap.hash);
}

TEST(KvStore, SameCommandStreamGivesSameHash) {
    std::mt19937_64 rng(21);
    kv::Store a, b;
    for (int i = 0; i < 5000; ++i) {
        kv::Command c;
        c.op = static_cast<kv::Op>(1 + rng() % 4);
        c.key = "k" + std::to_string(rng() % 300);
        c.value = std::string(rng() % 40, static_cast<char>('a' + rng() % 26));
        auto d = kv_delivery(c);
        a.apply(d);
        b.apply(d);
    }
    EXPECT_EQ(a.state_hash(), b.state_hash());
    kv::Store c;
    c.restore(a.snapshot());
    EXPECT_EQ(c.state_hash(), a.state_hash());
    EXPECT_EQ(c.size(), a.size());
}

TEST(KvStore, HashIsOrderIndependentOverContents) {
    kv::Store a, b;
    run(a, {kv::Op::Insert, "x", "1", {}, 0});
    run(a, {kv::Op::Insert, "y", "2", {}, 0});
    run(b, {kv::Op::Insert, "y", "2", {}, 0});
    run(b, {kv::Op::Insert, "x", "1", {}, 0});
    EXPECT_EQ(a.state_hash(), b.state_hash());
    run(b, {kv::Op::Update, "x", "3", {}, 0});
    EXPECT_NE(a.state_hash(), b.state_hash());
}

// ---------------------------------------------------------------- scenario

TEST(Scenario, UndeclaredGroupIsInvalid) {
    const char* text =
        "[rings]\n1 acceptors=3\n[nodes]\n1 ring:1=all\n2 ring:2=learner\n[clients]\n1 groups=1\n";
    try {
        parse_scenario(text);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidScenario);
    }
    const char* client_text = "[rings]\n1 acceptors=1\n[nodes]\n1 ring:1=all\n[clients]\n1 groups=4\n";
    EXPECT_THROW(parse_scenario(client_text), Error);
}

TEST(Scenario, RejectsMalformedInput) {
    for (const char* bad : {
             "[rings]\n1 acceptors=3\n[nodes]\n1 ring:1=all\n[links]\ndefault warp:3\n",
             "[rings]\n1 acceptors=3\n[nodes]\n1 ring:1=all\n[bogus]\n",
             "[rings]\n1 acceptors=3\n[nodes]\n1 ring:1=learner\n",
             "[rings]\n1 acceptors=3\n[nodes]\n1 ring:1=all\n[faults]\ncrash at=1 node=9\n",
             "[rings]\n1 acceptors=3\n[nodes]\n1 ring:1=all\n1 ring:1=learner\n",
             "duration_s=abc\n[rings]\n1 acceptors=3\n[nodes]\n1 ring:1=all\n",
         }) {
        EXPECT_THROW(parse_scenario(bad), Error) << bad;
    }
}

TEST(Scenario, ParsesAllSections) {
    auto sc = parse_scenario(bundled::recovery(true));
    EXPECT_EQ(sc.name, "recovery-new");
    ASSERT_EQ(sc.rings.size(), 1u);
    EXPECT_EQ(sc.nodes.size(), 6u);
    EXPECT_TRUE(sc.node(NodeId{6})->kv);
    EXPECT_DOUBLE_EQ(sc.node(NodeId{4})->apply_us, 30);
    ASSERT_EQ(sc.clients.size(), 1u);
    EXPECT_TRUE(sc.clients[0].open_loop);
    EXPECT_EQ(sc.clients[0].workload, Workload::Kv);
    ASSERT_EQ(sc.faults.size(), 2u);
    EXPECT_EQ(sc.faults[1].kind, FaultKind::Recover);
    EXPECT_TRUE(sc.faults[1].new_protocol);
    EXPECT_DOUBLE_EQ(sc.pacing.lambda, 11000);
}

TEST(Scenario, BundledFilesMatchGenerators) {
    const std::filesystem::path dir = std::filesystem::path(MRP_SOURCE_DIR) / "scenarios";
    for (const auto& name : bundled::names()) {
        const auto path = dir / (name + ".scn");
        ASSERT_TRUE(std::filesystem::exists(path)) << path;
        EXPECT_EQ(read_text_file(path.string()), *bundled::by_name(name)) << name;
    }
}

TEST(Scenario, EveryShippedFileParses) {
    const std::filesystem::path dir = std::filesystem::path(MRP_SOURCE_DIR) / "scenarios";
    int n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() != ".scn") continue;
        EXPECT_NO_THROW(load_scenario(e.path().string())) << e.path();
        ++n;
    }
    EXPECT_GT(n, 20);
}

TEST(Scenario, LatencyDistributionsSampleWithinBounds) {
    std::mt19937_64 rng(1);
    auto c = LatencyDist::parse("const:80");
    EXPECT_EQ(c.sample(rng), ms(80));
    auto u = LatencyDist::parse("uniform:1:2");
    auto n = LatencyDist::parse("normal:0.1:5");
    for (int i = 0; i < 1000; ++i) {
        auto s = u.sample(rng);
        EXPECT_GE(s, ms(1));
        EXPECT_LE(s, ms(2));
        EXPECT_GE(n.sample(rng).count(), 0);
    }
}

// --------------------------------------------------------------- topology

TEST(Registry, RingOrderIsRegistrationOrder) {
    Registry r;
    r.register_node(NodeId{5}, kAcceptor, {GroupId{1}});
    r.register_node(NodeId{2}, kProposer, {GroupId{1}});
    r.register_node(NodeId{9}, kAcceptor | kLearner, {GroupId{1}, GroupId{2}});
    const auto& v = r.view();
    EXPECT_EQ(v.epoch, 3u);
    ASSERT_EQ(v.members(GroupId{1}).size(), 3u);
    EXPECT_EQ(v.members(GroupId{1})[0].node, NodeId{5});
    EXPECT_EQ(v.members(GroupId{1})[2].node, NodeId{9});
    EXPECT_TRUE(v.contains(GroupId{2}, NodeId{9}));
    EXPECT_EQ(v.successor(GroupId{1}, NodeId{9}), NodeId{5});
    EXPECT_EQ(v.majority(GroupId{1}), 2u);
}

TEST(Registry, DuplicateRegistrationIsRejected) {
    Registry r;
    r.register_node(NodeId{1}, kAcceptor, {GroupId{1}});
    try {
        r.register_node(NodeId{1}, kLearner, {GroupId{1}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::DuplicateNode);
    }
    EXPECT_EQ(r.view().epoch, 1u);
}

TEST(Registry, SuccessorsFormACyclicPermutation) {
    std::mt19937_64 rng(4);
    Registry r;
    std::vector<NodeId> live;
    for (std::uint16_t i = 1; i <= 12; ++i) {
        r.register_node(NodeId{i}, i % 3 ? kAcceptor : kLearner, {GroupId{1}});
        live.push_back(NodeId{i});
    }
    auto prev_epoch = r.view().epoch;
    while (live.size() > 1) {
        const auto& v = r.view();
        std::set<NodeId> seen;
        NodeId cur = live.front();
        for (std::size_t i = 0; i < live.size(); ++i) {
            seen.insert(cur);
            cur = *v.successor(GroupId{1}, cur);
        }
        EXPECT_EQ(cur, live.front());
        EXPECT_EQ(seen.size(), live.size());
        const auto victim = live[rng() % live.size()];
        EXPECT_TRUE(r.remove_node(victim));
        EXPECT_GT(r.view().epoch, prev_epoch);
        prev_epoch = r.view().epoch;
        std::erase(live, victim);
    }
}

TEST(Registry, ViewEncodingRoundTrips) {
    Registry r;
    r.declare_ring(GroupId{3}, 3);
    r.register_node(NodeId{1}, kAcceptor, {GroupId{3}}, "127.0.0.1:4000");
    r.register_node(NodeId{2}, kLearner | kProposer, {GroupId{3}, GroupId{4}}, "127.0.0.1:4001");
    const auto decoded = TopologyView::decode(r.view().encode());
    EXPECT_EQ(decoded, r.view());
    EXPECT_EQ(decoded.acceptor_count.at(GroupId{3}), 3);
}

TEST(FailureDetector, SuspectsAfterTimeout) {
    FailureDetector fd(ms(200));
    fd.heartbeat(NodeId{1}, ms(0));
    fd.heartbeat(NodeId{2}, ms(150));
    EXPECT_TRUE(fd.suspects(ms(200)).empty());
    EXPECT_EQ(fd.suspects(ms(201)), std::vector<NodeId>{NodeId{1}});
    fd.heartbeat(NodeId{1}, ms(201));
    EXPECT_EQ(fd.suspects(ms(351)), std::vector<NodeId>{NodeId{2}});
}

TEST(Roles, ParseAndPrint) {
    EXPECT_EQ(parse_roles("acceptor,learner"), kAcceptor | kLearner);
    EXPECT_EQ(parse_roles("all"), kProposer | kAcceptor | kLearner);
    EXPECT_EQ(roles_string(kProposer | kLearner), "proposer,learner");
    EXPECT_THROW(parse_roles("leader"), std::invalid_argument);
}
