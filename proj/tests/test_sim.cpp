// Whole-cluster simulation runs.

#include "mrp/report.hpp"
#include "mrp/sim/bundled.hpp"
#include "mrp/sim/cluster.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace mrp;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string basic() { return read_text_file(std::string(MRP_SOURCE_DIR) + "/scenarios/basic.scn"); }

sim::ClusterOptions quiet() {
    sim::ClusterOptions o;
    o.keep_trace = true;
    return o;
}

}  // namespace

TEST(Simulation, SameSeedGivesIdenticalOutputs) {
    const auto tmp = std::filesystem::temp_directory_path();
    const auto a = tmp / "mrp_det_a", b = tmp / "mrp_det_b", c = tmp / "mrp_det_c";
    const auto ma = report::run_scenario(basic(), 3, a);
    const auto mb = report::run_scenario(basic(), 3, b);
    auto jittered = basic();
    jittered.replace(jittered.find("const:0.1"), 9, "uniform:0.08:0.12");
    const auto mc = report::run_scenario(jittered, 4, c);
    const auto mc2 = report::run_scenario(jittered, 5, c);
    EXPECT_EQ(ma["trace_hash"], mb["trace_hash"]);
    EXPECT_NE(mc["trace_hash"], mc2["trace_hash"]);
    for (const char* f : {"throughput.csv", "latency_cdf.csv", "events.csv", "manifest.json"}) {
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
        EXPECT_FALSE(slurp(a / f).empty()) << f;
    }
    EXPECT_TRUE(slurp(a / "throughput.csv").starts_with("t_s,ring,msgs,bits\n"));
    EXPECT_TRUE(slurp(a / "latency_cdf.csv").starts_with("bucket_ms,cum_fraction\n"));
    EXPECT_TRUE(slurp(a / "events.csv").starts_with("t_s,kind,detail\n"));
    const auto summary = report::summarize_run(a);
    EXPECT_NE(summary.find("safety     ok"), std::string::npos) << summary;
    for (const auto& d : {a, b, c}) std::filesystem::remove_all(d);
}

TEST(Simulation, LosslessRunDeliversEverythingEverywhere) {
    sim::Cluster c(parse_scenario(basic()), 1, quiet());
    c.run();
    EXPECT_TRUE(c.check_safety().ok());
    EXPECT_GT(c.submitted().size(), 1000u);
    EXPECT_EQ(c.undelivered(), 0u);
    // every learner delivered the same sequence
    const auto& ref = c.node(NodeId{4}).trace;
    for (auto id : {NodeId{1}, NodeId{2}, NodeId{3}, NodeId{5}}) {
        const auto& t = c.node(id).trace;
        ASSERT_EQ(t.size(), ref.size());
        for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(t[i].id, ref[i].id);
    }
}

TEST(Simulation, RingSurvivesLossOfOneAcceptor) {
    // replies owed by the crashed node are lost; a short client timeout
    // resubmits them quickly
    auto text = basic() + "\n[faults]\ncrash at=1 node=1\n";
    text.replace(text.find("size=200"), 8, "size=200 timeout_ms=100");
    sim::Cluster c(parse_scenario(text), 2, quiet());
    c.run();
    EXPECT_TRUE(c.check_safety().ok());
    EXPECT_TRUE(c.event_time("crash"));
    EXPECT_GT(c.delivery_rate(NodeId{4}, from_seconds(2), from_seconds(3)), 100.0);
    EXPECT_EQ(c.undelivered(), 0u);
}

TEST(Simulation, RandomFaultRunsStaySafe) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        sim::Cluster c(parse_scenario(bundled::safety(seed)), seed, quiet());
        c.run();
        const auto rep = c.check_safety();
        EXPECT_TRUE(rep.ok()) << "seed " << seed << ": "
                              << (rep.details.empty() ? std::string() : rep.details.front());
    }
}

TEST(Simulation, EventBudgetIsEnforced) {
    sim::ClusterOptions o;
    o.max_events = 1000;
    sim::Cluster c(parse_scenario(basic()), 1, o);
    try {
        c.run();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::HorizonExceeded);
    }
}

TEST(Simulation, IdleRingAdvancesAtLambda) {
    sim::Cluster c(parse_scenario(bundled::idle_ring()), 1, quiet());
    c.run_until(from_seconds(10));
    const auto consumed = c.node(NodeId{4}).cursor->consumed_slots(GroupId{1});
    EXPECT_GE(consumed, 9995u);
    EXPECT_LE(consumed, 10005u);
}

TEST(Simulation, RecoveredReplicaMatchesLiveReplica) {
    sim::Cluster c(parse_scenario(bundled::recovery(true, 2000, true, 17)), 5, quiet());
    c.run();
    const auto& r = c.node(NodeId{6});
    ASSERT_TRUE(r.recovery_live);
    EXPECT_EQ(r.fetches_while_recovering, 0u);
    EXPECT_EQ(r.app->state_hash(), c.node(NodeId{4}).app->state_hash());
    EXPECT_EQ(r.app->applied(), c.node(NodeId{4}).app->applied());
    EXPECT_TRUE(c.check_safety().ok());
}

TEST(Simulation, UnknownGroupInScenarioIsRejectedBeforeRunning) {
    auto text = basic();
    text.replace(text.find("groups=1"), 8, "groups=9");
    EXPECT_THROW(parse_scenario(text), Error);
}
