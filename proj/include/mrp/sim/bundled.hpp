#pragma once

#include "mrp/core.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace mrp::bundled {

/// Regions of the geo-5 and dc-outage scenarios.
inline constexpr std::array<const char*, 5> kRegions{"usw1", "usw2", "euw1", "apse1", "apse2"};

/// One-way delays between the five regions, in ms (upper triangle order:
/// usw1-usw2, usw1-euw1, usw1-apse1, usw1-apse2, usw2-euw1, usw2-apse1,
/// usw2-apse2, euw1-apse1, euw1-apse2, apse1-apse2).
inline constexpr std::array<double, 10> kRegionDelays{20, 75, 90, 75, 70, 85, 80, 85, 150, 45};

inline double mean_region_delay() {
    double s = 0;
    for (auto d : kRegionDelays) s += d;
    return s / static_cast<double>(kRegionDelays.size());
}

inline std::string region_links() {
    std::ostringstream o;
    o << "intra uniform:0.2:0.4\n";
    std::size_t k = 0;
    for (std::size_t i = 0; i < kRegions.size(); ++i)
        for (std::size_t j = i + 1; j < kRegions.size(); ++j)
            o << "region " << kRegions[i] << ' ' << kRegions[j] << " normal:" << kRegionDelays[k++] << ":0.5\n";
    return o.str();
}

// ---------------------------------------------------------------- skew-N

/// One learner subscribed to `rings` rings of three acceptors each; a single
/// client loads ring 1 and the other rings only skip. Node 1 is the learner
/// under test, node 2 a ring-1-only learner used as the reference. Acceptors
/// are packed two per node at 16 rings and four per node at 32.
inline std::string skew_rings(int rings, double frame_us = 20, double skew_ms = 0.5, double jitter_ms = 1,
                              const char* compensation = "off", double lambda = 2000) {
    const int per_node = rings >= 32 ? 4 : rings >= 16 ? 2 : 1;
    const int columns = (rings + per_node - 1) / per_node;  // nodes per acceptor position
    std::ostringstream o;
    o << "name=skew-" << rings << "rings\nduration_s=10\ndrain_s=1\nwarmup_s=1\n\n[rings]\n";
    for (int g = 1; g <= rings; ++g) o << g << " acceptors=3\n";
    o << "\n[nodes]\ndefaults frame_us=" << frame_us << " byte_ns=0.5\n";
    // acceptor k of ring g lives on node 3 + k * columns + (g - 1) / per_node,
    // so the three acceptors of a ring never share a node
    std::vector<std::string> acc(static_cast<std::size_t>(3 * columns));
    for (int g = 1; g <= rings; ++g)
        for (int k = 0; k < 3; ++k)
            acc[static_cast<std::size_t>(k * columns + (g - 1) / per_node)] +=
                " ring:" + std::to_string(g) + "=proposer,acceptor";
    for (std::size_t i = 0; i < acc.size(); ++i) o << 3 + i << acc[i] << '\n';
    o << 1;
    for (int g = 1; g <= rings; ++g) o << " ring:" << g << "=learner";
    o << "\n2 ring:1=learner\n";
    o << "\n[links]\ndefault uniform:0.08:0.12\n";
    o << "\n[clients]\n1 groups=1 threads=1 size=200 reply_from=1\n";
    o << "\n[pacing]\nring.lambda=" << lambda << " ring.delta_t_ms=5 clock.skew_ms=" << skew_ms << " clock.jitter_ms=" << jitter_ms
      << " ring.compensation=" << compensation << '\n';
    return o.str();
}

/// A single ring with no traffic at all; only skips move it.
inline std::string idle_ring() {
    return "name=idle-ring\nduration_s=10\ndrain_s=0\nwarmup_s=0\n\n"
           "[rings]\n1 acceptors=3\n\n"
           "[nodes]\ndefaults frame_us=2 byte_ns=0.5\n"
           "1 ring:1=proposer,acceptor\n2 ring:1=proposer,acceptor\n3 ring:1=proposer,acceptor\n4 ring:1=learner\n\n"
           "[links]\ndefault const:0.1\n\n"
           "[pacing]\nring.lambda=1000 ring.delta_t_ms=5\n";
}

// ----------------------------------------------------------- large-ring-N

/// One ring: three acceptors, `learners` learners, then the proposer the
/// client talks to, all 1 ms apart. Latency is measured at the proposer,
/// which also learns and so sits at the far end of the circulation.
inline std::string large_ring(int learners) {
    std::ostringstream o;
    o << "name=large-ring-" << learners << "\nduration_s=5\ndrain_s=1\nwarmup_s=1\n\n[rings]\n1 acceptors=3\n\n";
    o << "[nodes]\ndefaults region=ring frame_us=5 byte_ns=0.5\n";
    for (int i = 1; i <= 3; ++i) o << i << " ring:1=proposer,acceptor\n";
    for (int i = 0; i < learners; ++i) o << 4 + i << " ring:1=learner\n";
    const int p = 4 + learners;
    o << p << " ring:1=proposer,learner\n";
    o << "\n[links]\nintra const:1\nregion ring edge const:0\n";
    o << "\n[clients]\n1 region=edge groups=1 threads=1 size=200 contact=" << p << " reply_from=" << p << "\n";
    o << "\n[pacing]\nring.pacing=off\n";
    return o.str();
}

// ------------------------------------------------------------------ geo-5

enum class GeoVariant { Compensated, Uncompensated, Baseline };

inline constexpr std::uint16_t kGlobalRing = 10;
inline constexpr double kGeoLambda = 3000;

/// Five regions, each with a local ring (three acceptors, two learners).
/// Except in the baseline, a global ring joins one acceptor in usw1, euw1
/// and apse1 with every learner. Node ids: region r (0-based) uses
/// 10r+1..10r+3 for local acceptors, 10r+4..10r+5 for learners and 10r+6
/// for its global acceptor, if any.
inline std::string geo5(GeoVariant v, int threads = 4, double duration_s = 20, bool outage = false) {
    const bool global = v != GeoVariant::Baseline;
    std::ostringstream o;
    o << "name=" << (outage ? "dc-outage" : v == GeoVariant::Compensated ? "geo-5-comp"
                                            : v == GeoVariant::Uncompensated ? "geo-5-nocomp"
                                                                             : "geo-5-baseline")
      << "\nduration_s=" << duration_s << "\ndrain_s=2\nwarmup_s=4\nregistry_region=usw2\n"
      << "heartbeat_ms=100\nsuspicion_ms=1000\n\n[rings]\n";
    for (int r = 1; r <= 5; ++r) o << r << " acceptors=3\n";
    if (global) o << kGlobalRing << " acceptors=3\n";
    o << "\n[nodes]\ndefaults frame_us=5 byte_ns=1\n";
    const std::array<int, 3> global_regions{0, 2, 3};
    // global acceptors first so they lead the global ring in region order
    if (global)
        for (int r : global_regions) o << 10 * r + 6 << " region=" << kRegions[static_cast<std::size_t>(r)]
                                      << " ring:" << kGlobalRing << "=proposer,acceptor\n";
    for (int r = 0; r < 5; ++r) {
        const auto* reg = kRegions[static_cast<std::size_t>(r)];
        for (int i = 1; i <= 3; ++i) o << 10 * r + i << " region=" << reg << " ring:" << r + 1 << "=proposer,acceptor\n";
        for (int i = 4; i <= 5; ++i) {
            o << 10 * r + i << " region=" << reg << " ring:" << r + 1 << "=learner";
            if (global) o << " ring:" << kGlobalRing << "=learner";
            o << '\n';
        }
    }
    o << "\n[links]\n" << region_links();
    o << "\n[clients]\n";
    for (int r = 0; r < 5; ++r)
        o << r + 1 << " region=" << kRegions[static_cast<std::size_t>(r)] << " groups=" << r + 1
          << " threads=" << threads << " size=200 timeout_ms=3000\n";
    if (outage) o << "\n[faults]\nkill_region at=" << duration_s / 2 << " region=" << kRegions[0] << '\n';
    o << "\n[pacing]\nring.lambda=" << kGeoLambda << " ring.delta_t_ms=5 ring.compensation="
      << (v == GeoVariant::Uncompensated ? "off" : "auto") << '\n';
    return o.str();
}

inline std::string dc_outage() { return geo5(GeoVariant::Compensated, 4, 20, true); }

// -------------------------------------------------------------- recovery

inline constexpr double kRecoveryRate = 8200;  // ~80% of the measured capacity

/// Replicated key-value store: three acceptors and three replicas on one
/// ring. Replica 6 crashes and later recovers with the given protocol.
inline std::string recovery(bool new_protocol, double rate = kRecoveryRate, bool faults = true,
                            double duration_s = 20) {
    std::ostringstream o;
    o << "name=recovery-" << (new_protocol ? "new" : "old") << "\nduration_s=" << duration_s
      << "\ndrain_s=2\nwarmup_s=3\ncheckpoint_period_s=4\nstore_mbps=400\n\n";
    o << "[rings]\n1 acceptors=3\n\n[nodes]\ndefaults frame_us=20 byte_ns=4 apply_us=30\n";
    for (int i = 1; i <= 3; ++i) o << i << " ring:1=proposer,acceptor\n";
    for (int i = 4; i <= 6; ++i) o << i << " ring:1=learner app=kv\n";
    o << "\n[links]\ndefault uniform:0.08:0.12\n";
    o << "\n[clients]\n";
    if (rate > 0)
        o << "1 groups=1 mode=open rate=" << rate << " size=1024 workload=kv keys=20000 insert=0.2 read=0.2\n";
    else
        o << "1 groups=1 threads=" << static_cast<int>(-rate) << " size=1024 workload=kv keys=20000 insert=0.2 read=0.2\n";
    if (faults)
        o << "\n[faults]\ncrash at=10 node=6\nrecover at=14 node=6 protocol=" << (new_protocol ? "new" : "old") << '\n';
    o << "\n[pacing]\nring.lambda=11000 ring.delta_t_ms=5\n";
    return o.str();
}

// ---------------------------------------------------------------- safety

/// Randomized fault run: three rings of three acceptors, four learners
/// subscribed to overlapping ring sets, lossy links, crashes and delays.
inline std::string safety(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    auto pick = [&](int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng)); };
    std::ostringstream o;
    o << "name=safety-" << seed << "\nduration_s=2\ndrain_s=1.5\nwarmup_s=0\nretry_ms=150\n";
    o << "heartbeat_ms=20\nsuspicion_ms=" << static_cast<int>(uni(60, 150)) << "\n\n[rings]\n";
    for (int g = 1; g <= 3; ++g) o << g << " acceptors=3\n";
    o << "\n[nodes]\ndefaults frame_us=2 byte_ns=0.5\n";
    for (int g = 1; g <= 3; ++g)
        for (int k = 0; k < 3; ++k) o << 3 * (g - 1) + k + 1 << " ring:" << g << "=proposer,acceptor\n";
    o << "10 ring:1=learner ring:2=learner ring:3=learner\n11 ring:1=learner ring:2=learner\n"
         "12 ring:2=learner ring:3=learner\n13 ring:1=learner ring:3=learner\n";
    const double lo = uni(0.05, 0.5);
    o << "\n[links]\ndefault uniform:" << lo << ':' << lo + uni(0.1, 2.0) << " drop=" << uni(0.0, 0.01) << '\n';
    o << "\n[clients]\n";
    const char* mixes[] = {"1", "2", "3", "1,2", "2,3", "1,3", "1,2,3"};
    const int clients = 2 + pick(2);
    for (int c = 1; c <= clients; ++c)
        o << c << " groups=" << mixes[pick(7)] << " threads=" << 1 + pick(3) << " size=" << 16 + pick(300)
          << " timeout_ms=" << static_cast<int>(uni(100, 400)) << " stop_s=1.8\n";
    o << "\n[faults]\n";
    // at most one acceptor crash per ring keeps every ring live
    for (int g = 1; g <= 3; ++g)
        if (uni(0, 1) < 0.5) o << "crash at=" << uni(0.1, 1.6) << " node=" << 3 * (g - 1) + pick(3) + 1 << '\n';
    if (uni(0, 1) < 0.3) o << "crash at=" << uni(0.1, 1.6) << " node=" << 10 + pick(4) << '\n';
    const int delays = pick(4);
    for (int i = 0; i < delays; ++i) {
        const int node = uni(0, 1) < 0.7 ? 1 + pick(9) : 10 + pick(4);
        o << "delay at=" << uni(0.05, 1.6) << " node=" << node << " for=" << uni(0.05, 0.4)
          << " extra_ms=" << uni(5, 200) << '\n';
    }
    o << "\n[pacing]\nring.lambda=2000 ring.delta_t_ms=5 merge.m=" << 1 + pick(3) << '\n';
    return o.str();
}

// ---------------------------------------------------------------- catalog

inline std::vector<std::string> names() {
    std::vector<std::string> out{"idle-ring"};
    for (int n : {1, 2, 4, 8, 16, 32}) out.push_back("skew-" + std::to_string(n) + "rings");
    for (int n : {3, 4, 8, 16, 24, 32, 48, 64}) out.push_back("large-ring-" + std::to_string(n));
    for (const char* s : {"geo-5-comp", "geo-5-nocomp", "geo-5-baseline", "dc-outage", "recovery-new", "recovery-old"})
        out.emplace_back(s);
    return out;
}

/// Scenario text of a bundled scenario, or nullopt for an unknown name.
inline std::optional<std::string> by_name(const std::string& name) {
    auto num_between = [&](const std::string& prefix, const std::string& suffix) -> std::optional<int> {
        if (!name.starts_with(prefix) || !name.ends_with(suffix)) return std::nullopt;
        auto mid = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
        if (mid.empty() || mid.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
        return std::stoi(mid);
    };
    if (name == "idle-ring") return idle_ring();
    if (auto n = num_between("skew-", "rings"); n && *n >= 1 && *n <= 64) return skew_rings(*n);
    if (auto n = num_between("large-ring-", ""); n && *n >= 1 && *n <= 200) return large_ring(*n);
    if (name == "geo-5-comp") return geo5(GeoVariant::Compensated);
    if (name == "geo-5-nocomp") return geo5(GeoVariant::Uncompensated);
    if (name == "geo-5-baseline") return geo5(GeoVariant::Baseline);
    if (name == "dc-outage") return dc_outage();
    if (name == "recovery-new") return recovery(true);
    if (name == "recovery-old") return recovery(false);
    if (auto n = num_between("safety-", "")) return safety(static_cast<std::uint64_t>(*n));
    return std::nullopt;
}

}  // namespace mrp::bundled
