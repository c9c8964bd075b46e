#pragma once

#include "mrp/metrics.hpp"
#include "mrp/scenario.hpp"
#include "mrp/sim/cluster.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace mrp::report {

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline double ms(Time t) { return to_seconds(t) * 1e3; }

/// Run manifest: the scenario text, the seed, the trace hash and a summary.
/// Contains nothing time-of-day dependent, so reruns are byte-identical.
inline nlohmann::ordered_json manifest(const sim::Cluster& c, const std::string& scenario_text) {
    nlohmann::ordered_json m;
    const auto& sc = c.scenario();
    m["scenario"] = sc.name;
    m["seed"] = c.seed();
    m["trace_hash"] = hex64(c.trace_hash());
    m["duration_s"] = sc.duration_s;
    m["drain_s"] = sc.drain_s;
    auto delivered = nlohmann::ordered_json::object();
    for (auto id : c.node_ids()) {
        const auto& n = c.node(id);
        if (n.cursor) delivered[std::to_string(id.value)] = n.delivered;
    }
    m["delivered"] = delivered;
    m["submitted"] = c.submitted().size();
    const auto lat = c.latencies();
    m["latency_samples"] = lat.size();
    if (!lat.empty()) {
        const auto p = metrics::summarize(lat);
        m["latency_ms"] = {{"p50", ms(p.p50)}, {"p90", ms(p.p90)}, {"p99", ms(p.p99)}, {"mean", ms(metrics::mean(lat))}};
    }
    const auto safety = c.check_safety();
    m["safety"] = {{"agreement", safety.agreement},
                   {"order", safety.order},
                   {"integrity", safety.integrity},
                   {"single_value", safety.single_value}};
    m["config"] = scenario_text;
    return m;
}

/// Writes throughput.csv, latency_cdf.csv, events.csv and manifest.json.
inline void write_run(const sim::Cluster& c, const std::string& scenario_text, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
        return f;
    };
    {
        auto f = open("throughput.csv");
        c.throughput().write_csv(f);
    }
    {
        auto f = open("latency_cdf.csv");
        metrics::write_cdf_csv(f, c.latencies());
    }
    {
        auto f = open("events.csv");
        metrics::write_events_csv(f, c.events());
    }
    {
        auto f = open("manifest.json");
        f << manifest(c, scenario_text).dump(2) << '\n';
    }
}

/// Runs a scenario given as text and writes its outputs to `dir`.
inline nlohmann::ordered_json run_scenario(const std::string& scenario_text, std::uint64_t seed,
                                           const std::filesystem::path& dir, sim::ClusterOptions opts = {}) {
    auto sc = parse_scenario(scenario_text);
    sim::Cluster c(std::move(sc), seed, std::move(opts));
    c.run();
    write_run(c, scenario_text, dir);
    return manifest(c, scenario_text);
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char ch = line[i];
            if (quoted) {
                if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else if (ch == '"') {
                    quoted = false;
                } else {
                    cell += ch;
                }
            } else if (ch == '"') {
                quoted = true;
            } else if (ch == ',') {
                cells.push_back(cell);
                cell.clear();
            } else {
                cell += ch;
            }
        }
        cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace detail

/// Smallest bucket whose cumulative fraction reaches p/100.
inline std::optional<std::uint64_t> cdf_percentile(const std::vector<metrics::CdfRow>& rows, double p) {
    for (const auto& r : rows)
        if (r.cum_fraction + 1e-12 >= p / 100.0) return r.bucket_ms;
    return std::nullopt;
}

/// Human-readable summary of a run directory.
inline std::string summarize_run(const std::filesystem::path& dir) {
    std::ostringstream o;
    nlohmann::json m;
    {
        std::ifstream in(dir / "manifest.json");
        if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
        in >> m;
    }
    o << "scenario   " << m.value("scenario", "?") << "  seed " << m.value("seed", 0) << "  trace "
      << m.value("trace_hash", "?") << '\n';
    o << "submitted  " << m.value("submitted", 0) << "  latency samples " << m.value("latency_samples", 0) << '\n';

    std::vector<metrics::CdfRow> cdf;
    for (const auto& r : detail::read_csv(dir / "latency_cdf.csv"))
        cdf.push_back({std::stoull(r.at(0)), std::stod(r.at(1))});
    char buf[160];
    if (m.contains("latency_ms")) {
        const auto& l = m["latency_ms"];
        std::snprintf(buf, sizeof buf, "latency    p50 %.3f ms  p90 %.3f ms  p99 %.3f ms  mean %.3f ms\n",
                      l.value("p50", 0.0), l.value("p90", 0.0), l.value("p99", 0.0), l.value("mean", 0.0));
        o << buf;
    }
    if (!cdf.empty()) {
        o << "buckets    p50 <= " << *cdf_percentile(cdf, 50) << " ms  p90 <= " << *cdf_percentile(cdf, 90)
          << " ms  p99 <= " << *cdf_percentile(cdf, 99) << " ms\n";
    }

    // throughput: mean and peak over 1 s windows, per ring (0 = all)
    std::map<int, std::pair<double, double>> per_ring;  // sum, peak
    std::map<int, int> windows;
    for (const auto& r : detail::read_csv(dir / "throughput.csv")) {
        const int ring = std::stoi(r.at(1));
        const double msgs = std::stod(r.at(2));
        auto& [sum, peak] = per_ring[ring];
        sum += msgs;
        peak = std::max(peak, msgs);
        ++windows[ring];
    }
    for (const auto& [ring, sp] : per_ring) {
        std::snprintf(buf, sizeof buf, "%-10s mean %.1f msgs/s  peak %.1f msgs/s over %d windows\n",
                      ring == 0 ? "all rings" : ("ring " + std::to_string(ring)).c_str(), sp.first / windows[ring],
                      sp.second, windows[ring]);
        o << buf;
    }

    std::map<std::string, int> kinds;
    for (const auto& r : detail::read_csv(dir / "events.csv")) ++kinds[r.at(1)];
    if (!kinds.empty()) {
        o << "events    ";
        for (const auto& [k, n] : kinds) o << ' ' << k << '=' << n;
        o << '\n';
    }
    if (m.contains("safety")) {
        const auto& s = m["safety"];
        const int bad = s.value("agreement", 0) + s.value("order", 0) + s.value("integrity", 0) + s.value("single_value", 0);
        o << "safety     " << (bad == 0 ? "ok" : "VIOLATED") << '\n';
    }
    return o.str();
}

}  // namespace mrp::report
