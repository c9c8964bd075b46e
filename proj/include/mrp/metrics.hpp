#pragma once

#include "mrp/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace mrp::metrics {

struct CdfRow {
    std::uint64_t bucket_ms = 0;
    double cum_fraction = 0.0;
};

/// Bucket of a latency sample: milliseconds rounded up.
inline std::uint64_t latency_bucket(Time sample) {
    if (sample.count() <= 0) return 0;
    return static_cast<std::uint64_t>((sample.count() + 999'999) / 1'000'000);
}

/// Histogram with 1 ms buckets, keyed by bucket.
inline std::map<std::uint64_t, std::uint64_t> latency_histogram(std::span<const Time> samples) {
    std::map<std::uint64_t, std::uint64_t> h;
    for (auto s : samples) ++h[latency_bucket(s)];
    return h;
}

/// One row per non-empty 1 ms bucket; fractions end at exactly 1.
inline std::vector<CdfRow> latency_cdf(std::span<const Time> samples) {
    if (samples.empty()) throw Error(Errc::NoSamples, "latency cdf");
    const auto h = latency_histogram(samples);
    std::vector<CdfRow> rows;
    std::uint64_t seen = 0;
    for (const auto& [b, n] : h) {
        seen += n;
        rows.push_back({b, seen == samples.size() ? 1.0 : static_cast<double>(seen) / samples.size()});
    }
    return rows;
}

/// Nearest-rank percentile, p in (0, 100].
inline Time percentile(std::span<const Time> samples, double p) {
    if (samples.empty()) throw Error(Errc::NoSamples, "percentile");
    std::vector<Time> v(samples.begin(), samples.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    rank = std::clamp<std::size_t>(rank, 1, v.size());
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank - 1), v.end());
    return v[rank - 1];
}

inline Time mean(std::span<const Time> samples) {
    if (samples.empty()) throw Error(Errc::NoSamples, "mean");
    long double sum = 0;
    for (auto s : samples) sum += static_cast<long double>(s.count());
    return Time{static_cast<std::int64_t>(std::llround(sum / samples.size()))};
}

struct Percentiles {
    Time p50{0}, p90{0}, p99{0};
};

inline Percentiles summarize(std::span<const Time> samples) {
    return {percentile(samples, 50), percentile(samples, 90), percentile(samples, 99)};
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Ordinary least squares over (x, y) pairs.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line needs >= 2 paired points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        syy += y[i] * y[i];
    }
    const double vx = sxx - sx * sx / n;
    const double vy = syy - sy * sy / n;
    const double cxy = sxy - sx * sy / n;
    LinearFit f;
    f.slope = vx == 0 ? 0 : cxy / vx;
    f.intercept = (sy - f.slope * sx) / n;
    f.r2 = (vx == 0 || vy == 0) ? 1.0 : (cxy * cxy) / (vx * vy);
    return f;
}

/// Per-second message and bit counts, per ring. Ring 0 holds the aggregate.
class ThroughputSeries {
public:
    explicit ThroughputSeries(Time window = std::chrono::seconds(1)) : window_(window) {}

    Time window() const noexcept { return window_; }

    void add(Time t, GroupId ring, std::uint64_t bytes, double weight = 1.0) {
        const auto w = static_cast<std::int64_t>(t.count() / window_.count());
        auto& cell = cells_[{w, ring.value}];
        cell.msgs += weight;
        cell.bits += weight * static_cast<double>(bytes) * 8.0;
        auto& all = cells_[{w, 0}];
        all.msgs += weight;
        all.bits += weight * static_cast<double>(bytes) * 8.0;
    }

    struct Cell {
        double msgs = 0;
        double bits = 0;
    };
    const std::map<std::pair<std::int64_t, std::uint16_t>, Cell>& cells() const noexcept { return cells_; }

    /// Messages per second for one ring (0 = aggregate) per window in [from, to).
    std::vector<double> rate(std::uint16_t ring, Time from, Time to) const {
        std::vector<double> out;
        const auto scale = 1e9 / static_cast<double>(window_.count());
        for (auto w = from.count() / window_.count(); w < (to.count() + window_.count() - 1) / window_.count(); ++w) {
            auto it = cells_.find({w, ring});
            out.push_back(it == cells_.end() ? 0.0 : it->second.msgs * scale);
        }
        return out;
    }

    double mean_rate(std::uint16_t ring, Time from, Time to) const {
        auto r = rate(ring, from, to);
        if (r.empty()) return 0.0;
        double s = 0;
        for (auto v : r) s += v;
        return s / static_cast<double>(r.size());
    }

    double peak_rate(std::uint16_t ring, Time from, Time to) const {
        auto r = rate(ring, from, to);
        return r.empty() ? 0.0 : *std::max_element(r.begin(), r.end());
    }

    void write_csv(std::ostream& out) const {
        out << "t_s,ring,msgs,bits\n";
        const auto secs = to_seconds(window_);
        for (const auto& [key, c] : cells_) {
            out << fmt_num(static_cast<double>(key.first) * secs) << ',' << key.second << ',' << fmt_num(c.msgs)
                << ',' << fmt_num(c.bits) << '\n';
        }
    }

    static std::string fmt_num(double v) {
        if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<std::int64_t>(v));
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return buf;
    }

private:
    Time window_;
    std::map<std::pair<std::int64_t, std::uint16_t>, Cell> cells_;
};

inline void write_cdf_csv(std::ostream& out, std::span<const Time> samples) {
    out << "bucket_ms,cum_fraction\n";
    if (samples.empty()) return;
    for (const auto& row : latency_cdf(samples)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", row.cum_fraction);
        out << row.bucket_ms << ',' << buf << '\n';
    }
}

struct Event {
    Time t{0};
    std::string kind;
    std::string detail;
};

inline void write_events_csv(std::ostream& out, std::span<const Event> events) {
    out << "t_s,kind,detail\n";
    for (const auto& e : events) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", to_seconds(e.t));
        std::string d = e.detail;
        if (d.find_first_of(",\"") != std::string::npos) {
            std::string q = "\"";
            for (char c : d) q += c == '"' ? std::string("\"\"") : std::string(1, c);
            d = q + "\"";
        }
        out << buf << ',' << e.kind << ',' << d << '\n';
    }
}

/// Number of separated latency clusters: runs of buckets holding at least
/// `min_share` of the samples, split wherever `gap_ms` or more consecutive
/// buckets fall below that share.
inline std::size_t latency_modes(std::span<const Time> samples, double min_share = 0.01, std::uint64_t gap_ms = 3) {
    if (samples.empty()) return 0;
    const auto h = latency_histogram(samples);
    const auto threshold = min_share * static_cast<double>(samples.size());
    std::size_t modes = 0;
    std::optional<std::uint64_t> last_dense;
    for (const auto& [b, n] : h) {
        if (static_cast<double>(n) < threshold) continue;
        if (!last_dense || b - *last_dense > gap_ms) ++modes;
        last_dense = b;
    }
    return modes;
}

}  // namespace mrp::metrics
