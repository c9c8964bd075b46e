#pragma once

#include "mrp/core.hpp"
#include "mrp/value.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

namespace mrp {

/// Source of "now" for a process. In simulation this wraps virtual time
/// plus a per-node skew.
class ClockSource {
public:
    virtual ~ClockSource() = default;
    virtual Time now() const = 0;
};

class SteadyClock final : public ClockSource {
public:
    Time now() const override {
        return std::chrono::duration_cast<Time>(std::chrono::steady_clock::now().time_since_epoch());
    }
};

/// Wall clock for TCP mode, where coordinators on different hosts share an
/// epoch through NTP.
class SystemClock final : public ClockSource {
public:
    Time now() const override {
        return std::chrono::duration_cast<Time>(std::chrono::system_clock::now().time_since_epoch());
    }
};

class SkewedClock final : public ClockSource {
public:
    SkewedClock(std::function<Time()> base, Time skew) : base_(std::move(base)), skew_(skew) {}
    Time now() const override { return base_() + skew_; }
    Time skew() const noexcept { return skew_; }

private:
    std::function<Time()> base_;
    Time skew_;
};

enum class CompensationMode { Off, Auto, NegAuto, Fixed };

struct Compensation {
    CompensationMode mode = CompensationMode::Off;
    Time fixed{0};

    /// Parses "off", "auto", "neg-auto" or "fixed:<ms>".
    static Compensation parse(std::string_view s) {
        if (s == "off") return {CompensationMode::Off, {}};
        if (s == "auto") return {CompensationMode::Auto, {}};
        if (s == "neg-auto") return {CompensationMode::NegAuto, {}};
        if (s.starts_with("fixed:")) {
            auto ms = std::stod(std::string(s.substr(6)));
            return {CompensationMode::Fixed, from_millis(ms)};
        }
        throw std::invalid_argument("compensation must be auto|off|fixed:<ms>|neg-auto, got '" +
                                    std::string(s) + "'");
    }

    std::string str() const {
        switch (mode) {
            case CompensationMode::Off: return "off";
            case CompensationMode::Auto: return "auto";
            case CompensationMode::NegAuto: return "neg-auto";
            case CompensationMode::Fixed: return "fixed:" + std::to_string(fixed.count() / 1e6);
        }
        return "off";
    }

    /// Signed time shift applied to the pacing target for a given delay estimate.
    Time applied(Time avg_delay) const noexcept {
        switch (mode) {
            case CompensationMode::Off: return Time{0};
            case CompensationMode::Auto: return avg_delay;
            case CompensationMode::NegAuto: return -avg_delay;
            case CompensationMode::Fixed: return fixed;
        }
        return Time{0};
    }
};

/// Pacing state of one ring coordinator.
///
/// `ordered_slots` and `skipped_slots` count decided slots; `inflight_slots`
/// counts slots this coordinator has proposed that are not yet decided, so a
/// tick never re-requests slots that are already on their way.
struct SkipLedger {
    double lambda = 1000.0;
    Time delta_t = std::chrono::milliseconds(5);
    Time t_ref{0};
    std::uint64_t skipped_slots = 0;
    std::uint64_t ordered_slots = 0;
    std::uint64_t inflight_slots = 0;
    Time avg_delay{0};
    Time compensation{0};

    std::uint64_t assigned_slots() const noexcept { return ordered_slots + skipped_slots + inflight_slots; }
};

/// Slots the ring should have produced by `elapsed` at rate `lambda`.
inline std::int64_t pacing_target(double lambda, Time elapsed) {
    // multiply before dividing so that integral targets come out exact
    return static_cast<std::int64_t>(std::floor(lambda * static_cast<double>(elapsed.count()) / 1e9));
}

/// Skip slots needed at `t_now` so the ring keeps pace with lambda.
inline std::uint64_t compute_skips(const SkipLedger& ledger, Time t_now) {
    if (t_now < ledger.t_ref) return 0;
    const auto target = pacing_target(ledger.lambda, t_now - ledger.t_ref);
    const auto have = static_cast<std::int64_t>(ledger.assigned_slots());
    return target > have ? static_cast<std::uint64_t>(target - have) : 0;
}

/// Same as compute_skips with the target shifted by `ledger.compensation`.
inline std::uint64_t compute_skips_compensated(const SkipLedger& ledger, Time t_now) {
    if (t_now < ledger.t_ref) return 0;
    const auto elapsed = t_now - ledger.t_ref + ledger.compensation;
    if (elapsed.count() <= 0) return 0;
    const auto target = pacing_target(ledger.lambda, elapsed);
    const auto have = static_cast<std::int64_t>(ledger.assigned_slots());
    return target > have ? static_cast<std::uint64_t>(target - have) : 0;
}

/// Exponentially weighted moving average of coordinator-to-learner delay,
/// starting from zero.
class DelayEstimator {
public:
    static constexpr double kWeight = 0.1;

    void add_sample(Time sample) noexcept {
        avg_ = kWeight * to_seconds(sample) + (1.0 - kWeight) * avg_;
        ++count_;
    }
    bool has_samples() const noexcept { return count_ > 0; }
    std::size_t count() const noexcept { return count_; }
    Time value() const noexcept { return has_samples() ? from_seconds(avg_) : Time{0}; }

private:
    double avg_ = 0.0;
    std::size_t count_ = 0;
};

/// Batch form: EWMA over `samples` in order. No samples yields zero, which
/// disables compensation.
inline Time estimate_avg_delay(std::span<const Time> samples) {
    DelayEstimator e;
    for (auto s : samples) e.add_sample(s);
    return e.value();
}

/// Tick-driven skip generator run by a ring coordinator.
class SkipPacer {
public:
    SkipPacer(SkipLedger ledger, Compensation comp) : ledger_(ledger), comp_(comp) {
        if (!(ledger_.lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
        if (ledger_.delta_t.count() <= 0) throw std::invalid_argument("delta_t must be positive");
    }

    const SkipLedger& ledger() const noexcept { return ledger_; }
    const Compensation& compensation() const noexcept { return comp_; }
    DelayEstimator& estimator() noexcept { return estimator_; }

    /// Returns the skip count to propose now, if any. The count is booked as
    /// in flight until note_decided/note_abandoned.
    std::optional<std::uint64_t> on_tick(Time now, bool is_coordinator) {
        if (!is_coordinator) throw Error(Errc::NotCoordinator);
        ledger_.avg_delay = estimator_.value();
        ledger_.compensation = comp_.applied(ledger_.avg_delay);
        const auto n = comp_.mode == CompensationMode::Off ? compute_skips(ledger_, now)
                                                           : compute_skips_compensated(ledger_, now);
        if (n == 0) return std::nullopt;
        ledger_.inflight_slots += n;
        return n;
    }

    void note_proposed(std::uint64_t slots) noexcept { ledger_.inflight_slots += slots; }

    void note_abandoned(std::uint64_t slots) noexcept {
        ledger_.inflight_slots -= std::min(slots, ledger_.inflight_slots);
    }

    /// Books a decided value. `own_slots` is what this coordinator had in
    /// flight for the instance (0 if it did not propose it).
    void note_decided(const Value& v, std::uint64_t own_slots) noexcept {
        note_abandoned(own_slots);
        if (v.is_skip())
            ledger_.skipped_slots += v.skip_count();
        else
            ledger_.ordered_slots += v.slots();
    }

    /// Seeds counters from the decided prefix when taking over a ring.
    void reset_counts(std::uint64_t ordered, std::uint64_t skipped) noexcept {
        ledger_.ordered_slots = std::max(ledger_.ordered_slots, ordered);
        ledger_.skipped_slots = std::max(ledger_.skipped_slots, skipped);
        ledger_.inflight_slots = 0;
    }

private:
    SkipLedger ledger_;
    Compensation comp_;
    DelayEstimator estimator_;
};

}  // namespace mrp
