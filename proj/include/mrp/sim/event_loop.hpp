#pragma once

#include "mrp/core.hpp"

#include <cstdint>
#include <functional>
#include <queue>
#include <string>
#include <vector>

namespace mrp::sim {

/// Virtual-time scheduler. Events run in (time, insertion order) order, so a
/// run is a pure function of what gets scheduled.
class EventLoop {
public:
    using Action = std::function<void()>;

    Time now() const noexcept { return now_; }
    std::uint64_t executed() const noexcept { return executed_; }
    std::size_t pending() const noexcept { return queue_.size(); }

    void at(Time t, Action a) {
        if (t < now_) t = now_;
        queue_.push(Event{t, seq_++, std::move(a)});
    }
    void after(Time d, Action a) { at(now_ + d, std::move(a)); }

    /// Runs events up to and including time `until`; the clock ends at `until`.
    /// Throws HorizonExceeded once more than `budget` events have run in
    /// total (0 = no limit).
    void run_until(Time until, std::uint64_t budget = 0) {
        while (!queue_.empty() && queue_.top().t <= until) {
            if (budget && executed_ >= budget)
                throw Error(Errc::HorizonExceeded, std::to_string(budget) + " events before t=" +
                                                       std::to_string(to_seconds(queue_.top().t)) + " s");
            step();
        }
        if (now_ < until) now_ = until;
    }

    bool step() {
        if (queue_.empty()) return false;
        // top() is const; the action is moved out before pop
        auto& top = const_cast<Event&>(queue_.top());
        now_ = top.t;
        Action a = std::move(top.action);
        queue_.pop();
        ++executed_;
        a();
        return true;
    }

private:
    struct Event {
        Time t;
        std::uint64_t seq;
        Action action;
        bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
    };

    std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
    Time now_{0};
    std::uint64_t seq_ = 0;
    std::uint64_t executed_ = 0;
};

}  // namespace mrp::sim
