#pragma once

#include "mrp/coordinator.hpp"
#include "mrp/core.hpp"
#include "mrp/topology.hpp"
#include "mrp/value.hpp"
#include "mrp/wire.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

namespace mrp {

/// First live acceptor in ring order.
inline NodeId elect_coordinator(const TopologyView& view, GroupId group) {
    for (const auto& m : view.members(group))
        if (m.roles & kAcceptor) return m.node;
    throw Error(Errc::NoLiveAcceptor, "group " + std::to_string(group.value));
}

enum class StorageMode { InMemory, OnDiskSync, OnDiskAsync };

inline StorageMode parse_storage_mode(std::string_view s) {
    if (s == "memory") return StorageMode::InMemory;
    if (s == "disk-sync") return StorageMode::OnDiskSync;
    if (s == "disk-async") return StorageMode::OnDiskAsync;
    throw std::invalid_argument("storage must be memory|disk-sync|disk-async");
}

struct AcceptedRecord {
    Ballot ballot;
    std::uint64_t slot_base = 0;
    Value value;
};

/// Promise and vote state of one acceptor in one ring.
///
/// On-disk modes append every promise and accept to a log file and replay
/// it on construction; the sync variant fsyncs each record.
class AcceptorState {
public:
    explicit AcceptorState(StorageMode mode = StorageMode::InMemory, std::uint64_t retain_window = 100000,
                           std::filesystem::path file = {})
        : mode_(mode), retain_window_(retain_window), file_(std::move(file)) {
        if (mode_ != StorageMode::InMemory) {
            if (file_.empty()) throw std::invalid_argument("on-disk acceptor storage needs a file");
            replay();
            fd_ = ::open(file_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
            if (fd_ < 0) throw std::runtime_error("cannot open acceptor log " + file_.string());
        }
    }
    ~AcceptorState() {
        if (fd_ >= 0) ::close(fd_);
    }
    AcceptorState(const AcceptorState&) = delete;
    AcceptorState& operator=(const AcceptorState&) = delete;
    AcceptorState(AcceptorState&& o) noexcept { *this = std::move(o); }
    AcceptorState& operator=(AcceptorState&& o) noexcept {
        if (this != &o) {
            if (fd_ >= 0) ::close(fd_);
            promised_ = o.promised_;
            accepted_ = std::move(o.accepted_);
            mode_ = o.mode_;
            retain_window_ = o.retain_window_;
            file_ = std::move(o.file_);
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }

    const Ballot& promised() const noexcept { return promised_; }
    StorageMode mode() const noexcept { return mode_; }
    std::uint64_t retain_window() const noexcept { return retain_window_; }

    bool promise(const Ballot& b) {
        if (b < promised_) return false;
        if (b != promised_) {
            promised_ = b;
            persist(1, b, 0, 0, Value{});
        }
        return true;
    }

    /// Returns false (and changes nothing) if `b` is below the promise.
    bool accept(const Ballot& b, std::uint64_t instance, const Value& v, std::uint64_t slot_base) {
        if (b < promised_) return false;
        promised_ = b;
        if (instance < trimmed_below_) return true;
        accepted_[instance] = AcceptedRecord{b, slot_base, v};
        persist(2, b, instance, slot_base, v);
        trim();
        return true;
    }

    const AcceptedRecord* accepted(std::uint64_t instance) const {
        auto it = accepted_.find(instance);
        return it == accepted_.end() ? nullptr : &it->second;
    }

    std::vector<wire::AcceptedEntry> accepted_from(std::uint64_t from) const {
        std::vector<wire::AcceptedEntry> out;
        for (auto it = accepted_.lower_bound(from); it != accepted_.end(); ++it)
            out.push_back(wire::AcceptedEntry{it->first, it->second.ballot, it->second.slot_base, it->second.value});
        return out;
    }

    std::size_t size() const noexcept { return accepted_.size(); }
    std::uint64_t retained_from() const noexcept {
        return accepted_.empty() ? trimmed_below_ : accepted_.begin()->first;
    }

private:
    void trim() {
        if (accepted_.empty()) return;
        const auto top = accepted_.rbegin()->first;
        if (top + 1 <= retain_window_) return;
        const auto floor = top + 1 - retain_window_;
        trimmed_below_ = std::max(trimmed_below_, floor);
        accepted_.erase(accepted_.begin(), accepted_.lower_bound(floor));
    }

    void persist(std::uint8_t kind, const Ballot& b, std::uint64_t instance, std::uint64_t base, const Value& v) {
        if (fd_ < 0) return;
        wire::Writer w;
        w.u32(0);
        w.u8(kind);
        w.u32(b.round);
        w.u16(b.node.value);
        w.u64(instance);
        w.u64(base);
        w.u8(static_cast<std::uint8_t>(v.kind()));
        wire::write_value_body(w, v);
        w.patch_u32(0, static_cast<std::uint32_t>(w.size() - 4));
        const auto& buf = w.buffer();
        std::size_t off = 0;
        while (off < buf.size()) {
            auto n = ::write(fd_, buf.data() + off, buf.size() - off);
            if (n <= 0) throw std::runtime_error("acceptor log write failed");
            off += static_cast<std::size_t>(n);
        }
        if (mode_ == StorageMode::OnDiskSync) ::fdatasync(fd_);
    }

    void replay() {
        if (!std::filesystem::exists(file_)) return;
        std::vector<std::uint8_t> data(std::filesystem::file_size(file_));
        int fd = ::open(file_.c_str(), O_RDONLY);
        if (fd < 0) return;
        std::size_t off = 0;
        while (off < data.size()) {
            auto n = ::read(fd, data.data() + off, data.size() - off);
            if (n <= 0) break;
            off += static_cast<std::size_t>(n);
        }
        ::close(fd);
        wire::Reader r(std::span(data.data(), off));
        while (r.remaining() >= 4) {
            auto len = r.u32();
            if (r.remaining() < len) break;  // torn tail from an async write
            wire::Reader rec(r.bytes(len));
            auto kind = rec.u8();
            Ballot b;
            b.round = rec.u32();
            b.node.value = rec.u16();
            auto instance = rec.u64();
            auto base = rec.u64();
            auto v = wire::read_value_body(rec, wire::checked_kind(rec.u8()));
            promised_ = std::max(promised_, b);
            if (kind == 2) accepted_[instance] = AcceptedRecord{b, base, std::move(v)};
        }
        trim();
    }

    Ballot promised_{};
    std::map<std::uint64_t, AcceptedRecord> accepted_;
    std::uint64_t trimmed_below_ = 0;
    StorageMode mode_ = StorageMode::InMemory;
    std::uint64_t retain_window_ = 100000;
    std::filesystem::path file_;
    int fd_ = -1;
};

/// Decided values known to one ring member.
///
/// The log covers instances from `start()`; the gap-free prefix
/// [start, contiguous_end) has slot positions computed locally. Entries past
/// a gap are held until the gap is filled.
class RingLog {
public:
    struct Entry {
        Value value;
        std::uint64_t slot_hint = 0;
        bool circulated = false;
    };

    std::uint64_t start() const noexcept { return start_; }
    std::uint64_t contiguous_end() const noexcept { return contiguous_end_; }
    std::uint64_t prefix_slots() const noexcept { return prefix_slots_; }
    bool base_known() const noexcept { return base_known_; }
    std::uint64_t trimmed_below() const noexcept { return trimmed_below_; }
    std::uint64_t app_slots() const noexcept { return app_slots_; }
    std::uint64_t skip_slots() const noexcept { return skip_slots_; }

    /// Restarts the log at `instance`. With no base, the first entry's hint
    /// becomes the slot position of `instance`.
    void reset(std::uint64_t instance, std::optional<std::uint64_t> base) {
        entries_.erase(entries_.begin(), entries_.lower_bound(instance));
        start_ = contiguous_end_ = instance;
        trimmed_below_ = std::max(trimmed_below_, instance);
        base_known_ = base.has_value();
        prefix_slots_ = base.value_or(0);
    }

    bool knows(std::uint64_t instance) const { return entries_.contains(instance); }
    const Entry* find(std::uint64_t instance) const {
        auto it = entries_.find(instance);
        return it == entries_.end() ? nullptr : &it->second;
    }
    Entry* find(std::uint64_t instance) {
        auto it = entries_.find(instance);
        return it == entries_.end() ? nullptr : &it->second;
    }

    /// Returns true when the instance was not known before.
    bool learn(std::uint64_t instance, const Value& v, std::uint64_t slot_hint) {
        if (instance < start_) return false;
        auto [it, fresh] = entries_.try_emplace(instance, Entry{v, slot_hint, false});
        if (!fresh) return false;
        if (v.is_skip())
            skip_slots_ += v.skip_count();
        else
            app_slots_ += v.slots();
        return true;
    }

    /// Advances the gap-free prefix, calling sink(instance, value, slot_base)
    /// for each newly contiguous entry. Returns the number of hint mismatches.
    template <typename Sink>
    std::uint64_t advance(Sink&& sink) {
        std::uint64_t mismatches = 0;
        for (auto it = entries_.find(contiguous_end_); it != entries_.end() && it->first == contiguous_end_;
             it = entries_.find(contiguous_end_)) {
            if (!base_known_) {
                prefix_slots_ = it->second.slot_hint;
                base_known_ = true;
            }
            if (it->second.slot_hint != prefix_slots_) ++mismatches;
            sink(it->first, it->second.value, prefix_slots_);
            prefix_slots_ += it->second.value.slots();
            ++contiguous_end_;
        }
        return mismatches;
    }

    /// Smallest known instance above the prefix, if any.
    std::optional<std::uint64_t> first_after_gap() const {
        auto it = entries_.upper_bound(contiguous_end_);
        if (it == entries_.end()) return std::nullopt;
        return it->first;
    }
    std::optional<std::uint64_t> highest() const {
        if (entries_.empty()) return std::nullopt;
        return entries_.rbegin()->first;
    }

    void trim(std::uint64_t retain) {
        if (contiguous_end_ <= retain) return;
        const auto floor = contiguous_end_ - retain;
        if (floor <= trimmed_below_) return;
        entries_.erase(entries_.begin(), entries_.lower_bound(floor));
        trimmed_below_ = floor;
    }

private:
    std::map<std::uint64_t, Entry> entries_;
    std::uint64_t start_ = 0;
    std::uint64_t contiguous_end_ = 0;
    std::uint64_t prefix_slots_ = 0;
    bool base_known_ = true;
    std::uint64_t trimmed_below_ = 0;
    std::uint64_t app_slots_ = 0;
    std::uint64_t skip_slots_ = 0;
};

struct RingConfig {
    std::size_t batch_max_bytes = 32768;
    std::size_t window = 1000;
    std::uint64_t retain_window = 100000;
    Time retry_timeout = std::chrono::milliseconds(1000);
    Time fetch_timeout = std::chrono::milliseconds(50);
    std::uint64_t fetch_chunk = 256;
    bool pacing = true;
    double lambda = 1000.0;
    Time delta_t = std::chrono::milliseconds(5);
    Time t_ref{0};
    Compensation compensation{};
    Time delay_report_interval = std::chrono::milliseconds(20);
    Time resend_horizon = std::chrono::milliseconds(1000);
    std::size_t resend_max_frames = 4096;
    StorageMode storage = StorageMode::InMemory;
    std::filesystem::path storage_dir;
};

/// Callbacks a RingReplica uses to reach the outside world.
class RingEnv {
public:
    virtual ~RingEnv() = default;
    /// Local clock (may be skewed).
    virtual Time now() const = 0;
    virtual void send(NodeId to, wire::Frame frame) = 0;
    /// Gap-free, in-order decided values for the learner.
    virtual void deliver(GroupId, std::uint64_t instance, const Value&, std::uint64_t slot_base) = 0;
    /// Every first-time learn of a decision, in whatever order it happens.
    virtual void learned(GroupId, std::uint64_t, const Value&) {}
    /// The log was restarted at `instance` after an unrecoverable gap.
    virtual void log_reset(GroupId, std::uint64_t) {}
};

struct RingCounters {
    std::uint64_t fetch_requests_sent = 0;
    std::uint64_t fetch_requests_served = 0;
    std::uint64_t fetch_bytes_served = 0;
    std::uint64_t fetch_trimmed = 0;
    std::uint64_t slot_hint_mismatches = 0;
    std::uint64_t nacks_sent = 0;
    std::uint64_t stale_dropped = 0;
    std::uint64_t prepares = 0;
    std::uint64_t log_resets = 0;
};

enum class CoordinatorPhase { Idle, Preparing, Ready };

/// One node's participation in one ring: acceptor, learner and (when first
/// live acceptor) coordinator roles.
///
/// Phase 1 and phase 2 messages circulate along successor links with vote
/// counts embedded; once a majority has voted the frame becomes a DECISION
/// and keeps circulating so every member learns it.
class RingReplica {
public:
    RingReplica(NodeId self, GroupId group, RingConfig cfg, RingEnv& env)
        : self_(self),
          group_(group),
          cfg_(std::move(cfg)),
          env_(env),
          acceptor_(make_acceptor(cfg_, self, group)),
          pacer_(SkipLedger{cfg_.lambda, cfg_.delta_t, cfg_.t_ref}, cfg_.compensation) {}

    NodeId self() const noexcept { return self_; }
    GroupId group() const noexcept { return group_; }
    const RingConfig& config() const noexcept { return cfg_; }
    const AcceptorState& acceptor() const noexcept { return acceptor_; }
    const RingLog& log() const noexcept { return log_; }
    const SkipPacer& pacer() const noexcept { return pacer_; }
    const RingCounters& counters() const noexcept { return counters_; }
    const TopologyView& view() const noexcept { return view_; }
    CoordinatorPhase phase() const noexcept { return phase_; }
    const Ballot& ballot() const noexcept { return ballot_; }
    std::size_t inflight() const noexcept { return inflight_.size(); }
    std::size_t pending_submissions() const noexcept { return pending_.size(); }

    bool in_ring() const { return view_.has_group(group_) && view_.contains(group_, self_); }
    Roles roles() const { return view_.has_group(group_) ? view_.roles_of(group_, self_).value_or(0) : 0; }
    bool is_acceptor() const { return roles() & kAcceptor; }
    bool is_learner() const { return roles() & kLearner; }
    bool is_coordinator() const { return coordinator_ == self_ && in_ring(); }
    std::optional<NodeId> coordinator() const { return coordinator_; }

    void set_fetch_enabled(bool on) { fetch_enabled_ = on; }
    bool fetch_enabled() const noexcept { return fetch_enabled_; }

    /// Listener mode: ignore everything until the next DECISION frame, then
    /// start the log there. Fetching is disabled.
    void listen_from_next_decision() {
        listening_ = true;
        fetch_enabled_ = false;
    }
    bool listening() const noexcept { return listening_; }

    /// Restarts the log at `instance`; the slot base is taken from the first
    /// value that arrives for it.
    void start_log_at(std::uint64_t instance) {
        log_.reset(instance, std::nullopt);
        listening_ = false;
    }

    // ---------------------------------------------------------------- view

    void on_view(const TopologyView& view) {
        if (view.epoch < view_.epoch) return;
        const bool was_coordinator = is_coordinator();
        const auto old_successor = in_ring() ? successor() : std::nullopt;
        const auto old_members = view_.has_group(group_) ? view_.members(group_) : std::vector<RingMember>{};
        view_ = view;
        if (!view_.has_group(group_)) return;
        const bool members_changed = view_.members(group_) != old_members;
        std::optional<NodeId> coord;
        try {
            coord = elect_coordinator(view_, group_);
        } catch (const Error&) {
        }
        coordinator_ = coord;
        if (!in_ring()) {
            if (was_coordinator) step_down();
            return;
        }
        const auto new_successor = successor();
        if (old_successor && new_successor && *new_successor != *old_successor && *new_successor != self_)
            resend_recent(*new_successor);
        if (is_coordinator()) {
            if (!was_coordinator || phase_ == CoordinatorPhase::Idle) {
                become_coordinator();
            } else if (members_changed) {
                resend_after_view_change();
            }
        } else if (was_coordinator) {
            step_down();
        }
    }

    // ------------------------------------------------------- coordinator ops

    /// Starts phase 1 for every instance from `from` with `ballot`.
    void prepare_range(Ballot ballot, std::uint64_t from) {
        if (!is_coordinator()) throw Error(Errc::NotCoordinator);
        if (ballot < acceptor_.promised()) throw Error(Errc::Preempted);
        ++counters_.prepares;
        ballot_ = ballot;
        max_round_seen_ = std::max(max_round_seen_, ballot.round);
        phase_ = CoordinatorPhase::Preparing;
        prepare_from_ = from;
        prepare_started_ = env_.now();
        acceptor_.promise(ballot);
        wire::Frame f;
        f.type = wire::FrameType::Phase1A;
        f.group = group_;
        f.ballot = ballot;
        f.instance = from;
        add_vote(f);
        f.accepted = acceptor_.accepted_from(from);
        f.ttl = ring_ttl();
        if (f.voters.size() >= view_.majority(group_)) {
            adopt(f);
            return;
        }
        send_successor(std::move(f));
    }

    /// Assigns `v` the next instance and starts phase 2. Returns nullopt
    /// when the flow-control window is full; the value is queued then.
    std::optional<std::uint64_t> propose(Value v) {
        if (!is_coordinator()) throw Error(Errc::NotCoordinator);
        if (phase_ != CoordinatorPhase::Ready) throw Error(Errc::NoPromisedRange);
        if (v.is_app() && app_inflight_ >= cfg_.window) {
            blocked_.push_back(std::move(v));
            return std::nullopt;
        }
        const auto instance = next_instance_++;
        const auto base = next_slot_base_;
        next_slot_base_ += v.slots();
        start_phase2(instance, std::move(v), base);
        return instance;
    }

    /// Client entry point: queue at the coordinator or forward to it.
    void submit(Submission s) {
        if (is_coordinator()) {
            pending_.push_back(std::move(s));
            pump();
        } else if (coordinator_) {
            wire::Frame f;
            f.type = wire::FrameType::ClientSubmit;
            f.group = group_;
            f.value = Value::app({std::move(s)});
            env_.send(*coordinator_, std::move(f));
        }
    }

    /// Pacing tick; proposes one Skip when the ring is behind lambda.
    std::optional<std::uint64_t> pacing_tick() {
        if (!is_coordinator()) throw Error(Errc::NotCoordinator);
        if (!cfg_.pacing || phase_ != CoordinatorPhase::Ready) return std::nullopt;
        if (fresh_delay_samples_) {
            Time worst{0};
            for (const auto& [_, s] : delay_samples_) worst = std::max(worst, s);
            pacer_.estimator().add_sample(worst);
            fresh_delay_samples_ = false;
        }
        auto n = pacer_.on_tick(env_.now(), true);
        if (!n) return std::nullopt;
        const auto instance = next_instance_++;
        const auto base = next_slot_base_;
        next_slot_base_ += *n;
        start_phase2(instance, Value::skip(*n), base, /*booked=*/true);
        return instance;
    }

    /// Timers: phase retries, gap fetches, delay reports, trimming.
    void housekeeping() {
        const auto now = env_.now();
        if (is_coordinator()) {
            if (phase_ == CoordinatorPhase::Preparing && now - prepare_started_ > cfg_.retry_timeout) {
                prepare_range(next_ballot(), log_.contiguous_end());
            } else if (phase_ == CoordinatorPhase::Ready) {
                for (auto& [inst, p] : inflight_) {
                    if (now - p.sent_at > cfg_.retry_timeout) {
                        p.sent_at = now;
                        send_phase2(inst, p.value, p.slot_base);
                    }
                }
                pump();
            }
        }
        check_gap(now);
        maybe_report_delay(now);
        log_.trim(cfg_.retain_window);
    }

    /// Decided values in [from, to] from this member's log.
    std::vector<Decision> fetch_decisions(std::uint64_t from, std::uint64_t to) const {
        if (from < log_.trimmed_below() || from < log_.start()) throw Error(Errc::Trimmed);
        std::vector<Decision> out;
        for (auto i = from; i <= to; ++i) {
            const auto* e = log_.find(i);
            if (!e) throw Error(Errc::Undecided, std::to_string(i));
            out.push_back(Decision{group_, i, e->value});
        }
        return out;
    }

    /// Asks an acceptor for decided instances [from, to].
    void request_fetch(std::uint64_t from, std::uint64_t to) {
        auto target = fetch_target();
        if (!target) return;
        wire::Frame f;
        f.type = wire::FrameType::Fetch;
        f.group = group_;
        f.instance = from;
        f.range_end = to;
        ++counters_.fetch_requests_sent;
        fetch_outstanding_since_ = env_.now();
        fetch_pending_end_ = to;
        env_.send(*target, std::move(f));
    }

    // -------------------------------------------------------------- frames

    void on_frame(NodeId from, const wire::Frame& f) {
        using wire::FrameType;
        switch (f.type) {
            case FrameType::Phase1A: on_phase1a(f); break;
            case FrameType::Phase1B: on_phase1b(f); break;
            case FrameType::Phase2: on_phase2(f); break;
            case FrameType::Decision: on_decision(f); break;
            case FrameType::Fetch: on_fetch(from, f); break;
            case FrameType::FetchReply: on_fetch_reply(f); break;
            case FrameType::Nack: on_nack(f); break;
            case FrameType::ClientSubmit:
                for (const auto& s : f.value.batch()) submit(s);
                break;
            case FrameType::DelayReport: on_delay_report(from, f); break;
            default: break;
        }
    }

private:
    struct Inflight {
        Value value;
        std::uint64_t slot_base = 0;
        Time sent_at{0};
        bool booked = false;  // slots already booked in the pacer
    };

    static AcceptorState make_acceptor(const RingConfig& cfg, NodeId self, GroupId g) {
        std::filesystem::path file;
        if (cfg.storage != StorageMode::InMemory)
            file = cfg.storage_dir /
                   ("acceptor_" + std::to_string(self.value) + "_g" + std::to_string(g.value) + ".log");
        return AcceptorState(cfg.storage, cfg.retain_window, file);
    }

    std::optional<NodeId> successor() const {
        if (!view_.has_group(group_)) return std::nullopt;
        return view_.successor(group_, self_);
    }

    std::uint8_t ring_ttl() const {
        const auto n = view_.has_group(group_) ? view_.members(group_).size() : 1;
        return static_cast<std::uint8_t>(std::min<std::size_t>(255, 2 * n + 2));
    }

    void send_successor(wire::Frame f) {
        auto s = successor();
        if (!s) return;
        if (*s == self_) {
            // single-member ring: the frame has come all the way round
            return;
        }
        const auto now = env_.now();
        while (!recent_.empty() &&
               (recent_.size() >= cfg_.resend_max_frames || now - recent_.front().first > cfg_.resend_horizon))
            recent_.pop_front();
        if (cfg_.resend_max_frames > 0) recent_.emplace_back(now, f);
        env_.send(*s, std::move(f));
    }

    /// Frames sent to a successor that has just been replaced may have been
    /// lost with it; hand them to the new successor.
    void resend_recent(NodeId to) {
        const auto now = env_.now();
        for (const auto& [t, f] : recent_)
            if (now - t <= cfg_.resend_horizon) env_.send(to, f);
    }

    Ballot next_ballot() {
        const auto round = std::max({max_round_seen_, acceptor_.promised().round, ballot_.round}) + 1;
        return Ballot{round, self_};
    }

    void become_coordinator() {
        pacer_.note_abandoned(pacer_.ledger().inflight_slots);
        inflight_.clear();
        app_inflight_ = 0;
        const bool genesis = max_round_seen_ == 0 && acceptor_.promised() == Ballot{} && log_.highest() == std::nullopt;
        prepare_range(genesis ? Ballot{0, self_} : next_ballot(), log_.contiguous_end());
    }

    void step_down() {
        phase_ = CoordinatorPhase::Idle;
        pacer_.note_abandoned(pacer_.ledger().inflight_slots);
        inflight_.clear();
        app_inflight_ = 0;
        // hand queued client payloads to whoever coordinates now
        auto pending = std::move(pending_);
        pending_.clear();
        for (auto& v : blocked_)
            if (v.is_app())
                for (const auto& s : v.batch()) pending.push_back(s);
        blocked_.clear();
        if (coordinator_ && *coordinator_ != self_)
            for (auto& s : pending) submit(std::move(s));
    }

    void resend_after_view_change() {
        if (phase_ == CoordinatorPhase::Preparing) {
            prepare_range(next_ballot(), log_.contiguous_end());
            return;
        }
        for (auto& [inst, p] : inflight_) {
            p.sent_at = env_.now();
            send_phase2(inst, p.value, p.slot_base);
        }
    }

    void start_phase2(std::uint64_t instance, Value v, std::uint64_t base, bool booked = false) {
        if (!booked) pacer_.note_proposed(v.slots());
        if (v.is_app()) ++app_inflight_;
        auto& p = inflight_[instance];
        p = Inflight{std::move(v), base, env_.now(), true};
        propose_times_[instance] = env_.now();
        if (propose_times_.size() > 8192) propose_times_.erase(propose_times_.begin());
        send_phase2(instance, p.value, base);
    }

    void send_phase2(std::uint64_t instance, const Value& v, std::uint64_t base) {
        if (const auto* known = log_.find(instance)) {
            // already decided here; just re-announce it
            emit_decision(instance, known->value, base, 0);
            return;
        }
        wire::Frame f;
        f.type = wire::FrameType::Phase2;
        f.group = group_;
        f.ballot = ballot_;
        f.instance = instance;
        f.value = v;
        f.slot_base = base;
        f.ttl = ring_ttl();
        if (is_acceptor()) {
            if (!acceptor_.accept(ballot_, instance, v, base)) return;
            add_vote(f);
        }
        if (f.voters.size() >= view_.majority(group_)) {
            decide_here(f);
            return;
        }
        send_successor(std::move(f));
    }

    void pump() {
        if (pumping_ || !is_coordinator() || phase_ != CoordinatorPhase::Ready) return;
        pumping_ = true;
        struct Reset {
            bool& flag;
            ~Reset() { flag = false; }
        } reset{pumping_};
        while (!blocked_.empty() && app_inflight_ < cfg_.window) {
            auto v = std::move(blocked_.front());
            blocked_.pop_front();
            propose(std::move(v));
        }
        while (!pending_.empty() && blocked_.empty() && app_inflight_ < cfg_.window) {
            std::vector<Submission> batch;
            std::size_t bytes = 0;
            while (!pending_.empty() && batch.size() < 65535) {
                const auto sz = pending_.front().payload.size();
                if (!batch.empty() && bytes + sz > cfg_.batch_max_bytes) break;
                bytes += sz;
                batch.push_back(std::move(pending_.front()));
                pending_.pop_front();
            }
            propose(Value::app(std::move(batch)));
        }
    }

    // ------------------------------------------------------------- phase 1

    void on_phase1a(const wire::Frame& in) {
        note_round(in.ballot);
        if (in.ballot.node == self_) {
            // came all the way round without a majority
            return;
        }
        wire::Frame f = in;
        if (f.ttl == 0) return;
        --f.ttl;
        if (is_acceptor()) {
            if (!acceptor_.promise(f.ballot)) {
                send_nack(f.ballot.node, f.instance);
                return;
            }
            merge_accepted(f.accepted, acceptor_.accepted_from(f.instance));
            add_vote(f);
            if (f.voters.size() >= view_.majority(group_)) f.type = wire::FrameType::Phase1B;
        }
        send_successor(std::move(f));
    }

    void on_phase1b(const wire::Frame& f) {
        note_round(f.ballot);
        if (f.ballot.node != self_) {
            if (f.ttl == 0) return;
            wire::Frame g = f;
            --g.ttl;
            send_successor(std::move(g));
            return;
        }
        if (phase_ != CoordinatorPhase::Preparing || f.ballot != ballot_ || !is_coordinator()) return;
        adopt(f);
    }

    static void merge_accepted(std::vector<wire::AcceptedEntry>& into, std::vector<wire::AcceptedEntry> mine) {
        std::map<std::uint64_t, wire::AcceptedEntry> m;
        for (auto& e : into) m.emplace(e.instance, std::move(e));
        for (auto& e : mine) {
            auto it = m.find(e.instance);
            if (it == m.end())
                m.emplace(e.instance, std::move(e));
            else if (it->second.ballot < e.ballot)
                it->second = std::move(e);
        }
        into.clear();
        for (auto& [_, e] : m) into.push_back(std::move(e));
    }

    /// Phase 1 complete: re-propose forced values, fill holes, go Ready.
    void adopt(const wire::Frame& f) {
        phase_ = CoordinatorPhase::Ready;
        std::map<std::uint64_t, const wire::AcceptedEntry*> forced;
        for (const auto& e : f.accepted)
            if (e.instance >= log_.contiguous_end()) forced[e.instance] = &e;

        std::uint64_t top = log_.contiguous_end();
        if (!forced.empty()) top = std::max(top, forced.rbegin()->first + 1);
        if (auto h = log_.highest()) top = std::max(top, *h + 1);

        std::uint64_t expected = log_.prefix_slots();
        auto known_base = [&](std::uint64_t i) -> std::optional<std::uint64_t> {
            if (const auto* e = log_.find(i)) return e->slot_hint;
            auto it = forced.find(i);
            if (it != forced.end()) return it->second->slot_base;
            return std::nullopt;
        };
        for (auto i = log_.contiguous_end(); i < top;) {
            if (const auto* e = log_.find(i)) {
                expected += e->value.slots();
                ++i;
                continue;
            }
            if (auto it = forced.find(i); it != forced.end()) {
                if (it->second->slot_base != expected) ++counters_.slot_hint_mismatches;
                start_phase2(i, it->second->value, expected);
                expected += it->second->value.slots();
                ++i;
                continue;
            }
            // hole: nobody in the quorum accepted anything here
            auto j = i + 1;
            while (j < top && !known_base(j)) ++j;
            const std::uint64_t holes = j - i;
            std::uint64_t total = holes;
            if (j < top) {
                auto b = *known_base(j);
                if (b >= expected + holes)
                    total = b - expected;
                else
                    ++counters_.slot_hint_mismatches;
            }
            for (auto h = i; h < j; ++h) {
                const std::uint64_t n = (h + 1 == j) ? total - (holes - 1) : 1;
                start_phase2(h, Value::skip(n), expected);
                expected += n;
            }
            i = j;
        }
        next_instance_ = top;
        next_slot_base_ = expected;
        pump();
    }

    // ------------------------------------------------------------- phase 2

    void on_phase2(const wire::Frame& in) {
        note_round(in.ballot);
        if (listening_) {
            forward_phase2(in);
            return;
        }
        if (const auto* known = log_.find(in.instance)) {
            emit_decision(in.instance, known->value, in.slot_base, in.votes);
            return;
        }
        if (in.ballot.node == self_ && !is_acceptor()) return;
        if (in.ballot.node == self_) {
            // back at its coordinator without reaching a majority
            return;
        }
        if (is_acceptor()) {
            if (!acceptor_.accept(in.ballot, in.instance, in.value, in.slot_base)) {
                ++counters_.stale_dropped;
                send_nack(in.ballot.node, in.instance);
                return;
            }
            wire::Frame f = in;
            add_vote(f);
            if (f.voters.size() >= view_.majority(group_)) {
                decide_here(f);
                return;
            }
            forward_phase2(f);
            return;
        }
        forward_phase2(in);
    }

    void forward_phase2(const wire::Frame& in) {
        if (in.ttl == 0) return;
        wire::Frame f = in;
        --f.ttl;
        send_successor(std::move(f));
    }

    void decide_here(const wire::Frame& f) {
        learn(f.instance, f.value, f.slot_base, true);
        emit_decision(f.instance, f.value, f.slot_base, f.votes);
    }

    void emit_decision(std::uint64_t instance, const Value& v, std::uint64_t base, std::uint8_t votes) {
        if (auto* e = log_.find(instance)) e->circulated = true;
        wire::Frame d;
        d.type = wire::FrameType::Decision;
        d.group = group_;
        d.ballot = ballot_;
        d.instance = instance;
        d.votes = votes;
        d.value = v;
        d.slot_base = base;
        d.ttl = ring_ttl();
        send_successor(std::move(d));
    }

    void on_decision(const wire::Frame& in) {
        note_round(in.ballot);
        if (listening_) {
            log_.reset(in.instance, in.slot_base);
            listening_ = false;
        }
        const auto* known = log_.find(in.instance);
        const bool already_forwarded = known && known->circulated;
        if (in.instance >= log_.start()) learn(in.instance, in.value, in.slot_base, true);
        if (already_forwarded || in.ttl == 0) return;
        if (auto* e = log_.find(in.instance)) e->circulated = true;
        wire::Frame f = in;
        --f.ttl;
        send_successor(std::move(f));
    }

    void learn(std::uint64_t instance, const Value& v, std::uint64_t hint, bool via_ring) {
        if (!log_.learn(instance, v, hint)) return;
        env_.learned(group_, instance, v);
        std::uint64_t own = 0;
        if (auto it = inflight_.find(instance); it != inflight_.end()) {
            own = it->second.value.slots();
            if (it->second.value.is_app() && app_inflight_ > 0) --app_inflight_;
            inflight_.erase(it);
        }
        pacer_.note_decided(v, own);
        if (via_ring) {
            last_learned_instance_ = instance;
            last_learned_at_ = env_.now();
        }
        counters_.slot_hint_mismatches +=
            log_.advance([&](std::uint64_t i, const Value& val, std::uint64_t base) { env_.deliver(group_, i, val, base); });
        if (!log_.first_after_gap()) gap_since_.reset();
        pump();
    }

    void note_round(const Ballot& b) { max_round_seen_ = std::max(max_round_seen_, b.round); }

    /// Votes are tracked by voter so a frame that passes an acceptor twice
    /// (possible across ring reconfigurations) is counted once.
    void add_vote(wire::Frame& f) const {
        if (std::find(f.voters.begin(), f.voters.end(), self_) == f.voters.end()) f.voters.push_back(self_);
        f.votes = static_cast<std::uint8_t>(f.voters.size());
    }

    // ---------------------------------------------------------------- nack

    void send_nack(NodeId to, std::uint64_t instance) {
        if (to == self_) return;
        wire::Frame f;
        f.type = wire::FrameType::Nack;
        f.group = group_;
        f.ballot = acceptor_.promised();
        f.instance = instance;
        ++counters_.nacks_sent;
        env_.send(to, std::move(f));
    }

    void on_nack(const wire::Frame& f) {
        note_round(f.ballot);
        if (!is_coordinator() || f.ballot <= ballot_) return;
        // preempted: retake the ring with a higher ballot
        pacer_.note_abandoned(pacer_.ledger().inflight_slots);
        inflight_.clear();
        app_inflight_ = 0;
        prepare_range(next_ballot(), log_.contiguous_end());
    }

    // --------------------------------------------------------------- fetch

    std::optional<NodeId> fetch_target() {
        if (!view_.has_group(group_)) return std::nullopt;
        std::vector<NodeId> candidates;
        for (auto a : view_.acceptors(group_))
            if (a != self_) candidates.push_back(a);
        if (candidates.empty()) return std::nullopt;
        return candidates[fetch_rotation_++ % candidates.size()];
    }

    void check_gap(Time now) {
        auto next = log_.first_after_gap();
        if (!next) {
            gap_since_.reset();
            return;
        }
        if (!gap_since_) gap_since_ = now;
        if (!fetch_enabled_) {
            if (now - *gap_since_ > 4 * cfg_.fetch_timeout) {
                ++counters_.log_resets;
                log_.reset(*next, std::nullopt);
                gap_since_.reset();
                env_.log_reset(group_, *next);
                log_.advance([&](std::uint64_t i, const Value& val, std::uint64_t base) {
                    env_.deliver(group_, i, val, base);
                });
            }
            return;
        }
        if (now - *gap_since_ < cfg_.fetch_timeout) return;
        if (fetch_outstanding_since_) {
            if (now - *fetch_outstanding_since_ < fetch_backoff()) return;
            // no reply for a whole timeout: ask someone else, waiting longer next time
            fetch_backoff_ = std::min(fetch_backoff_ + 1, 5);
        }
        const auto from = log_.contiguous_end();
        const auto to = std::min(*next - 1, from + cfg_.fetch_chunk - 1);
        request_fetch(from, to);
    }

    void on_fetch(NodeId from, const wire::Frame& req) {
        if (!is_acceptor() && !log_.knows(req.instance)) return;
        ++counters_.fetch_requests_served;
        auto reply = [&](wire::Frame f) {
            f.type = wire::FrameType::FetchReply;
            f.group = group_;
            counters_.fetch_bytes_served += wire::encoded_size(f);
            env_.send(from, std::move(f));
        };
        if (req.instance < log_.trimmed_below() || req.instance < log_.start()) {
            wire::Frame f;
            f.instance = req.instance;
            f.status = static_cast<std::uint8_t>(wire::FetchStatus::Trimmed);
            reply(std::move(f));
            return;
        }
        const auto end = std::min(req.range_end, req.instance + cfg_.fetch_chunk - 1);
        for (auto i = req.instance; i <= end; ++i) {
            const auto* e = log_.find(i);
            wire::Frame f;
            f.instance = i;
            if (!e) {
                f.status = static_cast<std::uint8_t>(wire::FetchStatus::Undecided);
                reply(std::move(f));
                return;
            }
            f.value = e->value;
            f.slot_base = e->slot_hint;
            f.status = static_cast<std::uint8_t>(wire::FetchStatus::Ok);
            reply(std::move(f));
        }
    }

    void on_fetch_reply(const wire::Frame& f) {
        switch (static_cast<wire::FetchStatus>(f.status)) {
            case wire::FetchStatus::Ok:
                learn(f.instance, f.value, f.slot_base, false);
                fetch_backoff_ = 0;
                // the rest of the chunk is still in flight; a reply counts as progress
                if (!fetch_outstanding_since_) break;
                if (!log_.first_after_gap() || log_.contiguous_end() > fetch_pending_end_)
                    fetch_outstanding_since_.reset();
                else
                    fetch_outstanding_since_ = env_.now();
                break;
            case wire::FetchStatus::Trimmed:
                ++counters_.fetch_trimmed;
                fetch_outstanding_since_.reset();
                break;
            case wire::FetchStatus::Undecided:
                fetch_outstanding_since_.reset();
                break;
        }
    }

    // --------------------------------------------------------- delay probe

    void maybe_report_delay(Time now) {
        const auto mode = cfg_.compensation.mode;
        if (mode != CompensationMode::Auto && mode != CompensationMode::NegAuto) return;
        if (!is_learner() || !coordinator_ || !last_learned_instance_) return;
        if (now - last_report_ < cfg_.delay_report_interval) return;
        if (last_reported_instance_ == last_learned_instance_) return;
        last_report_ = now;
        last_reported_instance_ = last_learned_instance_;
        wire::Writer w;
        w.i64(last_learned_at_.count());
        wire::Frame f;
        f.type = wire::FrameType::DelayReport;
        f.group = group_;
        f.instance = *last_learned_instance_;
        f.blob = w.take();
        if (*coordinator_ == self_)
            on_delay_report(self_, f);
        else
            env_.send(*coordinator_, std::move(f));
    }

    void on_delay_report(NodeId from, const wire::Frame& f) {
        if (!is_coordinator()) return;
        auto it = propose_times_.find(f.instance);
        if (it == propose_times_.end()) return;
        wire::Reader r(f.blob);
        const Time learned_at{r.i64()};
        delay_samples_[from] = std::max(Time{0}, learned_at - it->second);
        fresh_delay_samples_ = true;
    }

    NodeId self_;
    GroupId group_;
    RingConfig cfg_;
    RingEnv& env_;
    TopologyView view_;
    std::optional<NodeId> coordinator_;
    std::deque<std::pair<Time, wire::Frame>> recent_;

    AcceptorState acceptor_;
    RingLog log_;
    SkipPacer pacer_;
    RingCounters counters_;

    CoordinatorPhase phase_ = CoordinatorPhase::Idle;
    Ballot ballot_{};
    std::uint32_t max_round_seen_ = 0;
    std::uint64_t prepare_from_ = 0;
    Time prepare_started_{0};
    std::uint64_t next_instance_ = 0;
    std::uint64_t next_slot_base_ = 0;
    std::map<std::uint64_t, Inflight> inflight_;
    std::size_t app_inflight_ = 0;
    std::deque<Submission> pending_;
    std::deque<Value> blocked_;
    std::map<std::uint64_t, Time> propose_times_;
    std::map<NodeId, Time> delay_samples_;
    bool fresh_delay_samples_ = false;
    bool pumping_ = false;

    bool fetch_enabled_ = true;
    bool listening_ = false;
    std::optional<Time> gap_since_;
    std::optional<Time> fetch_outstanding_since_;
    std::uint64_t fetch_pending_end_ = 0;
    int fetch_backoff_ = 0;
    std::size_t fetch_rotation_ = 0;

    Time fetch_backoff() const { return cfg_.fetch_timeout * (1 << fetch_backoff_); }

    std::optional<std::uint64_t> last_learned_instance_;
    std::optional<std::uint64_t> last_reported_instance_;
    Time last_learned_at_{0};
    Time last_report_{-1'000'000'000'000};
};

}  // namespace mrp
