#pragma once

#include "mrp/core.hpp"
#include "mrp/value.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <vector>

namespace mrp {

class AtomicMulticast;

/// Single-consumer view of a learner's merged delivery stream, restricted to
/// its groups. Restricting the merged stream to a subset of rings yields the
/// same order as merging that subset, because the round-robin is over slots.
class Subscription {
public:
    const std::vector<GroupId>& groups() const noexcept { return groups_; }

    /// Next delivery, or nullopt when `timeout` passes first.
    std::optional<Delivery> next_delivery(Time timeout) {
        if (consuming_.exchange(true)) throw Error(Errc::ConcurrentConsumer);
        struct Release {
            std::atomic<bool>& f;
            ~Release() { f = false; }
        } release{consuming_};
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
        if (!queue_.empty()) {
            auto d = std::move(queue_.front());
            queue_.pop_front();
            return d;
        }
        if (closed_) throw Error(Errc::SubscriptionClosed);
        return std::nullopt;
    }

    /// Optional push-style surface; runs on the delivering thread instead of
    /// queueing.
    void on_delivery(std::function<void(const Delivery&)> cb) {
        std::lock_guard lock(mu_);
        callback_ = std::move(cb);
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    bool closed() const {
        std::lock_guard lock(mu_);
        return closed_;
    }

    std::size_t pending() const {
        std::lock_guard lock(mu_);
        return queue_.size();
    }

private:
    friend class AtomicMulticast;
    explicit Subscription(std::vector<GroupId> groups) : groups_(std::move(groups)) {}

    bool wants(GroupId g) const { return std::binary_search(groups_.begin(), groups_.end(), g); }

    void push(const Delivery& d) {
        std::function<void(const Delivery&)> cb;
        {
            std::lock_guard lock(mu_);
            if (closed_) return;
            if (callback_) {
                cb = callback_;
            } else {
                queue_.push_back(d);
            }
        }
        if (cb) {
            cb(d);
            return;
        }
        cv_.notify_one();
    }

    std::vector<GroupId> groups_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Delivery> queue_;
    std::function<void(const Delivery&)> callback_;
    bool closed_ = false;
    std::atomic<bool> consuming_{false};
};

/// Client-side handle of one process: submits messages and fans the local
/// learner's merged stream out to subscriptions.
class AtomicMulticast {
public:
    /// Hands a submission to the transport; throws NotConnected when down.
    using Submitter = std::function<void(GroupId, Submission)>;

    AtomicMulticast(std::uint32_t client_id, std::set<GroupId> known_groups, Submitter submit,
                    std::set<GroupId> learned_groups = {}, std::size_t max_message_size = kDefaultMaxMessageSize)
        : client_id_(client_id),
          known_(std::move(known_groups)),
          learned_(std::move(learned_groups)),
          submit_(std::move(submit)),
          max_size_(max_message_size) {}

    std::size_t max_message_size() const noexcept { return max_size_; }

    /// Safe to call from several threads.
    MessageId multicast(GroupId group, Payload payload) {
        if (payload.empty() || payload.size() > max_size_)
            throw Error(Errc::PayloadTooLarge, std::to_string(payload.size()) + " bytes");
        if (!known_.contains(group)) throw Error(Errc::UnknownGroup, std::to_string(group.value));
        if (!submit_) throw Error(Errc::NotConnected);
        const MessageId id{client_id_, next_seq_.fetch_add(1)};
        submit_(group, Submission{id, std::move(payload)});
        return id;
    }

    /// Groups are normalized to ascending order. A group may belong to only
    /// one open subscription.
    std::shared_ptr<Subscription> subscribe(const std::set<GroupId>& groups) {
        if (groups.empty()) throw Error(Errc::EmptySubscription);
        for (auto g : groups)
            if (!learned_.contains(g)) throw Error(Errc::UnknownGroup, std::to_string(g.value));
        std::lock_guard lock(mu_);
        std::erase_if(subs_, [](const auto& s) { return s->closed(); });
        for (const auto& s : subs_)
            for (auto g : groups)
                if (s->wants(g)) throw Error(Errc::AlreadySubscribed, std::to_string(g.value));
        std::shared_ptr<Subscription> sub(new Subscription(std::vector<GroupId>(groups.begin(), groups.end())));
        subs_.push_back(sub);
        return sub;
    }

    /// Called by the learner runtime for each merged delivery.
    void deliver(const Delivery& d) {
        std::vector<std::shared_ptr<Subscription>> targets;
        {
            std::lock_guard lock(mu_);
            for (const auto& s : subs_)
                if (s->wants(d.group)) targets.push_back(s);
        }
        for (const auto& s : targets) s->push(d);
    }

    void close() {
        std::lock_guard lock(mu_);
        for (const auto& s : subs_) s->close();
        subs_.clear();
    }

private:
    std::uint32_t client_id_;
    std::set<GroupId> known_;
    std::set<GroupId> learned_;
    Submitter submit_;
    std::size_t max_size_;
    std::atomic<std::uint64_t> next_seq_{0};
    std::mutex mu_;
    std::vector<std::shared_ptr<Subscription>> subs_;
};

}  // namespace mrp
