// Client-facing multicast and subscription surface.

#include "mrp/api.hpp"
#include "mrp/merge.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace mrp;

namespace {

constexpr GroupId g1{1}, g2{2}, g3{3};

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return Errc::InvalidScenario;
}

/// Loopback: each submission is decided immediately as its own instance and
/// merged with M = 1 over g1 and g2; g2 gets a Skip whenever g1 is ahead.
struct Loopback {
    MergeCursor cursor{{g1, g2}, 1};
    std::map<GroupId, std::uint64_t> next;
    std::mutex mu;
    std::unique_ptr<AtomicMulticast> api;

    Loopback() {
        api = std::make_unique<AtomicMulticast>(
            7, std::set<GroupId>{g1, g2},
            [this](GroupId g, Submission s) {
                std::lock_guard lock(mu);
                cursor.enqueue_decision(g, next[g]++, Value::app({std::move(s)}));
                const GroupId other = g == g1 ? g2 : g1;
                cursor.enqueue_decision(other, next[other]++, Value::skip(1));
                for (auto& d : cursor.try_deliver()) api->deliver(d);
            },
            std::set<GroupId>{g1, g2});
    }
};

}  // namespace

TEST(Multicast, RejectsBadPayloadSizesAndGroups) {
    AtomicMulticast api(1, {g1}, [](GroupId, Submission) {}, {g1}, 16);
    EXPECT_EQ(code_of([&] { api.multicast(g1, {}); }), Errc::PayloadTooLarge);
    EXPECT_EQ(code_of([&] { api.multicast(g1, Payload(17, 0)); }), Errc::PayloadTooLarge);
    EXPECT_NO_THROW(api.multicast(g1, Payload(16, 0)));
    EXPECT_EQ(code_of([&] { api.multicast(g2, {1}); }), Errc::UnknownGroup);
    AtomicMulticast offline(1, {g1}, nullptr);
    EXPECT_EQ(code_of([&] { offline.multicast(g1, {1}); }), Errc::NotConnected);
}

TEST(Multicast, ConcurrentCallersGetUniqueIds) {
    std::mutex mu;
    std::set<std::uint64_t> seen;
    AtomicMulticast api(3, {g1}, [&](GroupId, Submission s) {
        std::lock_guard lock(mu);
        EXPECT_EQ(s.id.client, 3u);
        EXPECT_TRUE(seen.insert(s.id.seq).second);
    });
    std::vector<std::thread> ts;
    for (int t = 0; t < 4; ++t)
        ts.emplace_back([&] {
            for (int i = 0; i < 2000; ++i) api.multicast(g1, {1});
        });
    for (auto& t : ts) t.join();
    EXPECT_EQ(seen.size(), 8000u);
}

TEST(Subscribe, NormalizesAndRejectsOverlap) {
    AtomicMulticast api(1, {g1, g2, g3}, nullptr, {g1, g2, g3});
    EXPECT_EQ(code_of([&] { api.subscribe({}); }), Errc::EmptySubscription);
    auto s = api.subscribe({g2, g1});
    EXPECT_EQ(s->groups(), (std::vector<GroupId>{g1, g2}));
    EXPECT_EQ(code_of([&] { api.subscribe({g2, g3}); }), Errc::AlreadySubscribed);
    EXPECT_EQ(code_of([&] { api.subscribe({GroupId{9}}); }), Errc::UnknownGroup);
    auto t = api.subscribe({g3});
    s->close();
    EXPECT_NO_THROW(api.subscribe({g1}));
}

TEST(Subscribe, TimesOutWhenNothingArrives) {
    AtomicMulticast api(1, {g1}, nullptr, {g1});
    auto s = api.subscribe({g1});
    const auto start = std::chrono::steady_clock::now();
    EXPECT_FALSE(s->next_delivery(std::chrono::milliseconds(20)));
    EXPECT_GE(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(19));
}

TEST(Subscribe, DeliversTheMergedStreamInOrder) {
    Loopback lb;
    auto s = lb.api->subscribe({g1, g2});
    const auto a = lb.api->multicast(g1, {1});
    const auto b = lb.api->multicast(g2, {2});
    const auto c = lb.api->multicast(g1, {3});
    auto d0 = s->next_delivery(std::chrono::seconds(1));
    ASSERT_TRUE(d0);
    EXPECT_EQ(d0->global_slot, 0u);
    EXPECT_EQ(d0->id, a);
    auto d1 = s->next_delivery(std::chrono::seconds(1));
    auto d2 = s->next_delivery(std::chrono::seconds(1));
    ASSERT_TRUE(d1 && d2);
    EXPECT_EQ(d1->id, b);
    EXPECT_EQ(d2->id, c);
    EXPECT_LT(d1->global_slot, d2->global_slot);
}

TEST(Subscribe, SubsetSeesOnlyItsGroups) {
    Loopback lb;
    auto s = lb.api->subscribe({g2});
    lb.api->multicast(g1, {1});
    const auto b = lb.api->multicast(g2, {2});
    auto d = s->next_delivery(std::chrono::seconds(1));
    ASSERT_TRUE(d);
    EXPECT_EQ(d->id, b);
    EXPECT_EQ(s->pending(), 0u);
}

TEST(Subscribe, CallbackReplacesTheQueue) {
    Loopback lb;
    auto s = lb.api->subscribe({g1, g2});
    std::vector<MessageId> got;
    s->on_delivery([&](const Delivery& d) { got.push_back(d.id); });
    const auto a = lb.api->multicast(g1, {1});
    EXPECT_EQ(got, std::vector<MessageId>{a});
    EXPECT_EQ(s->pending(), 0u);
}

TEST(Subscribe, ClosedSubscriptionThrows) {
    AtomicMulticast api(1, {g1}, nullptr, {g1});
    auto s = api.subscribe({g1});
    api.close();
    EXPECT_EQ(code_of([&] { s->next_delivery(std::chrono::milliseconds(1)); }), Errc::SubscriptionClosed);
}

TEST(Subscribe, SecondConcurrentConsumerIsRejected) {
    AtomicMulticast api(1, {g1}, nullptr, {g1});
    auto s = api.subscribe({g1});
    std::thread waiter([&] { s->next_delivery(std::chrono::milliseconds(300)); });
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    EXPECT_EQ(code_of([&] { s->next_delivery(std::chrono::milliseconds(1)); }), Errc::ConcurrentConsumer);
    waiter.join();
}
