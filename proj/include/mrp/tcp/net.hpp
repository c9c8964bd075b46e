#pragma once

#include "mrp/core.hpp"
#include "mrp/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace mrp::tcp {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    /// "host:port"; a bare port means localhost.
    static Endpoint parse(const std::string& s) {
        Endpoint e;
        auto colon = s.rfind(':');
        const auto port = colon == std::string::npos ? s : s.substr(colon + 1);
        if (colon != std::string::npos && colon > 0) e.host = s.substr(0, colon);
        try {
            auto p = std::stoul(port);
            if (p > 65535) throw std::out_of_range(port);
            e.port = static_cast<std::uint16_t>(p);
        } catch (const std::exception&) {
            throw std::invalid_argument("bad endpoint '" + s + "'");
        }
        return e;
    }

    std::string str() const { return host + ":" + std::to_string(port); }

    sockaddr_in sockaddr() const {
        sockaddr_in a{};
        a.sin_family = AF_INET;
        a.sin_port = htons(port);
        if (inet_pton(AF_INET, host.c_str(), &a.sin_addr) != 1) {
            addrinfo hints{};
            hints.ai_family = AF_INET;
            addrinfo* res = nullptr;
            if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res)
                throw Error(Errc::NotConnected, "cannot resolve " + host);
            a.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
            freeaddrinfo(res);
        }
        return a;
    }
};

inline Time steady_now() {
    return std::chrono::duration_cast<Time>(std::chrono::steady_clock::now().time_since_epoch());
}

inline void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

inline int tcp_listen(const Endpoint& e) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw Error(Errc::BindFailure, std::strerror(errno));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    auto a = e.sockaddr();
    if (::bind(fd, reinterpret_cast<::sockaddr*>(&a), sizeof a) != 0 || ::listen(fd, 128) != 0) {
        const std::string why = std::strerror(errno);
        ::close(fd);
        throw Error(Errc::BindFailure, e.str() + ": " + why);
    }
    set_nonblocking(fd);
    return fd;
}

/// Port actually bound (useful after binding port 0).
inline std::uint16_t bound_port(int fd) {
    sockaddr_in a{};
    socklen_t len = sizeof a;
    ::getsockname(fd, reinterpret_cast<::sockaddr*>(&a), &len);
    return ntohs(a.sin_port);
}

/// Blocking connect; the returned socket is non-blocking.
inline int tcp_connect(const Endpoint& e) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw Error(Errc::NotConnected, std::strerror(errno));
    auto a = e.sockaddr();
    if (::connect(fd, reinterpret_cast<::sockaddr*>(&a), sizeof a) != 0) {
        const std::string why = std::strerror(errno);
        ::close(fd);
        throw Error(Errc::NotConnected, e.str() + ": " + why);
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    set_nonblocking(fd);
    return fd;
}

inline int udp_bind(const Endpoint& e) {
    int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd < 0) throw Error(Errc::BindFailure, std::strerror(errno));
    auto a = e.sockaddr();
    if (::bind(fd, reinterpret_cast<::sockaddr*>(&a), sizeof a) != 0) {
        const std::string why = std::strerror(errno);
        ::close(fd);
        throw Error(Errc::BindFailure, e.str() + ": " + why);
    }
    set_nonblocking(fd);
    return fd;
}

/// Single-threaded poll loop over framed TCP connections, one UDP socket
/// and periodic timers. Only post() may be called from other threads.
class Reactor {
public:
    using ConnId = std::uint64_t;

    std::function<void(ConnId, wire::Frame&&)> on_frame;
    std::function<void(ConnId)> on_close;
    std::function<void(std::span<const std::uint8_t>)> on_datagram;

    Reactor() {
        if (::pipe(wake_) != 0) throw Error(Errc::BindFailure, "pipe");
        set_nonblocking(wake_[0]);
        set_nonblocking(wake_[1]);
    }
    ~Reactor() {
        for (auto& [_, c] : conns_) ::close(c.fd);
        for (int fd : listeners_) ::close(fd);
        if (udp_ >= 0) ::close(udp_);
        ::close(wake_[0]);
        ::close(wake_[1]);
    }
    Reactor(const Reactor&) = delete;
    Reactor& operator=(const Reactor&) = delete;

    Time now() const { return steady_now(); }

    void listen(int fd) { listeners_.push_back(fd); }
    void set_udp(int fd) { udp_ = fd; }

    ConnId adopt(int fd) {
        const auto id = ++next_conn_;
        conns_[id].fd = fd;
        return id;
    }

    ConnId connect(const Endpoint& e) { return adopt(tcp_connect(e)); }

    bool alive(ConnId c) const { return conns_.contains(c); }

    void send(ConnId c, const wire::Frame& f) {
        auto it = conns_.find(c);
        if (it == conns_.end()) return;
        auto bytes = wire::encode(f);
        auto& out = it->second.out;
        out.insert(out.end(), bytes.begin(), bytes.end());
        flush(it->second);
    }

    void send_datagram(const Endpoint& to, const wire::Frame& f) {
        if (udp_ < 0) return;
        auto bytes = wire::encode(f);
        auto a = to.sockaddr();
        // best effort: a full socket buffer drops the reply
        ::sendto(udp_, bytes.data(), bytes.size(), 0, reinterpret_cast<::sockaddr*>(&a), sizeof a);
    }

    void close(ConnId c) {
        auto it = conns_.find(c);
        if (it == conns_.end()) return;
        ::close(it->second.fd);
        conns_.erase(it);
        if (on_close) on_close(c);
    }

    /// Runs `fn` every `period`, first after one period.
    void every(Time period, std::function<void()> fn) { timers_.push_back({now() + period, period, std::move(fn)}); }

    /// Runs `fn` on the loop thread. Thread-safe.
    void post(std::function<void()> fn) {
        {
            std::lock_guard lock(posted_mu_);
            posted_.push_back(std::move(fn));
        }
        char b = 1;
        [[maybe_unused]] auto n = ::write(wake_[1], &b, 1);
    }

    void stop() {
        stopping_ = true;
        post([] {});
    }
    bool stopping() const { return stopping_; }

    void run() {
        while (!stopping_) run_once(std::chrono::milliseconds(100));
    }

    void run_once(Time max_wait) {
        std::vector<pollfd> fds;
        std::vector<ConnId> ids;
        fds.push_back({wake_[0], POLLIN, 0});
        ids.push_back(0);
        for (int l : listeners_) {
            fds.push_back({l, POLLIN, 0});
            ids.push_back(0);
        }
        if (udp_ >= 0) {
            fds.push_back({udp_, POLLIN, 0});
            ids.push_back(0);
        }
        const auto first_conn = fds.size();
        for (auto& [id, c] : conns_) {
            fds.push_back({c.fd, static_cast<short>(POLLIN | (c.out.size() > c.sent ? POLLOUT : 0)), 0});
            ids.push_back(id);
        }
        auto wait = max_wait;
        const auto t = now();
        for (const auto& tm : timers_) wait = std::min(wait, std::max(Time{0}, tm.next - t));
        const int ms = static_cast<int>((wait.count() + 999'999) / 1'000'000);
        if (::poll(fds.data(), fds.size(), ms) < 0 && errno != EINTR) return;

        if (fds[0].revents & POLLIN) {
            char buf[256];
            while (::read(wake_[0], buf, sizeof buf) > 0) {
            }
            std::vector<std::function<void()>> work;
            {
                std::lock_guard lock(posted_mu_);
                work.swap(posted_);
            }
            for (auto& w : work) w();
        }
        for (std::size_t i = 1; i <= listeners_.size(); ++i) {
            if (!(fds[i].revents & POLLIN)) continue;
            while (true) {
                int fd = ::accept(fds[i].fd, nullptr, nullptr);
                if (fd < 0) break;
                int one = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                set_nonblocking(fd);
                adopt(fd);
            }
        }
        if (udp_ >= 0 && (fds[first_conn - 1].revents & POLLIN)) {
            std::vector<std::uint8_t> buf(65536);
            while (true) {
                auto n = ::recv(udp_, buf.data(), buf.size(), 0);
                if (n <= 0) break;
                if (on_datagram) on_datagram(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)));
            }
        }
        for (std::size_t i = first_conn; i < fds.size(); ++i) {
            auto it = conns_.find(ids[i]);
            if (it == conns_.end()) continue;
            if (fds[i].revents & POLLOUT) flush(it->second);
            if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) read_from(ids[i]);
        }
        const auto after = now();
        for (std::size_t i = 0; i < timers_.size(); ++i) {
            if (timers_[i].next > after) continue;
            timers_[i].next = after + timers_[i].period;
            auto fn = timers_[i].fn;  // the callback may add timers
            fn();
        }
        for (auto c : to_close_) close(c);
        to_close_.clear();
    }

private:
    struct Conn {
        int fd = -1;
        wire::FrameAssembler in;
        std::vector<std::uint8_t> out;
        std::size_t sent = 0;
        bool broken = false;
    };
    struct Timer {
        Time next;
        Time period;
        std::function<void()> fn;
    };

    void flush(Conn& c) {
        while (c.sent < c.out.size()) {
            auto n = ::send(c.fd, c.out.data() + c.sent, c.out.size() - c.sent, MSG_NOSIGNAL);
            if (n > 0) {
                c.sent += static_cast<std::size_t>(n);
                continue;
            }
            if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
            c.broken = true;
            break;
        }
        if (c.sent == c.out.size()) {
            c.out.clear();
            c.sent = 0;
        } else if (c.sent > (1u << 20)) {
            c.out.erase(c.out.begin(), c.out.begin() + static_cast<std::ptrdiff_t>(c.sent));
            c.sent = 0;
        }
        if (c.broken) {
            for (auto& [id, x] : conns_)
                if (&x == &c) to_close_.push_back(id);
        }
    }

    void read_from(ConnId id) {
        std::uint8_t buf[65536];
        while (true) {
            auto it = conns_.find(id);
            if (it == conns_.end()) return;
            auto n = ::recv(it->second.fd, buf, sizeof buf, 0);
            if (n > 0) {
                it->second.in.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
                try {
                    while (true) {
                        auto itc = conns_.find(id);
                        if (itc == conns_.end()) return;
                        auto f = itc->second.in.next();
                        if (!f) break;
                        if (on_frame) on_frame(id, std::move(*f));
                    }
                } catch (const Error&) {
                    to_close_.push_back(id);  // malformed stream
                    return;
                }
                continue;
            }
            if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
            to_close_.push_back(id);
            return;
        }
    }

    std::map<ConnId, Conn> conns_;
    std::vector<int> listeners_;
    int udp_ = -1;
    int wake_[2]{-1, -1};
    ConnId next_conn_ = 0;
    std::vector<Timer> timers_;
    std::vector<ConnId> to_close_;
    std::mutex posted_mu_;
    std::vector<std::function<void()>> posted_;
    std::atomic<bool> stopping_{false};
};

}  // namespace mrp::tcp
