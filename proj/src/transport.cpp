#include "csrpipe/transport.hpp"

#include <array>
#include <bit>
#include <chrono>
#include <condition_variable>
#include <list>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

static_assert(std::endian::native == std::endian::little,
              "wire and spill formats assume a little-endian host");

namespace csrpipe {
namespace {

constexpr std::size_t ch_index(Channel c) { return static_cast<std::size_t>(c) - 1; }

template <class F>
struct Finally {
    F fn;
    ~Finally() { fn(); }
};
template <class F>
Finally(F) -> Finally<F>;

struct QEntry {
    std::uint64_t seq;
    Message msg;
};

// Mailbox for one (receiver, channel): per-sender FIFO queues plus, in
// rendezvous mode, the list of posted-but-unclaimed sends.
struct Box {
    explicit Box(std::uint32_t nb) : slots(nb) {}

    struct Pending {
        std::uint64_t seq;
        std::uint32_t sender;
        const Message* msg;
        bool claimed = false;
    };
    struct Slot {
        std::deque<QEntry> q;
        bool closed = false;
    };

    std::mutex mu;
    std::condition_variable cv;
    std::vector<Slot> slots;
    std::list<Pending*> pending; // seq order
    std::uint64_t next_seq = 0;
};

// ---------------------------------------------------------------------------
// In-process hub: nb thread-group endpoints sharing mailboxes directly.
// ---------------------------------------------------------------------------

class InprocHub {
public:
    InprocHub(std::uint32_t nb, TransportConfig cfg) : nb_(nb), cfg_(cfg) {
        boxes_.reserve(nb * channel_count);
        for (std::size_t i = 0; i < nb * channel_count; ++i)
            boxes_.push_back(std::make_unique<Box>(nb));
        if (cfg_.serialize_comm)
            for (std::uint32_t i = 0; i < nb; ++i)
                serialize_.push_back(std::make_unique<std::mutex>());
    }

    void send(std::uint32_t sender, std::uint32_t receiver, const Message& msg) {
        Box& b = box(receiver, msg.channel);
        const std::string what = "box " + std::to_string(sender) + ": send(ch=" +
                                 channel_name(msg.channel) + " -> box " +
                                 std::to_string(receiver) + ")";
        std::unique_lock<std::mutex> lk(b.mu);
        if (cfg_.rendezvous) {
            Box::Pending p{b.next_seq++, sender, &msg};
            b.pending.push_back(&p);
            b.cv.notify_all();
            try {
                wait_on(b, lk, what, [&] { return p.claimed; });
            } catch (...) {
                if (!lk.owns_lock()) lk.lock();
                b.pending.remove(&p);
                throw;
            }
        } else {
            auto& slot = b.slots[sender];
            wait_on(b, lk, what, [&] { return slot.q.size() < cfg_.queue_capacity; });
            {
                auto g = serialize_guard(sender);
                QEntry e{b.next_seq++, msg};
                e.msg.sender = sender;
                slot.q.push_back(std::move(e));
            }
            b.cv.notify_all();
        }
    }

    bool recv(std::uint32_t receiver, std::uint32_t sender, Channel ch, Message& out) {
        Box& b = box(receiver, ch);
        const std::string what = "box " + std::to_string(receiver) + ": recv(ch=" +
                                 channel_name(ch) + " from box " + std::to_string(sender) + ")";
        std::unique_lock<std::mutex> lk(b.mu);
        if (cfg_.rendezvous) {
            auto find = [&] {
                for (auto it = b.pending.begin(); it != b.pending.end(); ++it)
                    if (!(*it)->claimed && (*it)->sender == sender) return it;
                return b.pending.end();
            };
            wait_on(b, lk, what,
                    [&] { return find() != b.pending.end() || b.slots[sender].closed; });
            auto it = find();
            if (it == b.pending.end()) return false;
            claim(b, it, sender, out);
            return true;
        }
        auto& slot = b.slots[sender];
        wait_on(b, lk, what, [&] { return !slot.q.empty() || slot.closed; });
        if (slot.q.empty()) return false;
        {
            auto g = serialize_guard(receiver);
            out = std::move(slot.q.front().msg);
            slot.q.pop_front();
        }
        b.cv.notify_all();
        return true;
    }

    bool recv_any(std::uint32_t receiver, Channel ch, Message& out) {
        Box& b = box(receiver, ch);
        const std::string what = "box " + std::to_string(receiver) + ": recv(ch=" +
                                 channel_name(ch) + " from ANY)";
        std::unique_lock<std::mutex> lk(b.mu);
        if (cfg_.rendezvous) {
            wait_on(b, lk, what, [&] { return !b.pending.empty() || all_closed(b); });
            if (b.pending.empty()) return false;
            auto it = b.pending.begin(); // oldest posted send
            claim(b, it, (*it)->sender, out);
            return true;
        }
        auto ready = [&]() -> Box::Slot* {
            Box::Slot* best = nullptr;
            for (auto& s : b.slots)
                if (!s.q.empty() && (!best || s.q.front().seq < best->q.front().seq)) best = &s;
            return best;
        };
        wait_on(b, lk, what, [&] { return ready() != nullptr || all_empty_and_closed(b); });
        Box::Slot* s = ready();
        if (!s) return false;
        {
            auto g = serialize_guard(receiver);
            out = std::move(s->q.front().msg);
            s->q.pop_front();
        }
        b.cv.notify_all();
        return true;
    }

    void close_channel(std::uint32_t sender, Channel ch) {
        for (std::uint32_t r = 0; r < nb_; ++r) {
            Box& b = box(r, ch);
            std::lock_guard<std::mutex> g(b.mu);
            b.slots[sender].closed = true;
            b.cv.notify_all();
        }
    }

    void abort(const std::string& reason) {
        {
            std::lock_guard<std::mutex> g(abort_mu_);
            if (abort_reason_.empty()) abort_reason_ = reason;
        }
        aborted_.store(true);
        for (auto& bp : boxes_) {
            std::lock_guard<std::mutex> g(bp->mu);
            bp->cv.notify_all();
        }
    }

private:
    Box& box(std::uint32_t receiver, Channel ch) {
        return *boxes_[receiver * channel_count + ch_index(ch)];
    }

    static bool all_closed(const Box& b) {
        for (const auto& s : b.slots)
            if (!s.closed) return false;
        return true;
    }
    static bool all_empty_and_closed(const Box& b) {
        for (const auto& s : b.slots)
            if (!s.q.empty() || !s.closed) return false;
        return true;
    }

    void claim(Box& b, std::list<Box::Pending*>::iterator it, std::uint32_t sender, Message& out) {
        auto g = serialize_guard(sender);
        out = *(*it)->msg;
        out.sender = sender;
        (*it)->claimed = true;
        b.pending.erase(it);
        b.cv.notify_all();
    }

    std::unique_lock<std::mutex> serialize_guard(std::uint32_t box_rank) {
        if (!cfg_.serialize_comm) return {};
        return std::unique_lock<std::mutex>(*serialize_[box_rank]);
    }

    std::string abort_reason() {
        std::lock_guard<std::mutex> g(abort_mu_);
        return abort_reason_.empty() ? "build aborted" : abort_reason_;
    }

    std::string wait_diagnostic() {
        std::lock_guard<std::mutex> g(reg_mu_);
        std::ostringstream os;
        os << "circular wait suspected; blocked operations:";
        for (const auto& [_, what] : waits_) os << "\n  " << what;
        return os.str();
    }

    // Blocks until pred holds. Under rendezvous a watchdog converts an
    // over-age wait into a deadlock report naming every blocked operation.
    // Throws with the lock released.
    template <class Pred>
    void wait_on(Box& b, std::unique_lock<std::mutex>& lk, const std::string& what, Pred pred) {
        if (pred()) return;
        const bool watchdog = cfg_.rendezvous && cfg_.watchdog_seconds > 0;
        std::uint64_t reg_id = 0;
        if (watchdog) {
            std::lock_guard<std::mutex> g(reg_mu_);
            reg_id = ++wait_seq_;
            waits_[reg_id] = what;
        }
        Finally unregister{[&] {
            if (watchdog) {
                std::lock_guard<std::mutex> g(reg_mu_);
                waits_.erase(reg_id);
            }
        }};
        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                  std::chrono::duration<double>(cfg_.watchdog_seconds));
        for (;;) {
            if (pred()) return;
            if (aborted_.load()) {
                lk.unlock();
                throw aborted_error(abort_reason());
            }
            if (!watchdog) {
                b.cv.wait(lk);
                continue;
            }
            if (b.cv.wait_until(lk, deadline) == std::cv_status::timeout) {
                if (pred()) return;
                if (aborted_.load()) {
                    lk.unlock();
                    throw aborted_error(abort_reason());
                }
                const std::string diag = wait_diagnostic();
                lk.unlock();
                abort("deadlock watchdog fired");
                throw deadlock_error(diag);
            }
        }
    }

    std::uint32_t nb_;
    TransportConfig cfg_;
    std::vector<std::unique_ptr<Box>> boxes_;
    std::vector<std::unique_ptr<std::mutex>> serialize_;

    std::atomic<bool> aborted_{false};
    std::mutex abort_mu_;
    std::string abort_reason_;

    std::mutex reg_mu_;
    std::map<std::uint64_t, std::string> waits_;
    std::uint64_t wait_seq_ = 0;
};

class InprocMesh final : public Mesh {
public:
    InprocMesh(std::uint32_t rank, std::uint32_t nb, std::shared_ptr<InprocHub> hub)
        : Mesh(rank, nb), hub_(std::move(hub)) {}

    void close_channel(Channel ch) override { hub_->close_channel(rank_, ch); }
    void abort(const std::string& reason) override { hub_->abort(reason); }

protected:
    void do_send(std::uint32_t receiver, const Message& msg) override {
        hub_->send(rank_, receiver, msg);
    }
    bool do_recv(std::uint32_t sender, Channel ch, Message& out) override {
        return hub_->recv(rank_, sender, ch, out);
    }
    bool do_recv_any(Channel ch, Message& out) override { return hub_->recv_any(rank_, ch, out); }

private:
    std::shared_ptr<InprocHub> hub_;
};

// ---------------------------------------------------------------------------
// TCP backend: one long-lived connection per ordered box pair. Frames are a
// fixed 24-byte little-endian header (channel u32, sender u32, count u64,
// payload-length u64) followed by the payload bytes.
// ---------------------------------------------------------------------------

constexpr std::uint32_t k_hello_magic = 0x43535250; // "CSRP"
constexpr std::size_t k_header_len = 24;

void put_u32(std::byte* p, std::uint32_t v) { std::memcpy(p, &v, 4); }
void put_u64(std::byte* p, std::uint64_t v) { std::memcpy(p, &v, 8); }
std::uint32_t get_u32(const std::byte* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}
std::uint64_t get_u64(const std::byte* p) {
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    return v;
}

void write_all_fd(int fd, const void* buf, std::size_t n) {
    const char* p = static_cast<const char*>(buf);
    while (n > 0) {
        ssize_t r = ::send(fd, p, n, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw transport_error(std::string("socket write failed: ") + std::strerror(errno));
        }
        p += r;
        n -= static_cast<std::size_t>(r);
    }
}

// false = clean EOF before the first byte
bool read_exact_fd(int fd, void* buf, std::size_t n) {
    char* p = static_cast<char*>(buf);
    std::size_t got = 0;
    while (got < n) {
        ssize_t r = ::recv(fd, p + got, n - got, 0);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw transport_error(std::string("socket read failed: ") + std::strerror(errno));
        }
        if (r == 0) {
            if (got == 0) return false;
            throw transport_error("peer closed connection mid-frame");
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

struct HostPort {
    std::string host;
    std::uint16_t port;
};

HostPort parse_host_port(const std::string& s) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon + 1 >= s.size())
        throw argument_error("peer address '" + s + "' is not host:port");
    const int port = std::stoi(s.substr(colon + 1));
    if (port <= 0 || port > 65535) throw argument_error("bad port in '" + s + "'");
    return {s.substr(0, colon), static_cast<std::uint16_t>(port)};
}

int connect_with_retry(const HostPort& hp, double timeout_seconds) {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
    for (;;) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const std::string port_str = std::to_string(hp.port);
        if (getaddrinfo(hp.host.c_str(), port_str.c_str(), &hints, &res) != 0 || !res)
            throw transport_error("cannot resolve peer " + hp.host);
        int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
        if (fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) == 0) {
            freeaddrinfo(res);
            int one = 1;
            setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            return fd;
        }
        if (fd >= 0) ::close(fd);
        freeaddrinfo(res);
        if (std::chrono::steady_clock::now() > deadline)
            throw transport_error("cannot connect to peer " + hp.host + ":" +
                                  std::to_string(hp.port));
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
}

class TcpMesh final : public Mesh {
public:
    TcpMesh(std::uint32_t rank, const std::vector<std::string>& peers, TransportConfig cfg)
        : Mesh(rank, static_cast<std::uint32_t>(peers.size())), cfg_(cfg),
          out_fd_(world_, -1) {
        if (cfg_.rendezvous)
            throw argument_error("rendezvous sends are only available on the inproc backend");
        for (std::size_t i = 0; i < channel_count; ++i)
            boxes_[i] = std::make_unique<Box>(world_);
        for (std::uint32_t i = 0; i < world_; ++i)
            out_mu_.push_back(std::make_unique<std::mutex>());

        const HostPort self = parse_host_port(peers[rank_]);
        open_listener(self.port);
        for (std::uint32_t j = 0; j < world_; ++j) {
            if (j == rank_) continue;
            out_fd_[j] = connect_with_retry(parse_host_port(peers[j]), 15.0);
            std::byte hello[8];
            put_u32(hello, k_hello_magic);
            put_u32(hello + 4, rank_);
            write_all_fd(out_fd_[j], hello, sizeof(hello));
        }
        for (std::uint32_t n = 0; n + 1 < world_; ++n) accept_peer();
    }

    ~TcpMesh() override {
        // By contract every session is terminated before teardown, so the
        // incoming sides can be shut as well; waiting for peer FINs would
        // deadlock two endpoints destroyed sequentially in one process.
        for (int fd : out_fd_)
            if (fd >= 0) ::shutdown(fd, SHUT_WR);
        for (int fd : in_fd_)
            if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
        for (auto& t : demux_threads_)
            if (t.joinable()) t.join();
        for (int fd : out_fd_)
            if (fd >= 0) ::close(fd);
        for (int fd : in_fd_)
            if (fd >= 0) ::close(fd);
        if (listen_fd_ >= 0) ::close(listen_fd_);
    }

    void close_channel(Channel ch) override {
        // Remote per-channel close is not expressible in the frame format;
        // peers observe the disconnect instead. Close the loopback slot.
        Box& b = box(ch);
        std::lock_guard<std::mutex> g(b.mu);
        b.slots[rank_].closed = true;
        b.cv.notify_all();
    }

    void abort(const std::string& reason) override {
        {
            std::lock_guard<std::mutex> g(abort_mu_);
            if (abort_reason_.empty()) abort_reason_ = reason;
        }
        aborted_.store(true);
        for (auto& bp : boxes_) {
            std::lock_guard<std::mutex> g(bp->mu);
            bp->cv.notify_all();
        }
        for (int fd : out_fd_)
            if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
        for (int fd : in_fd_)
            if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
    }

protected:
    void do_send(std::uint32_t receiver, const Message& msg) override {
        if (aborted_.load()) throw aborted_error(abort_reason());
        if (receiver == rank_) {
            Message copy = msg;
            copy.sender = rank_;
            push_local(rank_, msg.channel, std::move(copy));
            return;
        }
        std::byte header[k_header_len];
        put_u32(header, static_cast<std::uint32_t>(msg.channel));
        put_u32(header + 4, rank_);
        put_u64(header + 8, msg.count);
        put_u64(header + 16, msg.used_bytes());
        std::unique_lock<std::mutex> sg;
        if (cfg_.serialize_comm) sg = std::unique_lock<std::mutex>(serialize_);
        std::lock_guard<std::mutex> g(*out_mu_[receiver]);
        write_all_fd(out_fd_[receiver], header, k_header_len);
        if (msg.used_bytes() > 0) write_all_fd(out_fd_[receiver], msg.data(), msg.used_bytes());
    }

    bool do_recv(std::uint32_t sender, Channel ch, Message& out) override {
        Box& b = box(ch);
        std::unique_lock<std::mutex> lk(b.mu);
        auto& slot = b.slots[sender];
        wait(b, lk, [&] { return !slot.q.empty() || slot.closed; });
        if (slot.q.empty()) return false;
        out = std::move(slot.q.front().msg);
        slot.q.pop_front();
        b.cv.notify_all();
        return true;
    }

    bool do_recv_any(Channel ch, Message& out) override {
        Box& b = box(ch);
        std::unique_lock<std::mutex> lk(b.mu);
        auto ready = [&]() -> Box::Slot* {
            Box::Slot* best = nullptr;
            for (auto& s : b.slots)
                if (!s.q.empty() && (!best || s.q.front().seq < best->q.front().seq)) best = &s;
            return best;
        };
        auto done = [&] {
            for (const auto& s : b.slots)
                if (!s.q.empty() || !s.closed) return false;
            return true;
        };
        wait(b, lk, [&] { return ready() != nullptr || done(); });
        Box::Slot* s = ready();
        if (!s) return false;
        out = std::move(s->q.front().msg);
        s->q.pop_front();
        b.cv.notify_all();
        return true;
    }

private:
    Box& box(Channel ch) { return *boxes_[ch_index(ch)]; }

    template <class Pred>
    void wait(Box& b, std::unique_lock<std::mutex>& lk, Pred pred) {
        while (!pred()) {
            if (aborted_.load()) {
                lk.unlock();
                throw aborted_error(abort_reason());
            }
            b.cv.wait(lk);
        }
    }

    std::string abort_reason() {
        std::lock_guard<std::mutex> g(abort_mu_);
        return abort_reason_.empty() ? "build aborted" : abort_reason_;
    }

    void open_listener(std::uint16_t port) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw transport_error("cannot create listener socket");
        int one = 1;
        setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
        addr.sin_port = htons(port);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            throw transport_error("cannot bind port " + std::to_string(port) + ": " +
                                  std::strerror(errno));
        if (::listen(listen_fd_, 64) != 0) throw transport_error("listen failed");
    }

    void accept_peer() {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) throw transport_error(std::string("accept failed: ") + std::strerror(errno));
        std::byte hello[8];
        if (!read_exact_fd(fd, hello, sizeof(hello)))
            throw transport_error("peer disconnected during handshake");
        if (get_u32(hello) != k_hello_magic) throw transport_error("bad handshake magic");
        const std::uint32_t sender = get_u32(hello + 4);
        if (sender >= world_ || sender == rank_)
            throw transport_error("handshake announced bad rank " + std::to_string(sender));
        int one = 1;
        setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        in_fd_.push_back(fd);
        demux_threads_.emplace_back([this, sender, fd] { demux_loop(sender, fd); });
    }

    void demux_loop(std::uint32_t sender, int fd) {
        std::vector<std::byte> payload;
        try {
            for (;;) {
                std::byte header[k_header_len];
                if (!read_exact_fd(fd, header, k_header_len)) break; // clean EOF
                const auto ch_val = get_u32(header);
                const std::uint32_t hdr_sender = get_u32(header + 4);
                const std::uint64_t count = get_u64(header + 8);
                const std::uint64_t len = get_u64(header + 16);
                if (ch_val < 1 || ch_val > channel_count)
                    throw transport_error("frame names unknown channel " + std::to_string(ch_val));
                if (hdr_sender != sender)
                    throw transport_error("frame sender disagrees with handshake");
                payload.resize(len);
                if (len > 0 && !read_exact_fd(fd, payload.data(), len))
                    throw transport_error("peer closed connection mid-frame");
                Message m;
                m.channel = static_cast<Channel>(ch_val);
                m.sender = sender;
                m.set_payload(payload.data(), len, count);
                push_local(sender, m.channel, std::move(m));
            }
        } catch (...) {
            // Socket failure or local abort; either way the sender is done.
        }
        mark_sender_closed(sender);
    }

    void push_local(std::uint32_t sender, Channel ch, Message&& m) {
        Box& b = box(ch);
        std::unique_lock<std::mutex> lk(b.mu);
        auto& slot = b.slots[sender];
        wait(b, lk, [&] { return slot.q.size() < cfg_.queue_capacity; });
        slot.q.push_back(QEntry{b.next_seq++, std::move(m)});
        b.cv.notify_all();
    }

    void mark_sender_closed(std::uint32_t sender) {
        for (auto& bp : boxes_) {
            std::lock_guard<std::mutex> g(bp->mu);
            bp->slots[sender].closed = true;
            bp->cv.notify_all();
        }
    }

    TransportConfig cfg_;
    std::vector<int> out_fd_;
    std::vector<std::unique_ptr<std::mutex>> out_mu_;
    std::vector<int> in_fd_;
    int listen_fd_ = -1;
    std::vector<std::thread> demux_threads_;
    std::array<std::unique_ptr<Box>, channel_count> boxes_;
    std::atomic<bool> aborted_{false};
    std::mutex abort_mu_;
    std::string abort_reason_;
    std::mutex serialize_;
};

} // namespace

std::vector<std::shared_ptr<Mesh>> make_inproc_mesh(std::uint32_t nb,
                                                    const TransportConfig& cfg) {
    if (nb == 0) throw argument_error("world size must be positive");
    auto hub = std::make_shared<InprocHub>(nb, cfg);
    std::vector<std::shared_ptr<Mesh>> out;
    out.reserve(nb);
    for (std::uint32_t r = 0; r < nb; ++r) out.push_back(std::make_shared<InprocMesh>(r, nb, hub));
    return out;
}

std::shared_ptr<Mesh> make_tcp_mesh(std::uint32_t rank, const std::vector<std::string>& peers,
                                    const TransportConfig& cfg) {
    if (peers.empty()) throw argument_error("peer list is empty");
    if (rank >= peers.size()) throw argument_error("rank outside peer list");
    return std::make_shared<TcpMesh>(rank, peers, cfg);
}

} // namespace csrpipe
