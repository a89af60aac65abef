#ifndef CSRPIPE_TRANSPORT_HPP
#define CSRPIPE_TRANSPORT_HPP

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "csrpipe/errors.hpp"
#include "csrpipe/iterators.hpp"
#include "csrpipe/mem_gauge.hpp"
#include "csrpipe/trace.hpp"
#include "csrpipe/types.hpp"

namespace csrpipe {

/// One channel per pipeline phase keeps stream sessions unambiguous without
/// cross-box barriers.
enum class Channel : std::uint32_t {
    label_scatter = 1,
    idmap_bcast_dest = 2,
    idmap_bcast_src = 3,
    edge_scatter = 4,
};
constexpr std::size_t channel_count = 4;

inline const char* channel_name(Channel c) {
    switch (c) {
    case Channel::label_scatter: return "LABEL_SCATTER";
    case Channel::idmap_bcast_dest: return "IDMAP_BCAST_DEST";
    case Channel::idmap_bcast_src: return "IDMAP_BCAST_SRC";
    case Channel::edge_scatter: return "EDGE_SCATTER";
    }
    return "?";
}

// Fixed-capacity typed block. A message holding fewer elements than its
// capacity blk_sz/S(T) marks the end of a stream session; streams whose
// length is an exact multiple of the capacity send an explicit empty
// terminator.
class Message {
public:
    Message() = default;
    explicit Message(std::uint64_t capacity_bytes) { ensure_capacity(capacity_bytes); }

    Message(const Message& o) { *this = o; }
    Message& operator=(const Message& o) {
        if (this != &o) {
            channel = o.channel;
            sender = o.sender;
            count = o.count;
            used_ = o.used_;
            ensure_capacity(o.capacity_);
            if (used_ > 0) std::memcpy(payload_.get(), o.payload_.get(), used_);
        }
        return *this;
    }
    Message(Message&&) noexcept = default;
    Message& operator=(Message&&) noexcept = default;

    Channel channel = Channel::label_scatter;
    std::uint32_t sender = 0;
    std::uint64_t count = 0; // elements stored

    void ensure_capacity(std::uint64_t bytes) {
        if (capacity_ >= bytes) return;
        payload_.reset(new std::byte[bytes]);
        charge_ = mem_gauge::Charge(mem_gauge::Category::message_buf, bytes);
        capacity_ = bytes;
    }

    std::uint64_t capacity() const { return capacity_; }
    std::uint64_t used_bytes() const { return used_; }
    const std::byte* data() const { return payload_.get(); }
    std::byte* data() { return payload_.get(); }

    template <class T>
    void add(const T& v) {
        std::memcpy(payload_.get() + used_, &v, sizeof(T));
        used_ += sizeof(T);
        ++count;
    }

    template <class T>
    const T* elems() const {
        return reinterpret_cast<const T*>(payload_.get());
    }

    void reset() {
        count = 0;
        used_ = 0;
    }

    void set_payload(const void* p, std::uint64_t bytes, std::uint64_t n) {
        ensure_capacity(bytes);
        if (bytes > 0) std::memcpy(payload_.get(), p, bytes);
        used_ = bytes;
        count = n;
    }

private:
    std::unique_ptr<std::byte[]> payload_;
    mem_gauge::Charge charge_;
    std::uint64_t capacity_ = 0;
    std::uint64_t used_ = 0;
};

enum class Backend { inproc, tcp };

struct TransportConfig {
    Backend backend = Backend::inproc;
    /// Sends block until the matching receive is posted (inproc only).
    bool rendezvous = false;
    /// One box-global lock around each transfer, modeling a serialized runtime.
    bool serialize_comm = false;
    /// Receive via the out-of-turn-queueing reader (false = naive per-sender recv).
    bool buffered_reader = true;
    /// Blocking rendezvous calls older than this trigger a deadlock report.
    double watchdog_seconds = 10.0;
    /// Bounded per-link queue depth outside rendezvous mode.
    std::size_t queue_capacity = 4;
};

// One box's endpoint. Any number of threads on the box may send; exactly
// one consumer (a reader or a raw recv loop) per channel.
class Mesh {
public:
    virtual ~Mesh() = default;

    std::uint32_t rank() const { return rank_; }
    std::uint32_t world_size() const { return world_; }

    /// Blocking. FIFO per (sender, receiver, channel); loopback permitted.
    void send(std::uint32_t receiver, const Message& msg) {
        if (receiver >= world_)
            throw argument_error("receiver " + std::to_string(receiver) + " out of range [0, " +
                                 std::to_string(world_) + ")");
        do_send(receiver, msg);
        if (trace_)
            trace_->record(rank_, stage::get(), true, channel_name(msg.channel), receiver,
                           msg.count);
    }

    /// Blocking. false = every sender closed the channel and nothing is pending.
    bool recv(std::uint32_t sender, Channel ch, Message& out) {
        if (!do_recv(sender, ch, out)) return false;
        if (trace_) trace_->record(rank_, stage::get(), false, channel_name(ch), out.sender, out.count);
        return true;
    }

    /// Blocking receive of the oldest pending message from any sender.
    bool recv_any(Channel ch, Message& out) {
        if (!do_recv_any(ch, out)) return false;
        if (trace_) trace_->record(rank_, stage::get(), false, channel_name(ch), out.sender, out.count);
        return true;
    }

    /// This box will send no more on ch (close is only wire-visible on inproc).
    virtual void close_channel(Channel ch) = 0;

    /// Wake every blocked call on every box with aborted_error.
    virtual void abort(const std::string& reason) = 0;

    void set_trace(TraceSink* sink) { trace_ = sink; }
    TraceSink* trace() const { return trace_; }

protected:
    Mesh(std::uint32_t rank, std::uint32_t world) : rank_(rank), world_(world) {}
    virtual void do_send(std::uint32_t receiver, const Message& msg) = 0;
    virtual bool do_recv(std::uint32_t sender, Channel ch, Message& out) = 0;
    virtual bool do_recv_any(Channel ch, Message& out) = 0;

    std::uint32_t rank_;
    std::uint32_t world_;
    TraceSink* trace_ = nullptr;
};

/// All-thread-group endpoints for nb boxes sharing one in-process hub.
std::vector<std::shared_ptr<Mesh>> make_inproc_mesh(std::uint32_t nb, const TransportConfig& cfg);

/// One endpoint of a TCP peer mesh; peers[i] = "host:port" of rank i.
std::shared_ptr<Mesh> make_tcp_mesh(std::uint32_t rank, const std::vector<std::string>& peers,
                                    const TransportConfig& cfg);

// Channel readers. The returned reference stays valid until the next read
// for the same sender. A single thread drives any one reader.
class ChannelReader {
public:
    virtual ~ChannelReader() = default;
    virtual const Message& read(std::uint32_t sender) = 0;
};

/// Naive reader: a blocking per-sender receive. Susceptible to circular
/// waits when senders interleave destinations under rendezvous sends.
class RawReader final : public ChannelReader {
public:
    RawReader(Mesh& mesh, Channel ch) : mesh_(mesh), ch_(ch), slots_(mesh.world_size()) {}

    const Message& read(std::uint32_t sender) override {
        if (!mesh_.recv(sender, ch_, slots_[sender]))
            throw protocol_error(std::string(channel_name(ch_)) +
                                 " ended while awaiting sender " + std::to_string(sender));
        return slots_[sender];
    }

private:
    Mesh& mesh_;
    Channel ch_;
    std::vector<Message> slots_;
};

// Deadlock-avoiding reader: serves read(s) by accepting from ANY sender and
// queueing out-of-turn messages per sender, so no sender ever waits on a
// receive that will never be posted. The buffer handed out for sender s is
// recycled into the free pool on the next read for s.
class BufferedReader final : public ChannelReader {
public:
    BufferedReader(Mesh& mesh, Channel ch)
        : mesh_(mesh), ch_(ch), queues_(mesh.world_size()), allocated_(mesh.world_size()) {}

    const Message& read(std::uint32_t sender) override {
        if (allocated_[sender]) {
            pool_.push_back(std::move(*allocated_[sender]));
            allocated_[sender].reset();
            pool_size_.store(pool_.size(), std::memory_order_relaxed);
            pool_returns_.fetch_add(1, std::memory_order_relaxed);
        }
        if (!queues_[sender].empty()) {
            allocated_[sender] = std::move(queues_[sender].front());
            queues_[sender].pop_front();
            return *allocated_[sender];
        }
        while (true) {
            Message msg;
            if (!pool_.empty()) {
                msg = std::move(pool_.back());
                pool_.pop_back();
                pool_size_.store(pool_.size(), std::memory_order_relaxed);
            }
            if (!mesh_.recv_any(ch_, msg))
                throw protocol_error(std::string(channel_name(ch_)) +
                                     " ended while awaiting sender " + std::to_string(sender));
            if (msg.sender == sender) {
                allocated_[sender] = std::move(msg);
                return *allocated_[sender];
            }
            queues_[msg.sender].push_back(std::move(msg));
        }
    }

    std::size_t free_pool_size() const { return pool_size_.load(std::memory_order_relaxed); }
    /// Cumulative count of buffers recycled into the pool.
    std::uint64_t pool_returns() const { return pool_returns_.load(std::memory_order_relaxed); }
    std::size_t queued(std::uint32_t sender) const { return queues_[sender].size(); }

private:
    Mesh& mesh_;
    Channel ch_;
    std::vector<std::deque<Message>> queues_;
    std::vector<Message> pool_;
    std::vector<std::optional<Message>> allocated_;
    std::atomic<std::size_t> pool_size_{0};
    std::atomic<std::uint64_t> pool_returns_{0};
};

inline std::unique_ptr<ChannelReader> make_reader(Mesh& mesh, Channel ch, bool buffered) {
    if (buffered) return std::make_unique<BufferedReader>(mesh, ch);
    return std::make_unique<RawReader>(mesh, ch);
}

// Scans the element sequence one sender streams on a channel. The first
// message is fetched at construction; the session ends when a short
// message (count < capacity) has been consumed to its count.
template <class T>
class InNetworkIter final : public ElementIterator<T> {
public:
    InNetworkIter(ChannelReader& reader, std::uint32_t sender, std::uint64_t blk_sz)
        : reader_(reader), sender_(sender), cap_(blk_sz / sizeof(T)) {
        if (blk_sz % sizeof(T) != 0)
            throw argument_error("blk_sz not a multiple of the element size");
        msg_ = &reader_.read(sender_);
        ++messages_;
    }

    bool eos() override { return msg_->count < cap_ && cursor_ == msg_->count; }
    const T& get() override { return msg_->elems<T>()[cursor_]; }

    void next() override {
        ++cursor_;
        if (cursor_ == cap_) {
            msg_ = &reader_.read(sender_);
            ++messages_;
            cursor_ = 0;
        }
    }

    void clean() override {
        while (!eos()) next();
    }

    std::uint64_t messages_seen() const { return messages_; }

private:
    ChannelReader& reader_;
    std::uint32_t sender_;
    std::uint64_t cap_;
    const Message* msg_ = nullptr;
    std::uint64_t cursor_ = 0;
    std::uint64_t messages_ = 0;
};

/// One in-network iterator per sender, indexed by rank. Construction order
/// is rotated self-first, which is where the naive reader's first blocking
/// receive lands; merge inputs stay rank-indexed regardless.
template <class T>
std::vector<IterPtr<T>> in_network_set(ChannelReader& reader, std::uint32_t world,
                                       std::uint32_t self, std::uint64_t blk_sz) {
    std::vector<IterPtr<T>> v(world);
    for (std::uint32_t i = 0; i < world; ++i) {
        const std::uint32_t s = (self + i) % world;
        v[s] = std::make_unique<InNetworkIter<T>>(reader, s, blk_sz);
    }
    return v;
}

/// Send a copy of the stream to every box (self included) in blk_sz blocks.
/// Blocking; the final short block terminates each session.
template <class T>
void broadcast_stream(ElementIterator<T>& it, Mesh& mesh, Channel ch, std::uint64_t blk_sz) {
    if (blk_sz % sizeof(T) != 0)
        throw argument_error("blk_sz not a multiple of the element size");
    const std::uint64_t cap = blk_sz / sizeof(T);
    Message msg(blk_sz);
    msg.channel = ch;
    while (!it.eos()) {
        msg.add(it.get());
        if (msg.count == cap) {
            for (std::uint32_t r = 0; r < mesh.world_size(); ++r) mesh.send(r, msg);
            msg.reset();
        }
        it.next();
    }
    for (std::uint32_t r = 0; r < mesh.world_size(); ++r) mesh.send(r, msg);
    it.clean();
}

/// Partition the stream across boxes by map_fn, preserving source order per
/// destination. Every destination session is closed by a short block.
template <class T, class MapFn>
void scatter_stream(ElementIterator<T>& it, MapFn map_fn, Mesh& mesh, Channel ch,
                    std::uint64_t blk_sz) {
    if (blk_sz % sizeof(T) != 0)
        throw argument_error("blk_sz not a multiple of the element size");
    const std::uint64_t cap = blk_sz / sizeof(T);
    const std::uint32_t nb = mesh.world_size();
    std::vector<Message> bufs;
    bufs.reserve(nb);
    for (std::uint32_t r = 0; r < nb; ++r) {
        bufs.emplace_back(blk_sz);
        bufs.back().channel = ch;
    }
    while (!it.eos()) {
        const T& v = it.get();
        const std::uint32_t dest = map_fn(v);
        if (dest >= nb)
            throw argument_error("scatter mapping produced box " + std::to_string(dest) +
                                 " for a world of " + std::to_string(nb));
        bufs[dest].add(v);
        if (bufs[dest].count == cap) {
            mesh.send(dest, bufs[dest]);
            bufs[dest].reset();
        }
        it.next();
    }
    for (std::uint32_t r = 0; r < nb; ++r) mesh.send(r, bufs[r]);
    it.clean();
}

} // namespace csrpipe

#endif
