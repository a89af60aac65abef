#ifndef CSRPIPE_MEM_GAUGE_HPP
#define CSRPIPE_MEM_GAUGE_HPP

#include <atomic>
#include <cstdint>

// Process-wide accounting of the three out-of-core buffer classes: paged
// stream blocks, transport message buffers, and in-memory sort chunks.
// The peak is over the sum of the three; CSR output arrays and ordinary
// stdio buffering are intentionally outside the gauge.
namespace csrpipe::mem_gauge {

enum class Category : int { paged_block = 0, message_buf = 1, sort_chunk = 2 };

namespace detail {
inline std::atomic<std::int64_t>& counter(Category c) {
    static std::atomic<std::int64_t> counters[3]{};
    return counters[static_cast<int>(c)];
}
inline std::atomic<std::int64_t>& peak_total() {
    static std::atomic<std::int64_t> p{0};
    return p;
}
inline void bump_peak() {
    std::int64_t total = counter(Category::paged_block).load(std::memory_order_relaxed) +
                         counter(Category::message_buf).load(std::memory_order_relaxed) +
                         counter(Category::sort_chunk).load(std::memory_order_relaxed);
    auto& p = peak_total();
    std::int64_t prev = p.load(std::memory_order_relaxed);
    while (total > prev && !p.compare_exchange_weak(prev, total)) {
    }
}
} // namespace detail

inline void add(Category c, std::uint64_t bytes) {
    detail::counter(c).fetch_add(static_cast<std::int64_t>(bytes), std::memory_order_relaxed);
    detail::bump_peak();
}

inline void sub(Category c, std::uint64_t bytes) {
    detail::counter(c).fetch_sub(static_cast<std::int64_t>(bytes), std::memory_order_relaxed);
}

inline std::int64_t current(Category c) { return detail::counter(c).load(); }

inline std::int64_t peak() { return detail::peak_total().load(); }

inline void reset_peak() {
    detail::peak_total().store(detail::counter(Category::paged_block).load() +
                               detail::counter(Category::message_buf).load() +
                               detail::counter(Category::sort_chunk).load());
}

/// RAII registration of one tracked allocation.
class Charge {
public:
    Charge() = default;
    Charge(Category c, std::uint64_t bytes) : cat_(c), bytes_(bytes) { add(c, bytes); }
    Charge(const Charge&) = delete;
    Charge& operator=(const Charge&) = delete;
    Charge(Charge&& o) noexcept : cat_(o.cat_), bytes_(o.bytes_) { o.bytes_ = 0; }
    Charge& operator=(Charge&& o) noexcept {
        release();
        cat_ = o.cat_;
        bytes_ = o.bytes_;
        o.bytes_ = 0;
        return *this;
    }
    ~Charge() { release(); }
    void release() {
        if (bytes_) {
            sub(cat_, bytes_);
            bytes_ = 0;
        }
    }

private:
    Category cat_{Category::paged_block};
    std::uint64_t bytes_{0};
};

} // namespace csrpipe::mem_gauge

#endif
