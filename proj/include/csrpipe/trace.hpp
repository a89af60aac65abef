#ifndef CSRPIPE_TRACE_HPP
#define CSRPIPE_TRACE_HPP

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

namespace csrpipe {

/// One send/recv event in the pipeline timeline.
struct TraceEvent {
    std::int64_t ts = 0; // monotonic ns
    std::uint32_t box = 0;
    std::string stage;
    bool is_send = false;
    std::string channel;
    std::uint32_t peer = 0;
    std::uint64_t count = 0;
};

/// Thread-safe event collector. Timestamps are strictly increasing.
class TraceSink {
public:
    void record(std::uint32_t box, const char* stage, bool is_send, const char* channel,
                std::uint32_t peer, std::uint64_t count);

    std::vector<TraceEvent> snapshot() const;
    void write_jsonl(const std::filesystem::path& p) const;

private:
    mutable std::mutex mu_;
    std::vector<TraceEvent> events_;
    std::int64_t last_ts_ = 0;
};

namespace stage {
/// Per-thread stage tag stamped onto trace events.
void set(const char* name);
const char* get();
} // namespace stage

/// Parses a JSONL trace file; throws parse_error with the line number.
std::vector<TraceEvent> load_trace_jsonl(const std::filesystem::path& p);

struct ChannelStats {
    std::string channel;
    std::uint64_t sends = 0;
    std::uint64_t recvs = 0;
    std::int64_t first_ts = 0;
    std::int64_t last_ts = 0;
};

struct TraceReport {
    std::vector<ChannelStats> channels;
    // interleaved: some edge-scatter send precedes the last idmap-src recv.
    enum class Verdict { not_applicable, interleaved, sequential } verdict =
        Verdict::not_applicable;
};

TraceReport analyze_trace(const std::vector<TraceEvent>& events);
std::string format_report(const TraceReport& r);

} // namespace csrpipe

#endif
