#include "csrpipe/trace.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "csrpipe/errors.hpp"

namespace csrpipe {

namespace stage {
namespace {
thread_local const char* g_stage = "";
}
void set(const char* name) { g_stage = name; }
const char* get() { return g_stage; }
} // namespace stage

void TraceSink::record(std::uint32_t box, const char* stage_name, bool is_send,
                       const char* channel, std::uint32_t peer, std::uint64_t count) {
    const auto now = std::chrono::steady_clock::now().time_since_epoch();
    std::int64_t ts = std::chrono::duration_cast<std::chrono::nanoseconds>(now).count();
    std::lock_guard<std::mutex> g(mu_);
    if (ts <= last_ts_) ts = last_ts_ + 1;
    last_ts_ = ts;
    events_.push_back(TraceEvent{ts, box, stage_name, is_send, channel, peer, count});
}

std::vector<TraceEvent> TraceSink::snapshot() const {
    std::lock_guard<std::mutex> g(mu_);
    return events_;
}

void TraceSink::write_jsonl(const std::filesystem::path& p) const {
    std::ofstream out(p);
    if (!out) throw storage_error("cannot open trace file " + p.string());
    for (const auto& e : snapshot()) {
        nlohmann::json j{{"ts", e.ts},         {"box", e.box},   {"stage", e.stage},
                         {"ev", e.is_send ? "send" : "recv"},    {"ch", e.channel},
                         {"peer", e.peer},     {"count", e.count}};
        out << j.dump() << '\n';
    }
}

std::vector<TraceEvent> load_trace_jsonl(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw storage_error("cannot open trace file " + p.string());
    std::vector<TraceEvent> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw parse_error(line_no, "invalid JSON");
        try {
            TraceEvent e;
            e.ts = j.at("ts").get<std::int64_t>();
            e.box = j.at("box").get<std::uint32_t>();
            e.stage = j.at("stage").get<std::string>();
            const auto ev = j.at("ev").get<std::string>();
            if (ev != "send" && ev != "recv") throw parse_error(line_no, "ev must be send|recv");
            e.is_send = ev == "send";
            e.channel = j.at("ch").get<std::string>();
            e.peer = j.at("peer").get<std::uint32_t>();
            e.count = j.at("count").get<std::uint64_t>();
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw parse_error(line_no, ex.what());
        }
    }
    return out;
}

TraceReport analyze_trace(const std::vector<TraceEvent>& events) {
    TraceReport r;
    std::map<std::string, ChannelStats> by_channel;
    std::int64_t first_edge_send = 0;
    bool have_edge_send = false;
    std::int64_t last_idmap_src_recv = 0;
    bool have_idmap_src_recv = false;

    for (const auto& e : events) {
        auto& st = by_channel[e.channel];
        st.channel = e.channel;
        if (e.is_send)
            ++st.sends;
        else
            ++st.recvs;
        if (st.first_ts == 0 || e.ts < st.first_ts) st.first_ts = e.ts;
        st.last_ts = std::max(st.last_ts, e.ts);

        if (e.channel == "EDGE_SCATTER" && e.is_send) {
            if (!have_edge_send || e.ts < first_edge_send) first_edge_send = e.ts;
            have_edge_send = true;
        }
        if (e.channel == "IDMAP_BCAST_SRC" && !e.is_send) {
            last_idmap_src_recv = std::max(last_idmap_src_recv, e.ts);
            have_idmap_src_recv = true;
        }
    }
    for (auto& [_, st] : by_channel) r.channels.push_back(st);

    if (have_edge_send && have_idmap_src_recv)
        r.verdict = first_edge_send < last_idmap_src_recv ? TraceReport::Verdict::interleaved
                                                          : TraceReport::Verdict::sequential;
    return r;
}

std::string format_report(const TraceReport& r) {
    std::ostringstream os;
    if (r.channels.empty()) os << "no events\n";
    for (const auto& c : r.channels) {
        os << c.channel << ": sends=" << c.sends << " recvs=" << c.recvs
           << " first_ts=" << c.first_ts << " last_ts=" << c.last_ts << '\n';
    }
    os << "verdict: ";
    switch (r.verdict) {
    case TraceReport::Verdict::not_applicable: os << "N/A"; break;
    case TraceReport::Verdict::interleaved: os << "interleaved"; break;
    case TraceReport::Verdict::sequential: os << "sequential"; break;
    }
    os << '\n';
    return os.str();
}

} // namespace csrpipe
