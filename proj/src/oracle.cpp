#include "csrpipe/oracle.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <tuple>

namespace csrpipe::oracle {

OracleResult oracle_build(const std::vector<Edge>& edges, std::uint32_t nb,
                          const std::function<std::uint32_t(Label)>& label_map) {
    // Distinct labels, ascending.
    std::vector<Label> labels;
    labels.reserve(edges.size() * 2);
    for (const auto& e : edges) {
        labels.push_back(e.src);
        labels.push_back(e.des);
    }
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

    // Dense local ids per owner box in ascending label order.
    OracleResult result;
    result.boxes.resize(nb);
    std::map<Label, GlobalVertexId> gid_of;
    {
        std::vector<std::uint64_t> next_local(nb, 0);
        for (Label l : labels) {
            const std::uint32_t b = label_map(l);
            const auto gid = GlobalVertexId::make(b, next_local[b]++);
            gid_of.emplace(l, gid);
            result.boxes[b].idmap.push_back(IdMapEntry{l, gid});
        }
    }

    // Contiguous balanced tiling decides which rank ingested each edge.
    std::vector<std::uint32_t> ingest_rank(edges.size());
    {
        const std::uint64_t n = edges.size();
        const std::uint64_t base = n / nb, rem = n % nb;
        std::uint64_t pos = 0;
        for (std::uint32_t r = 0; r < nb; ++r) {
            const std::uint64_t cnt = base + (r < rem ? 1 : 0);
            for (std::uint64_t i = 0; i < cnt; ++i) ingest_rank[pos + i] = r;
            pos += cnt;
        }
    }

    struct Row {
        std::uint64_t src_local;
        std::uint32_t ingest;
        std::uint64_t des_gid;
    };
    std::vector<std::vector<Row>> rows(nb);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto sgid = gid_of.at(edges[i].src);
        const auto dgid = gid_of.at(edges[i].des);
        rows[sgid.box()].push_back(Row{sgid.local(), ingest_rank[i], dgid.packed});
    }

    for (std::uint32_t b = 0; b < nb; ++b) {
        auto& r = rows[b];
        std::sort(r.begin(), r.end(), [](const Row& x, const Row& y) {
            return std::tie(x.src_local, x.ingest, x.des_gid) <
                   std::tie(y.src_local, y.ingest, y.des_gid);
        });
        auto& part = result.boxes[b];
        const std::uint64_t n_local = part.idmap.size();
        part.offv.assign(n_local + 1, 0);
        part.adjv.reserve(r.size());
        for (const auto& row : r) {
            part.adjv.push_back(row.des_gid);
            ++part.offv[row.src_local + 1];
        }
        for (std::uint64_t v = 0; v < n_local; ++v) part.offv[v + 1] += part.offv[v];
    }
    return result;
}

namespace {

template <class T, class Fmt>
void compare_component(std::uint32_t box, const char* name, const std::vector<T>& actual,
                       const std::vector<T>& expected, std::vector<Divergence>& out, Fmt fmt) {
    const std::uint64_t n = std::min(actual.size(), expected.size());
    for (std::uint64_t i = 0; i < n; ++i) {
        if (!(actual[i] == expected[i])) {
            out.push_back(Divergence{box, name, i,
                                     "expected " + fmt(expected[i]) + ", got " + fmt(actual[i])});
            return;
        }
    }
    if (actual.size() != expected.size())
        out.push_back(Divergence{box, name, n,
                                 "length " + std::to_string(actual.size()) + " != expected " +
                                     std::to_string(expected.size())});
}

} // namespace

CompareReport compare(const std::vector<PartitionImage>& actual, const OracleResult& expected) {
    CompareReport rep;
    if (actual.size() != expected.boxes.size()) {
        rep.divergences.push_back(
            Divergence{0, "boxes", 0,
                       "partition count " + std::to_string(actual.size()) + " != expected " +
                           std::to_string(expected.boxes.size())});
        return rep;
    }
    auto u64 = [](std::uint64_t v) { return std::to_string(v); };
    auto entry = [](const IdMapEntry& e) {
        return "(" + std::to_string(e.label) + " -> " + std::to_string(e.gid.packed) + ")";
    };
    for (std::uint32_t b = 0; b < actual.size(); ++b) {
        compare_component(b, "idmap", actual[b].idmap, expected.boxes[b].idmap, rep.divergences,
                          entry);
        compare_component(b, "offv", actual[b].offv, expected.boxes[b].offv, rep.divergences, u64);
        compare_component(b, "adjv", actual[b].adjv, expected.boxes[b].adjv, rep.divergences, u64);
    }
    return rep;
}

std::string CompareReport::to_string() const {
    if (divergences.empty()) return "partitions match the reference build\n";
    std::ostringstream os;
    for (const auto& d : divergences)
        os << "box " << d.box << " " << d.component << "[" << d.index << "]: " << d.detail << '\n';
    return os.str();
}

} // namespace csrpipe::oracle
