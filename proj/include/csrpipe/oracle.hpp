#ifndef CSRPIPE_ORACLE_HPP
#define CSRPIPE_ORACLE_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csrpipe/types.hpp"

// In-memory reference build of the distributed CSR, sharing no code with
// the streaming engine. Everything here is plain sorts and maps over
// std::vector; it exists solely to be compared against.
namespace csrpipe::oracle {

/// Neutral image of one box's output, used on both sides of a comparison.
struct PartitionImage {
    std::vector<std::uint64_t> offv;
    std::vector<std::uint64_t> adjv;   // packed gids
    std::vector<IdMapEntry> idmap;
};

struct OracleResult {
    std::vector<PartitionImage> boxes;
};

// Reference semantics, including the engine's deterministic adjacency
// order: the input list is tiled contiguously into nb ingest ranges
// (balanced by count), and each vertex's bucket is ordered by
// (ingest rank, destination gid).
OracleResult oracle_build(const std::vector<Edge>& edges, std::uint32_t nb,
                          const std::function<std::uint32_t(Label)>& label_map);

struct Divergence {
    std::uint32_t box;
    std::string component; // "offv" | "adjv" | "idmap"
    std::uint64_t index;
    std::string detail;
};

struct CompareReport {
    std::vector<Divergence> divergences; // first divergence per box/component
    bool ok() const { return divergences.empty(); }
    std::string to_string() const;
};

CompareReport compare(const std::vector<PartitionImage>& actual, const OracleResult& expected);

} // namespace csrpipe::oracle

#endif
