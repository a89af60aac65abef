#ifndef CSRPIPE_PIPELINE_HPP
#define CSRPIPE_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "csrpipe/oracle.hpp"
#include "csrpipe/stream.hpp"
#include "csrpipe/transport.hpp"
#include "csrpipe/types.hpp"

namespace csrpipe {

struct BuildConfig {
    std::uint32_t nb = 1; // boxes
    std::uint32_t nc = 1; // worker threads per box
    std::uint64_t blk_sz = 64 * 1024;
    std::uint64_t mmc = 8 * 1024 * 1024; // per-worker sort chunk budget
    std::filesystem::path spill_dir;
    std::filesystem::path out_dir; // empty: partition not persisted
    std::function<std::uint32_t(Label)> label_map; // empty: label % nb
    std::string label_map_name = "mod";
    TransportConfig transport;
    bool keep_spill = false;

    std::uint32_t map_label(Label l) const { return label_map ? label_map(l) : l % nb; }
    void validate() const;
};

/// One box's share of the distributed CSR.
struct CSRPartition {
    std::uint32_t rank = 0;
    std::uint64_t n_local = 0;
    std::vector<std::uint64_t> offv; // n_local + 1 entries
    std::vector<std::uint64_t> adjv; // packed gids
    PersistentStream idmap;

    std::uint64_t m_local() const { return adjv.size(); }
};

// Joins worker threads; a thread failure aborts the mesh so blocked peers
// unwind instead of hanging.
class ThreadGroup {
public:
    explicit ThreadGroup(Mesh* mesh) : mesh_(mesh) {}
    ~ThreadGroup() { join_silent(); }
    ThreadGroup(const ThreadGroup&) = delete;
    ThreadGroup& operator=(const ThreadGroup&) = delete;

    void spawn(std::function<void()> fn);
    void join_silent();
    void join_all(); // rethrows the most specific captured failure
    std::exception_ptr first_error() const;

private:
    struct Impl;
    Mesh* mesh_;
    std::vector<std::shared_ptr<Impl>> slots_;
};

/// Lazily constructed source-relabel pipeline; scanning it drives the join
/// over the ongoing idmap broadcast. finish() after the scan joins the
/// broadcaster and drops the sort runs behind it.
class SrcRelabelHandle {
public:
    SrcRelabelHandle() = default;
    SrcRelabelHandle(SrcRelabelHandle&&) = default;
    SrcRelabelHandle& operator=(SrcRelabelHandle&&) = default;

    IterPtr<FullyRelabeledEdge> iter;
    void finish();

private:
    friend SrcRelabelHandle phase_relabel_src(Mesh&, const BuildConfig&,
                                              const PersistentStream&, const PersistentStream&,
                                              SpillDirectory&);
    std::unique_ptr<ChannelReader> reader_;
    std::unique_ptr<ThreadGroup> broadcaster_;
    std::vector<PersistentStream> runs_;
    bool keep_spill_ = false;
};

/// Tile this box's edge stream into nc per-worker spill streams.
std::vector<PersistentStream> phase_setup(const BuildConfig& cfg, std::uint32_t rank,
                                          const PersistentStream& input, SpillDirectory& dir);

/// Every label (both edge fields, all boxes) gets a dense local id at its
/// owner box, assigned in ascending label order. Returns this box's idmap.
PersistentStream phase_assign_ids(Mesh& mesh, const BuildConfig& cfg,
                                  const std::vector<PersistentStream>& workers,
                                  SpillDirectory& dir);

/// Replace destination labels with gids; output spilled, sorted by the
/// original destination label.
PersistentStream phase_relabel_dest(Mesh& mesh, const BuildConfig& cfg,
                                    const std::vector<PersistentStream>& workers,
                                    const PersistentStream& idmap, SpillDirectory& dir);

/// Build (but do not scan) the source-relabel join.
SrcRelabelHandle phase_relabel_src(Mesh& mesh, const BuildConfig& cfg,
                                   const PersistentStream& dest_relabeled,
                                   const PersistentStream& idmap, SpillDirectory& dir);

/// Scatter the relabeled edges to their owner boxes and assemble this box's
/// offset and adjacency vectors from the merged arrivals.
CSRPartition phase_scatter_build(Mesh& mesh, const BuildConfig& cfg, SrcRelabelHandle& handle,
                                 std::uint64_t n_local);

/// Offset/adjacency construction over a source-sorted edge stream. Vertices
/// with no out-edges get repeated offsets; offv is padded to n_local with
/// the final edge count once the input is exhausted.
std::pair<std::vector<std::uint64_t>, std::vector<std::uint64_t>>
build_csr(ElementIterator<FullyRelabeledEdge>& edges, std::uint64_t n_local,
          std::uint32_t owner_rank);

/// All five phases in order; returns (and optionally persists) this box's
/// partition. All boxes must run with identical configs except rank.
CSRPartition run(Mesh& mesh, const BuildConfig& cfg, const PersistentStream& input);

void save_partition(const CSRPartition& part, const BuildConfig& cfg);
oracle::PartitionImage to_image(const CSRPartition& part);
oracle::PartitionImage load_partition_image(const std::filesystem::path& dir, std::uint32_t rank);

} // namespace csrpipe

#endif
