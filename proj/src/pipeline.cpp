#include "csrpipe/pipeline.hpp"

#include <fstream>
#include <thread>

#include <json.hpp>

namespace csrpipe {

void BuildConfig::validate() const {
    if (nb < 1 || nb > 65536) throw argument_error("nb must be in [1, 65536]");
    if (nc < 1) throw argument_error("nc must be >= 1");
    if (blk_sz == 0 || blk_sz % 16 != 0) throw argument_error("blk_sz must be a positive multiple of 16");
    if (mmc < blk_sz) throw argument_error("mmc must be >= blk_sz");
    if (spill_dir.empty()) throw argument_error("spill_dir is required");
}

// ---------------------------------------------------------------------------
// ThreadGroup
// ---------------------------------------------------------------------------

struct ThreadGroup::Impl {
    std::thread thread;
    std::exception_ptr error;
};

namespace {
std::string describe(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const std::exception& ex) {
        return ex.what();
    } catch (...) {
        return "unknown error";
    }
}

bool is_abort(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const aborted_error&) {
        return true;
    } catch (...) {
        return false;
    }
}
} // namespace

void ThreadGroup::spawn(std::function<void()> fn) {
    auto slot = std::make_shared<Impl>();
    Mesh* mesh = mesh_;
    Impl* raw = slot.get();
    slot->thread = std::thread([raw, mesh, fn = std::move(fn)] {
        try {
            fn();
        } catch (...) {
            raw->error = std::current_exception();
            if (mesh) {
                try {
                    mesh->abort(describe(raw->error));
                } catch (...) {
                }
            }
        }
    });
    slots_.push_back(std::move(slot));
}

void ThreadGroup::join_silent() {
    for (auto& s : slots_)
        if (s->thread.joinable()) s->thread.join();
}

std::exception_ptr ThreadGroup::first_error() const {
    // aborted_error is a consequence, not a cause; report it last
    std::exception_ptr fallback;
    for (const auto& s : slots_) {
        if (!s->error) continue;
        if (!is_abort(s->error)) return s->error;
        if (!fallback) fallback = s->error;
    }
    return fallback;
}

void ThreadGroup::join_all() {
    join_silent();
    if (auto e = first_error()) {
        for (auto& s : slots_) s->error = nullptr;
        std::rethrow_exception(e);
    }
}

namespace {

// Run the calling thread's half of a phase while group threads are live;
// on failure abort the mesh so everyone unwinds, then surface the most
// specific error.
template <class F>
void guard_main(Mesh& mesh, ThreadGroup& group, F&& f) {
    try {
        f();
    } catch (...) {
        auto main_err = std::current_exception();
        try {
            mesh.abort(describe(main_err));
        } catch (...) {
        }
        group.join_silent();
        if (auto te = group.first_error(); te && !is_abort(te)) std::rethrow_exception(te);
        std::rethrow_exception(main_err);
    }
    group.join_all();
}

std::vector<IterPtr<Label>> label_run_iters(const std::vector<std::vector<PersistentStream>>& runs,
                                            std::uint64_t blk_sz) {
    std::vector<IterPtr<Label>> iters;
    for (const auto& worker_runs : runs)
        for (const auto& r : worker_runs) iters.push_back(em_stream_iter<Label>(r, blk_sz));
    return iters;
}

template <class T>
std::vector<T> read_all(const PersistentStream& s) {
    std::vector<T> out(s.size / sizeof(T));
    detail::read_stream_bytes(s, out.data());
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

std::vector<PersistentStream> phase_setup(const BuildConfig& cfg, std::uint32_t rank,
                                          const PersistentStream& input, SpillDirectory& dir) {
    if (input.size % storage_cost(input.kind) != 0)
        throw argument_error("input stream is not element-aligned");
    std::vector<PersistentStream> out;
    out.reserve(cfg.nc);
    std::uint32_t w = 0;
    for (const auto& tile : split_balanced(input, cfg.nc))
        out.push_back(copy_stream(tile, dir, "setup", rank, w++));
    return out;
}

PersistentStream phase_assign_ids(Mesh& mesh, const BuildConfig& cfg,
                                  const std::vector<PersistentStream>& workers,
                                  SpillDirectory& dir) {
    const std::uint32_t rank = mesh.rank();

    // Each worker reads its edge stream as labels (both fields count) and
    // spills sorted runs under the per-worker budget.
    std::vector<std::vector<PersistentStream>> runs(cfg.nc);
    {
        ThreadGroup sorters(&mesh);
        for (std::uint32_t w = 0; w < cfg.nc; ++w)
            sorters.spawn([&, w] {
                stage::set("sort_labels");
                runs[w] = chunk_sort_spill<Label>(as_labels(workers[w]), cfg.mmc, LabelLess{},
                                                  dir, "lbl", rank, w);
            });
        sorters.join_all();
    }

    PersistentStream idmap;
    ThreadGroup collector(&mesh);
    collector.spawn([&] {
        stage::set("build_broadcast_idmap");
        auto reader = make_reader(mesh, Channel::label_scatter, cfg.transport.buffered_reader);
        auto arrivals = in_network_set<Label>(*reader, cfg.nb, rank, cfg.blk_sz);
        auto merged = sorted_merge<Label>(std::move(arrivals), LabelLess{});
        auto numbered = enumerate<Label>(uniq<Label>(std::move(merged)));
        auto entries = transform<IdMapEntry>(
            std::move(numbered), [rank](const std::pair<std::uint64_t, Label>& p) {
                return IdMapEntry{p.second, GlobalVertexId::make(rank, p.first)};
            });
        idmap = store(std::move(entries), dir, "idmap", rank, 0);
    });

    guard_main(mesh, collector, [&] {
        stage::set("merge_redistribute_labels");
        auto merged = sorted_merge<Label>(label_run_iters(runs, cfg.blk_sz), LabelLess{});
        scatter_stream<Label>(
            *merged, [&cfg](Label l) { return cfg.map_label(l); }, mesh, Channel::label_scatter,
            cfg.blk_sz);
    });

    if (!cfg.keep_spill)
        for (const auto& worker_runs : runs) SpillDirectory::remove_streams(worker_runs);
    return idmap;
}

PersistentStream phase_relabel_dest(Mesh& mesh, const BuildConfig& cfg,
                                    const std::vector<PersistentStream>& workers,
                                    const PersistentStream& idmap, SpillDirectory& dir) {
    const std::uint32_t rank = mesh.rank();

    std::vector<std::vector<PersistentStream>> runs(cfg.nc);
    {
        ThreadGroup sorters(&mesh);
        for (std::uint32_t w = 0; w < cfg.nc; ++w)
            sorters.spawn([&, w] {
                stage::set("sort_edges_by_des");
                runs[w] = chunk_sort_spill<Edge>(workers[w], cfg.mmc, EdgeByDes{}, dir, "des",
                                                 rank, w);
            });
        sorters.join_all();
    }

    ThreadGroup broadcaster(&mesh);
    broadcaster.spawn([&] {
        stage::set("build_broadcast_idmap");
        auto it = em_stream_iter<IdMapEntry>(idmap, cfg.blk_sz);
        broadcast_stream<IdMapEntry>(*it, mesh, Channel::idmap_bcast_dest, cfg.blk_sz);
    });

    PersistentStream out;
    std::unique_ptr<ChannelReader> reader;
    guard_main(mesh, broadcaster, [&] {
        stage::set("relabel_scatter_edges");
        std::vector<IterPtr<Edge>> run_iters;
        for (const auto& worker_runs : runs)
            for (const auto& r : worker_runs) run_iters.push_back(em_stream_iter<Edge>(r, cfg.blk_sz));
        auto edges_by_des = sorted_merge<Edge>(std::move(run_iters), EdgeByDes{});

        reader = make_reader(mesh, Channel::idmap_bcast_dest, cfg.transport.buffered_reader);
        auto idmap_in = in_network_set<IdMapEntry>(*reader, cfg.nb, rank, cfg.blk_sz);
        auto all_ids = sorted_merge<IdMapEntry>(std::move(idmap_in), IdMapByLabel{});

        auto joined = sort_merge_join<DestRelabeledEdge>(
            std::move(all_ids), std::move(edges_by_des),
            [](const IdMapEntry& entry, const Edge& e) {
                return DestRelabeledEdge{e.src, entry.gid};
            },
            [](const IdMapEntry& entry) { return entry.label; },
            [](const Edge& e) { return e.des; });
        out = store(std::move(joined), dir, "dre", rank, 0);
    });

    if (!cfg.keep_spill)
        for (const auto& worker_runs : runs) SpillDirectory::remove_streams(worker_runs);
    return out;
}

void SrcRelabelHandle::finish() {
    iter.reset();
    if (broadcaster_) {
        broadcaster_->join_all();
        broadcaster_.reset();
    }
    reader_.reset();
    if (!keep_spill_) SpillDirectory::remove_streams(runs_);
    runs_.clear();
}

SrcRelabelHandle phase_relabel_src(Mesh& mesh, const BuildConfig& cfg,
                                   const PersistentStream& dest_relabeled,
                                   const PersistentStream& idmap, SpillDirectory& dir) {
    const std::uint32_t rank = mesh.rank();

    std::vector<std::vector<PersistentStream>> runs(cfg.nc);
    {
        const auto tiles = split_balanced(dest_relabeled, cfg.nc);
        ThreadGroup sorters(&mesh);
        for (std::uint32_t w = 0; w < cfg.nc; ++w)
            sorters.spawn([&, w] {
                stage::set("sort_edges_by_src");
                runs[w] = chunk_sort_spill<DestRelabeledEdge>(tiles[w], cfg.mmc, DreBySrc{}, dir,
                                                              "src", rank, w);
            });
        sorters.join_all();
    }

    SrcRelabelHandle handle;
    handle.keep_spill_ = cfg.keep_spill;
    for (const auto& worker_runs : runs)
        handle.runs_.insert(handle.runs_.end(), worker_runs.begin(), worker_runs.end());

    handle.broadcaster_ = std::make_unique<ThreadGroup>(&mesh);
    handle.broadcaster_->spawn([&mesh, &cfg, idmap] {
        stage::set("build_broadcast_idmap");
        auto it = em_stream_iter<IdMapEntry>(idmap, cfg.blk_sz);
        broadcast_stream<IdMapEntry>(*it, mesh, Channel::idmap_bcast_src, cfg.blk_sz);
    });

    try {
        stage::set("relabel_scatter_edges");
        std::vector<IterPtr<DestRelabeledEdge>> run_iters;
        for (const auto& r : handle.runs_)
            run_iters.push_back(em_stream_iter<DestRelabeledEdge>(r, cfg.blk_sz));
        auto edges_by_src = sorted_merge<DestRelabeledEdge>(std::move(run_iters), DreBySrc{});

        handle.reader_ =
            make_reader(mesh, Channel::idmap_bcast_src, cfg.transport.buffered_reader);
        auto idmap_in = in_network_set<IdMapEntry>(*handle.reader_, cfg.nb, rank, cfg.blk_sz);
        auto all_ids = sorted_merge<IdMapEntry>(std::move(idmap_in), IdMapByLabel{});

        handle.iter = sort_merge_join<FullyRelabeledEdge>(
            std::move(all_ids), std::move(edges_by_src),
            [](const IdMapEntry& entry, const DestRelabeledEdge& e) {
                return FullyRelabeledEdge{entry.gid, e.des};
            },
            [](const IdMapEntry& entry) { return entry.label; },
            [](const DestRelabeledEdge& e) { return e.src; });
    } catch (...) {
        auto err = std::current_exception();
        try {
            mesh.abort(describe(err));
        } catch (...) {
        }
        handle.broadcaster_->join_silent();
        std::rethrow_exception(err);
    }
    return handle;
}

std::pair<std::vector<std::uint64_t>, std::vector<std::uint64_t>>
build_csr(ElementIterator<FullyRelabeledEdge>& edges, std::uint64_t n_local,
          std::uint32_t owner_rank) {
    std::vector<std::uint64_t> offv(n_local + 1, 0);
    std::vector<std::uint64_t> adjv;
    std::uint64_t csrc = 0;
    std::uint64_t elidx = 0;
    std::uint64_t prev_src = 0;
    bool first = true;
    while (!edges.eos()) {
        const FullyRelabeledEdge& e = edges.get();
        if (e.src.box() != owner_rank)
            throw error("edge with source box " + std::to_string(e.src.box()) +
                        " delivered to box " + std::to_string(owner_rank));
        if (!first && e.src.packed < prev_src)
            throw sortedness_error(0, "csr input not sorted by source id");
        first = false;
        prev_src = e.src.packed;
        const std::uint64_t lid = e.src.local();
        if (lid >= n_local)
            throw error("source local id " + std::to_string(lid) + " exceeds n_local " +
                        std::to_string(n_local));
        while (csrc < lid) offv[++csrc] = elidx; // zero-degree catch-up
        adjv.push_back(e.des.packed);
        ++elidx;
        edges.next();
    }
    while (csrc < n_local) offv[++csrc] = elidx;
    return {std::move(offv), std::move(adjv)};
}

CSRPartition phase_scatter_build(Mesh& mesh, const BuildConfig& cfg, SrcRelabelHandle& handle,
                                 std::uint64_t n_local) {
    const std::uint32_t rank = mesh.rank();
    CSRPartition part;
    part.rank = rank;
    part.n_local = n_local;

    ThreadGroup builder(&mesh);
    builder.spawn([&] {
        stage::set("merge_build_csr");
        auto reader = make_reader(mesh, Channel::edge_scatter, cfg.transport.buffered_reader);
        auto arrivals = in_network_set<FullyRelabeledEdge>(*reader, cfg.nb, rank, cfg.blk_sz);
        auto merged = sorted_merge<FullyRelabeledEdge>(std::move(arrivals), FreBySrc{});
        auto built = build_csr(*merged, n_local, rank);
        part.offv = std::move(built.first);
        part.adjv = std::move(built.second);
        merged->clean();
    });

    guard_main(mesh, builder, [&] {
        stage::set("relabel_scatter_edges");
        scatter_stream<FullyRelabeledEdge>(
            *handle.iter, [](const FullyRelabeledEdge& e) { return e.src.box(); }, mesh,
            Channel::edge_scatter, cfg.blk_sz);
        handle.finish();
    });
    return part;
}

// ---------------------------------------------------------------------------
// Driver + persistence
// ---------------------------------------------------------------------------

namespace {

void write_stream_manifest(const SpillDirectory& dir, std::uint32_t rank,
                           const std::vector<std::pair<std::string, PersistentStream>>& named) {
    nlohmann::json streams = nlohmann::json::array();
    for (const auto& [name, s] : named) {
        streams.push_back({{"name", name},
                           {"path", s.path.string()},
                           {"offset", s.offset},
                           {"size", s.size},
                           {"elem_kind", elem_kind_name(s.kind)},
                           {"present", std::filesystem::exists(s.path)}});
    }
    std::ofstream out(dir.root() / ("streams-" + std::to_string(rank) + ".json"));
    out << nlohmann::json{{"rank", rank}, {"streams", streams}}.dump(2) << '\n';
}

std::uint64_t file_hash(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw storage_error("cannot open " + p.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

void write_u64_file(const std::filesystem::path& p, const std::vector<std::uint64_t>& v) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw storage_error("cannot open " + p.string() + " for writing");
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(std::uint64_t)));
    if (!out) throw storage_error("write failed on " + p.string());
}

std::vector<std::uint64_t> read_u64_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw storage_error("cannot open " + p.string());
    const auto bytes = static_cast<std::uint64_t>(in.tellg());
    if (bytes % 8 != 0) throw storage_error(p.string() + " is not a u64 array");
    in.seekg(0);
    std::vector<std::uint64_t> v(bytes / 8);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    return v;
}

} // namespace

void save_partition(const CSRPartition& part, const BuildConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    const std::string base = "partition-" + std::to_string(part.rank);
    const auto offv_path = cfg.out_dir / (base + ".offv");
    const auto adjv_path = cfg.out_dir / (base + ".adjv");
    const auto idmap_path = cfg.out_dir / (base + ".idmap");

    write_u64_file(offv_path, part.offv);
    write_u64_file(adjv_path, part.adjv);
    {
        std::ofstream out(idmap_path, std::ios::binary);
        if (!out) throw storage_error("cannot open " + idmap_path.string() + " for writing");
        const auto entries = read_all<IdMapEntry>(part.idmap);
        out.write(reinterpret_cast<const char*>(entries.data()),
                  static_cast<std::streamsize>(entries.size() * sizeof(IdMapEntry)));
        if (!out) throw storage_error("write failed on " + idmap_path.string());
    }

    nlohmann::json manifest{
        {"rank", part.rank},
        {"nb", cfg.nb},
        {"nc", cfg.nc},
        {"blk_sz", cfg.blk_sz},
        {"mmc", cfg.mmc},
        {"n_local", part.n_local},
        {"m_local", part.m_local()},
        {"label_map", cfg.label_map_name},
        {"backend", cfg.transport.backend == Backend::inproc ? "inproc" : "tcp"},
        {"hashes",
         {{"offv", file_hash(offv_path)},
          {"adjv", file_hash(adjv_path)},
          {"idmap", file_hash(idmap_path)}}},
    };
    std::ofstream out(cfg.out_dir / (base + ".json"));
    out << manifest.dump(2) << '\n';
}

oracle::PartitionImage to_image(const CSRPartition& part) {
    oracle::PartitionImage img;
    img.offv = part.offv;
    img.adjv = part.adjv;
    img.idmap = read_all<IdMapEntry>(part.idmap);
    return img;
}

oracle::PartitionImage load_partition_image(const std::filesystem::path& dir, std::uint32_t rank) {
    const std::string base = "partition-" + std::to_string(rank);
    oracle::PartitionImage img;
    img.offv = read_u64_file(dir / (base + ".offv"));
    img.adjv = read_u64_file(dir / (base + ".adjv"));
    const auto idmap_stream = stream_over_file(dir / (base + ".idmap"), ElemKind::idmap_entry);
    img.idmap = read_all<IdMapEntry>(idmap_stream);
    return img;
}

CSRPartition run(Mesh& mesh, const BuildConfig& cfg, const PersistentStream& input) {
    cfg.validate();
    if (cfg.nb != mesh.world_size())
        throw argument_error("config nb does not match the mesh world size");

    SpillDirectory dir(cfg.spill_dir);
    std::vector<std::pair<std::string, PersistentStream>> named;

    auto workers = phase_setup(cfg, mesh.rank(), input, dir);
    for (std::size_t w = 0; w < workers.size(); ++w)
        named.emplace_back("worker-" + std::to_string(w), workers[w]);

    auto idmap = phase_assign_ids(mesh, cfg, workers, dir);
    named.emplace_back("idmap", idmap);

    auto dest_relabeled = phase_relabel_dest(mesh, cfg, workers, idmap, dir);
    named.emplace_back("dest-relabeled", dest_relabeled);
    if (!cfg.keep_spill) SpillDirectory::remove_streams(workers);

    auto handle = phase_relabel_src(mesh, cfg, dest_relabeled, idmap, dir);
    const std::uint64_t n_local = idmap.count();
    auto part = phase_scatter_build(mesh, cfg, handle, n_local);
    part.idmap = idmap;
    if (!cfg.keep_spill) SpillDirectory::remove_streams({dest_relabeled});

    if (!cfg.out_dir.empty()) {
        save_partition(part, cfg);
        if (!cfg.keep_spill) {
            // repoint at the persisted copy so the spill run can go
            SpillDirectory::remove_streams({idmap});
            part.idmap = stream_over_file(cfg.out_dir /
                                              ("partition-" + std::to_string(part.rank) + ".idmap"),
                                          ElemKind::idmap_entry);
        }
    }
    write_stream_manifest(dir, mesh.rank(), named);
    return part;
}

} // namespace csrpipe
