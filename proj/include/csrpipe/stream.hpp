#ifndef CSRPIPE_STREAM_HPP
#define CSRPIPE_STREAM_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "csrpipe/errors.hpp"
#include "csrpipe/iterators.hpp"
#include "csrpipe/mem_gauge.hpp"
#include "csrpipe/types.hpp"

namespace csrpipe {

/// Descriptor of a typed byte range inside a spill file. Immutable value;
/// safe to copy across threads.
struct PersistentStream {
    std::filesystem::path path;
    std::uint64_t offset = 0; // bytes
    std::uint64_t size = 0;   // bytes
    ElemKind kind = ElemKind::label;

    std::uint64_t count() const { return size / storage_cost(kind); }
};

/// Reinterpret an edge-typed stream as a label stream of doubled length.
inline PersistentStream as_labels(const PersistentStream& s) {
    PersistentStream r = s;
    r.kind = ElemKind::label;
    return r;
}

/// Owns a directory for spill runs and hands out unique file names.
class SpillDirectory {
public:
    explicit SpillDirectory(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }

    /// `<phase>-<box>-<worker>-<runcounter>.run`; counter is build-unique.
    std::filesystem::path next_run_path(std::string_view phase, std::uint32_t box,
                                        std::uint32_t worker);

    static void remove_streams(const std::vector<PersistentStream>& streams);

private:
    std::filesystem::path root_;
    std::atomic<std::uint64_t> counter_{0};
};

namespace detail {
class FileHandle {
public:
    FileHandle() = default;
    explicit FileHandle(const std::filesystem::path& p, bool writable = false);
    ~FileHandle();
    FileHandle(FileHandle&&) noexcept;
    FileHandle& operator=(FileHandle&&) noexcept;
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;

    void pread_exact(void* buf, std::uint64_t n, std::uint64_t off) const;
    void write_all(const void* buf, std::uint64_t n);
    int fd() const { return fd_; }
    const std::filesystem::path& path() const { return path_; }

private:
    int fd_ = -1;
    std::filesystem::path path_;
};
} // namespace detail

/// Random-access view of a fully loaded stream.
template <class T>
class RandomAccess {
public:
    explicit RandomAccess(std::vector<T> data)
        : data_(std::move(data)),
          charge_(mem_gauge::Category::sort_chunk, data_.size() * sizeof(T)) {}

    std::uint64_t size() const { return data_.size(); }
    const T& get_at(std::uint64_t i) const { return data_[i]; }
    std::vector<T>& elements() { return data_; }
    const std::vector<T>& elements() const { return data_; }

private:
    std::vector<T> data_;
    mem_gauge::Charge charge_;
};

namespace detail {
void read_stream_bytes(const PersistentStream& s, void* out);
std::filesystem::path persist_bytes_begin(const std::filesystem::path& path);
} // namespace detail

/// Materialize a whole stream; refused when it exceeds the chunk budget.
template <class T>
RandomAccess<T> load(const PersistentStream& s, std::uint64_t budget_bytes) {
    if (storage_cost(elem_kind_of_v<T>) != storage_cost(s.kind))
        throw argument_error("element type mismatch loading " + s.path.string());
    if (s.size > budget_bytes) throw budget_error(s.size, budget_bytes);
    std::vector<T> data(s.size / sizeof(T));
    detail::read_stream_bytes(s, data.data());
    return RandomAccess<T>(std::move(data));
}

/// Contiguous, in-order tiling of s into chunks of chunk_bytes (last may be
/// short). chunk_bytes must be a positive multiple of the element size.
std::vector<PersistentStream> split(const PersistentStream& s, std::uint64_t chunk_bytes);

/// Tiling into n parts balanced by element count (sizes differ by <= 1).
std::vector<PersistentStream> split_balanced(const PersistentStream& s, std::uint64_t parts);

// Scans a stream holding at most one block of blk_sz bytes in memory.
// Advancing past a block boundary drops the old block and pages in the
// next; the trailing block may be short.
template <class T>
class EmStreamIter final : public ElementIterator<T> {
public:
    EmStreamIter(const PersistentStream& s, std::uint64_t blk_sz)
        : stream_(s), blk_sz_(blk_sz) {
        if (blk_sz_ == 0 || blk_sz_ % sizeof(T) != 0)
            throw argument_error("blk_sz " + std::to_string(blk_sz) +
                                 " is not a positive multiple of the element size");
        if (storage_cost(elem_kind_of_v<T>) != storage_cost(s.kind))
            throw argument_error("element type mismatch scanning " + s.path.string());
        if (stream_.size > 0) {
            file_ = detail::FileHandle(stream_.path);
            map_block(0);
        }
    }

    bool eos() override { return curr_blk_ * blk_sz_ + cursor_ * sizeof(T) >= stream_.size; }

    const T& get() override { return reinterpret_cast<const T*>(block_.get())[cursor_]; }

    void next() override {
        ++cursor_;
        if (cursor_ * sizeof(T) == blk_sz_ && !eos()) {
            map_block(curr_blk_ + 1);
            cursor_ = 0;
        }
    }

    void clean() override {
        block_.reset();
        charge_.release();
        file_ = detail::FileHandle();
    }

    /// Number of blocks paged in so far (instrumentation).
    std::uint64_t block_activations() const { return activations_; }

private:
    void map_block(std::uint64_t blk) {
        const std::uint64_t begin = blk * blk_sz_;
        const std::uint64_t len = std::min(blk_sz_, stream_.size - begin);
        if (!block_) {
            block_.reset(new std::byte[blk_sz_]);
            charge_ = mem_gauge::Charge(mem_gauge::Category::paged_block, blk_sz_);
        }
        file_.pread_exact(block_.get(), len, stream_.offset + begin);
        curr_blk_ = blk;
        ++activations_;
    }

    PersistentStream stream_;
    std::uint64_t blk_sz_;
    detail::FileHandle file_;
    std::unique_ptr<std::byte[]> block_;
    mem_gauge::Charge charge_;
    std::uint64_t curr_blk_ = 0;
    std::uint64_t cursor_ = 0;
    std::uint64_t activations_ = 0;
};

template <class T>
IterPtr<T> em_stream_iter(const PersistentStream& s, std::uint64_t blk_sz) {
    return std::make_unique<EmStreamIter<T>>(s, blk_sz);
}

namespace detail {
/// Buffered element sink writing a new spill file.
class StreamWriter {
public:
    StreamWriter(SpillDirectory& dir, std::string_view phase, std::uint32_t box,
                 std::uint32_t worker, ElemKind kind);

    template <class T>
    void put(const T& v) {
        if (buf_.size() - fill_ < sizeof(T)) flush();
        std::memcpy(buf_.data() + fill_, &v, sizeof(T));
        fill_ += sizeof(T);
        written_ += sizeof(T);
    }

    void put_bytes(const void* p, std::uint64_t n);
    PersistentStream finish();

private:
    void flush();

    std::vector<std::byte> buf_;
    std::uint64_t fill_ = 0;
    std::uint64_t written_ = 0;
    FileHandle file_;
    ElemKind kind_;
};
} // namespace detail

/// Drain iter into a fresh spill file; iter is consumed and cleaned.
template <class T>
PersistentStream store(ElementIterator<T>& iter, SpillDirectory& dir,
                       std::string_view phase = "run", std::uint32_t box = 0,
                       std::uint32_t worker = 0) {
    detail::StreamWriter w(dir, phase, box, worker, elem_kind_of_v<T>);
    while (!iter.eos()) {
        w.put(iter.get());
        iter.next();
    }
    iter.clean();
    return w.finish();
}

template <class T>
PersistentStream store(IterPtr<T> iter, SpillDirectory& dir, std::string_view phase = "run",
                       std::uint32_t box = 0, std::uint32_t worker = 0) {
    return store(*iter, dir, phase, box, worker);
}

// External-sort run generation: cut s into chunks of at most mmc bytes,
// sort each in memory, spill each as its own run.
template <class T, class Cmp>
std::vector<PersistentStream> chunk_sort_spill(const PersistentStream& s, std::uint64_t mmc,
                                               Cmp cmp, SpillDirectory& dir,
                                               std::string_view phase = "sort",
                                               std::uint32_t box = 0, std::uint32_t worker = 0) {
    const std::uint64_t elem = storage_cost(s.kind);
    if (mmc < elem) throw argument_error("mmc smaller than one element");
    const std::uint64_t chunk_bytes = mmc / elem * elem;
    std::vector<PersistentStream> runs;
    for (const auto& chunk : split(s, chunk_bytes)) {
        auto ra = load<T>(chunk, chunk_bytes);
        std::sort(ra.elements().begin(), ra.elements().end(), cmp);
        detail::StreamWriter w(dir, phase, box, worker, s.kind);
        w.put_bytes(ra.elements().data(), ra.elements().size() * sizeof(T));
        runs.push_back(w.finish());
    }
    return runs;
}

/// Byte-identical copy of a stream region into a new spill file.
PersistentStream copy_stream(const PersistentStream& s, SpillDirectory& dir,
                             std::string_view phase, std::uint32_t box, std::uint32_t worker);

/// Stream descriptor over an entire existing file.
PersistentStream stream_over_file(const std::filesystem::path& p, ElemKind kind);

} // namespace csrpipe

#endif
