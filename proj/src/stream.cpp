#include "csrpipe/stream.hpp"

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

namespace csrpipe {

namespace detail {

FileHandle::FileHandle(const std::filesystem::path& p, bool writable) : path_(p) {
    int flags = writable ? (O_CREAT | O_WRONLY | O_TRUNC) : O_RDONLY;
    fd_ = ::open(p.c_str(), flags, 0644);
    if (fd_ < 0)
        throw storage_error("cannot open " + p.string() + ": " + std::strerror(errno));
}

FileHandle::~FileHandle() {
    if (fd_ >= 0) ::close(fd_);
}

FileHandle::FileHandle(FileHandle&& o) noexcept : fd_(o.fd_), path_(std::move(o.path_)) {
    o.fd_ = -1;
}

FileHandle& FileHandle::operator=(FileHandle&& o) noexcept {
    if (this != &o) {
        if (fd_ >= 0) ::close(fd_);
        fd_ = o.fd_;
        path_ = std::move(o.path_);
        o.fd_ = -1;
    }
    return *this;
}

void FileHandle::pread_exact(void* buf, std::uint64_t n, std::uint64_t off) const {
    auto* p = static_cast<char*>(buf);
    while (n > 0) {
        ssize_t r = ::pread(fd_, p, n, static_cast<off_t>(off));
        if (r < 0) {
            if (errno == EINTR) continue;
            throw storage_error("read failed on " + path_.string() + ": " + std::strerror(errno));
        }
        if (r == 0)
            throw storage_error("unexpected end of file in " + path_.string());
        p += r;
        n -= static_cast<std::uint64_t>(r);
        off += static_cast<std::uint64_t>(r);
    }
}

void FileHandle::write_all(const void* buf, std::uint64_t n) {
    const auto* p = static_cast<const char*>(buf);
    while (n > 0) {
        ssize_t r = ::write(fd_, p, n);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw storage_error("write failed on " + path_.string() + ": " + std::strerror(errno));
        }
        p += r;
        n -= static_cast<std::uint64_t>(r);
    }
}

void read_stream_bytes(const PersistentStream& s, void* out) {
    if (s.size == 0) return;
    FileHandle f(s.path);
    f.pread_exact(out, s.size, s.offset);
}

StreamWriter::StreamWriter(SpillDirectory& dir, std::string_view phase, std::uint32_t box,
                           std::uint32_t worker, ElemKind kind)
    : buf_(128 * 1024), file_(dir.next_run_path(phase, box, worker), /*writable=*/true),
      kind_(kind) {}

void StreamWriter::flush() {
    if (fill_ > 0) {
        file_.write_all(buf_.data(), fill_);
        fill_ = 0;
    }
}

void StreamWriter::put_bytes(const void* p, std::uint64_t n) {
    flush();
    file_.write_all(p, n);
    written_ += n;
}

PersistentStream StreamWriter::finish() {
    flush();
    return PersistentStream{file_.path(), 0, written_, kind_};
}

} // namespace detail

SpillDirectory::SpillDirectory(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw storage_error("cannot create spill directory " + root_.string() + ": " + ec.message());
}

std::filesystem::path SpillDirectory::next_run_path(std::string_view phase, std::uint32_t box,
                                                    std::uint32_t worker) {
    const std::uint64_t id = counter_.fetch_add(1);
    std::string name = std::string(phase) + "-" + std::to_string(box) + "-" +
                       std::to_string(worker) + "-" + std::to_string(id) + ".run";
    return root_ / name;
}

void SpillDirectory::remove_streams(const std::vector<PersistentStream>& streams) {
    for (const auto& s : streams) {
        std::error_code ec;
        std::filesystem::remove(s.path, ec); // best effort
    }
}

std::vector<PersistentStream> split(const PersistentStream& s, std::uint64_t chunk_bytes) {
    const std::uint64_t elem = storage_cost(s.kind);
    if (chunk_bytes == 0 || chunk_bytes % elem != 0)
        throw argument_error("chunk size " + std::to_string(chunk_bytes) +
                             " is not a positive multiple of the element size " +
                             std::to_string(elem));
    std::vector<PersistentStream> out;
    std::uint64_t pos = 0;
    while (pos < s.size) {
        const std::uint64_t len = std::min(chunk_bytes, s.size - pos);
        out.push_back(PersistentStream{s.path, s.offset + pos, len, s.kind});
        pos += len;
    }
    return out;
}

std::vector<PersistentStream> split_balanced(const PersistentStream& s, std::uint64_t parts) {
    if (parts == 0) throw argument_error("cannot split into zero parts");
    const std::uint64_t elem = storage_cost(s.kind);
    const std::uint64_t n = s.count();
    const std::uint64_t base = n / parts;
    const std::uint64_t rem = n % parts;
    std::vector<PersistentStream> out;
    std::uint64_t pos = 0;
    for (std::uint64_t i = 0; i < parts; ++i) {
        const std::uint64_t cnt = base + (i < rem ? 1 : 0);
        out.push_back(PersistentStream{s.path, s.offset + pos * elem, cnt * elem, s.kind});
        pos += cnt;
    }
    return out;
}

PersistentStream copy_stream(const PersistentStream& s, SpillDirectory& dir,
                             std::string_view phase, std::uint32_t box, std::uint32_t worker) {
    detail::StreamWriter w(dir, phase, box, worker, s.kind);
    detail::FileHandle in(s.path);
    std::vector<std::byte> buf(128 * 1024);
    std::uint64_t pos = 0;
    while (pos < s.size) {
        const std::uint64_t len = std::min<std::uint64_t>(buf.size(), s.size - pos);
        in.pread_exact(buf.data(), len, s.offset + pos);
        w.put_bytes(buf.data(), len);
        pos += len;
    }
    return w.finish();
}

PersistentStream stream_over_file(const std::filesystem::path& p, ElemKind kind) {
    std::error_code ec;
    const auto sz = std::filesystem::file_size(p, ec);
    if (ec) throw storage_error("cannot stat " + p.string() + ": " + ec.message());
    if (sz % storage_cost(kind) != 0)
        throw storage_error(p.string() + ": size " + std::to_string(sz) +
                            " is not a multiple of the " + std::string(elem_kind_name(kind)) +
                            " storage cost");
    return PersistentStream{p, 0, sz, kind};
}

} // namespace csrpipe
