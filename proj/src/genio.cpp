#include "csrpipe/genio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "csrpipe/errors.hpp"

namespace csrpipe {

void GenSpec::validate() const {
    if (scale < 1) throw argument_error("scale must be >= 1");
    if (edge_factor < 1) throw argument_error("edge factor must be >= 1");
    if (scale > 40) throw argument_error("scale > 40 not supported");
    if (kind == GenKind::rmat && std::abs(a + b + c + d - 1.0) > 1e-9)
        throw argument_error("rmat probabilities must sum to 1");
}

namespace {

double unit_double(std::uint64_t& state) {
    return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

class UniformEdgeIter final : public ElementIterator<Edge> {
public:
    explicit UniformEdgeIter(const GenSpec& spec)
        : remaining_(spec.edge_count()), mask_((std::uint64_t{1} << spec.scale) - 1),
          state_(spec.seed) {
        advance();
    }

    bool eos() override { return done_; }
    const Edge& get() override { return current_; }
    void next() override { advance(); }
    void clean() override { remaining_ = 0; done_ = true; }

private:
    void advance() {
        if (remaining_ == 0) {
            done_ = true;
            return;
        }
        current_.src = splitmix64(state_) & mask_;
        current_.des = splitmix64(state_) & mask_;
        --remaining_;
    }

    std::uint64_t remaining_;
    std::uint64_t mask_;
    std::uint64_t state_;
    Edge current_{};
    bool done_ = false;
};

class RmatEdgeIter final : public ElementIterator<Edge> {
public:
    explicit RmatEdgeIter(const GenSpec& spec)
        : spec_(spec), remaining_(spec.edge_count()), state_(spec.seed) {
        advance();
    }

    bool eos() override { return done_; }
    const Edge& get() override { return current_; }
    void next() override { advance(); }
    void clean() override { remaining_ = 0; done_ = true; }

private:
    void advance() {
        if (remaining_ == 0) {
            done_ = true;
            return;
        }
        // recursive quadrant descent, one level per scale bit
        std::uint64_t src = 0, des = 0;
        for (std::uint32_t level = 0; level < spec_.scale; ++level) {
            const double u = unit_double(state_);
            src <<= 1;
            des <<= 1;
            if (u < spec_.a) {
            } else if (u < spec_.a + spec_.b) {
                des |= 1;
            } else if (u < spec_.a + spec_.b + spec_.c) {
                src |= 1;
            } else {
                src |= 1;
                des |= 1;
            }
        }
        current_ = Edge{src, des};
        --remaining_;
    }

    GenSpec spec_;
    std::uint64_t remaining_;
    std::uint64_t state_;
    Edge current_{};
    bool done_ = false;
};

} // namespace

IterPtr<Edge> gen_uniform(const GenSpec& spec) {
    spec.validate();
    if (spec.kind != GenKind::uniform) throw argument_error("spec is not uniform");
    return std::make_unique<UniformEdgeIter>(spec);
}

IterPtr<Edge> gen_rmat(const GenSpec& spec) {
    spec.validate();
    if (spec.kind != GenKind::rmat) throw argument_error("spec is not rmat");
    return std::make_unique<RmatEdgeIter>(spec);
}

IterPtr<Edge> generate(const GenSpec& spec) {
    return spec.kind == GenKind::uniform ? gen_uniform(spec) : gen_rmat(spec);
}

void write_edges_binary(const std::filesystem::path& p, ElementIterator<Edge>& it) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw storage_error("cannot open " + p.string() + " for writing");
    std::vector<Edge> buf;
    buf.reserve(8192);
    while (!it.eos()) {
        buf.push_back(it.get());
        it.next();
        if (buf.size() == buf.capacity()) {
            out.write(reinterpret_cast<const char*>(buf.data()),
                      static_cast<std::streamsize>(buf.size() * sizeof(Edge)));
            buf.clear();
        }
    }
    if (!buf.empty())
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(Edge)));
    it.clean();
    if (!out) throw storage_error("write failed on " + p.string());
}

void write_edges_text(const std::filesystem::path& p, ElementIterator<Edge>& it) {
    std::ofstream out(p);
    if (!out) throw storage_error("cannot open " + p.string() + " for writing");
    while (!it.eos()) {
        const Edge& e = it.get();
        out << e.src << ' ' << e.des << '\n';
        it.next();
    }
    it.clean();
    if (!out) throw storage_error("write failed on " + p.string());
}

std::vector<Edge> read_edges_binary(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw storage_error("cannot open " + p.string());
    const auto bytes = static_cast<std::uint64_t>(in.tellg());
    if (bytes % sizeof(Edge) != 0)
        throw storage_error(p.string() + ": size " + std::to_string(bytes) +
                            " is not a multiple of 16");
    in.seekg(0);
    std::vector<Edge> edges(bytes / sizeof(Edge));
    in.read(reinterpret_cast<char*>(edges.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw storage_error("read failed on " + p.string());
    return edges;
}

std::vector<Edge> read_edges_text(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw storage_error("cannot open " + p.string());
    std::vector<Edge> edges;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Edge e;
        if (!(ls >> e.src >> e.des)) throw parse_error(line_no, "expected 'src des'");
        std::string extra;
        if (ls >> extra) throw parse_error(line_no, "trailing tokens after edge");
        edges.push_back(e);
    }
    return edges;
}

} // namespace csrpipe
