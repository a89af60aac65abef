#ifndef CSRPIPE_GENIO_HPP
#define CSRPIPE_GENIO_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include "csrpipe/iterators.hpp"
#include "csrpipe/types.hpp"

namespace csrpipe {

// splitmix64: the fixed counter-based generator behind every synthetic
// stream, so identical seeds reproduce identical edge lists anywhere.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

enum class GenKind { uniform, rmat };

struct GenSpec {
    GenKind kind = GenKind::uniform;
    std::uint32_t scale = 10;      // n = 2^scale vertices
    std::uint32_t edge_factor = 8; // m = edge_factor * 2^scale edges
    std::uint64_t seed = 1;
    double a = 0.57, b = 0.19, c = 0.19, d = 0.05;

    std::uint64_t edge_count() const { return std::uint64_t{edge_factor} << scale; }
    void validate() const;
};

IterPtr<Edge> gen_uniform(const GenSpec& spec);
IterPtr<Edge> gen_rmat(const GenSpec& spec);
IterPtr<Edge> generate(const GenSpec& spec);

void write_edges_binary(const std::filesystem::path& p, ElementIterator<Edge>& it);
void write_edges_text(const std::filesystem::path& p, ElementIterator<Edge>& it);
std::vector<Edge> read_edges_binary(const std::filesystem::path& p);
std::vector<Edge> read_edges_text(const std::filesystem::path& p);

} // namespace csrpipe

#endif
