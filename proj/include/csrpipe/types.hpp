#ifndef CSRPIPE_TYPES_HPP
#define CSRPIPE_TYPES_HPP

#include <cstdint>
#include <tuple>
#include <type_traits>

#include "csrpipe/errors.hpp"

namespace csrpipe {

/// Vertex identifier as found in raw input.
using Label = std::uint64_t;

/// Raw input edge: a pair of labels.
struct Edge {
    Label src;
    Label des;
    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Owner box in the upper 16 bits, dense per-box local id in the lower 48.
struct GlobalVertexId {
    std::uint64_t packed{0};

    static constexpr std::uint64_t local_bits = 48;
    static constexpr std::uint64_t local_mask = (std::uint64_t{1} << local_bits) - 1;

    static GlobalVertexId make(std::uint32_t box, std::uint64_t local) {
        if (box > 0xffffu)
            throw argument_error("box rank " + std::to_string(box) + " exceeds 16-bit limit");
        if (local > local_mask)
            throw argument_error("local id " + std::to_string(local) + " exceeds 48-bit limit");
        return GlobalVertexId{(std::uint64_t{box} << local_bits) | local};
    }

    std::uint32_t box() const { return static_cast<std::uint32_t>(packed >> local_bits); }
    std::uint64_t local() const { return packed & local_mask; }

    friend bool operator==(const GlobalVertexId&, const GlobalVertexId&) = default;
    friend bool operator<(const GlobalVertexId& a, const GlobalVertexId& b) { return a.packed < b.packed; }
};

/// One row of a box's identifier map.
struct IdMapEntry {
    Label label;
    GlobalVertexId gid;
    friend bool operator==(const IdMapEntry&, const IdMapEntry&) = default;
};

/// Edge after the destination field has been relabeled.
struct DestRelabeledEdge {
    Label src;
    GlobalVertexId des;
    friend bool operator==(const DestRelabeledEdge&, const DestRelabeledEdge&) = default;
};

/// Edge after both fields have been relabeled.
struct FullyRelabeledEdge {
    GlobalVertexId src;
    GlobalVertexId des;
    friend bool operator==(const FullyRelabeledEdge&, const FullyRelabeledEdge&) = default;
};

static_assert(sizeof(Label) == 8);
static_assert(sizeof(Edge) == 16 && std::is_trivially_copyable_v<Edge>);
static_assert(sizeof(IdMapEntry) == 16 && std::is_trivially_copyable_v<IdMapEntry>);
static_assert(sizeof(DestRelabeledEdge) == 16);
static_assert(sizeof(FullyRelabeledEdge) == 16);

/// On-disk element categories.
enum class ElemKind : std::uint8_t { label, edge, idmap_entry };

constexpr std::uint64_t storage_cost(ElemKind k) {
    switch (k) {
    case ElemKind::label: return 8;
    case ElemKind::edge: return 16;
    case ElemKind::idmap_entry: return 16;
    }
    return 0;
}

inline const char* elem_kind_name(ElemKind k) {
    switch (k) {
    case ElemKind::label: return "label";
    case ElemKind::edge: return "edge";
    case ElemKind::idmap_entry: return "idmap_entry";
    }
    return "?";
}

template <class T> struct elem_kind_of;
template <> struct elem_kind_of<Label> { static constexpr ElemKind value = ElemKind::label; };
template <> struct elem_kind_of<Edge> { static constexpr ElemKind value = ElemKind::edge; };
template <> struct elem_kind_of<DestRelabeledEdge> { static constexpr ElemKind value = ElemKind::edge; };
template <> struct elem_kind_of<FullyRelabeledEdge> { static constexpr ElemKind value = ElemKind::edge; };
template <> struct elem_kind_of<IdMapEntry> { static constexpr ElemKind value = ElemKind::idmap_entry; };
template <class T> constexpr ElemKind elem_kind_of_v = elem_kind_of<T>::value;

// Orderings used by the sort/merge/join chain. Edge orderings compare both
// fields so the merged sequence is a deterministic function of the element
// multiset alone, independent of how runs were chunked.
struct LabelLess {
    bool operator()(Label a, Label b) const { return a < b; }
};
struct EdgeByDes {
    bool operator()(const Edge& a, const Edge& b) const {
        return std::tie(a.des, a.src) < std::tie(b.des, b.src);
    }
};
struct DreBySrc {
    bool operator()(const DestRelabeledEdge& a, const DestRelabeledEdge& b) const {
        return std::tie(a.src, a.des.packed) < std::tie(b.src, b.des.packed);
    }
};
struct FreBySrc {
    bool operator()(const FullyRelabeledEdge& a, const FullyRelabeledEdge& b) const {
        return a.src.packed < b.src.packed;
    }
};
struct IdMapByLabel {
    bool operator()(const IdMapEntry& a, const IdMapEntry& b) const { return a.label < b.label; }
};

/// FNV-1a over a byte range; used for manifest content hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace csrpipe

#endif
