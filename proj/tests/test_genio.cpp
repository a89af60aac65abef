#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "csrpipe/genio.hpp"
#include "test_util.hpp"

using namespace csrpipe;

TEST_CASE("uniform generator honors scale and edge factor") {
    GenSpec spec;
    spec.scale = 3;
    spec.edge_factor = 8;
    spec.seed = 1;
    auto it = gen_uniform(spec);
    auto edges = collect(*it);
    CHECK(edges.size() == 64);
    for (const auto& e : edges) {
        CHECK(e.src < 8);
        CHECK(e.des < 8);
    }
}

TEST_CASE("generators are deterministic per seed") {
    GenSpec spec;
    spec.scale = 8;
    spec.seed = 1234;
    auto a = collect(*gen_uniform(spec));
    auto b = collect(*gen_uniform(spec));
    CHECK(a == b);
    spec.seed = 1235;
    CHECK(collect(*gen_uniform(spec)) != a);

    spec.kind = GenKind::rmat;
    auto r1 = collect(*gen_rmat(spec));
    auto r2 = collect(*gen_rmat(spec));
    CHECK(r1 == r2);
}

TEST_CASE("uniform endpoint histogram is flat within four sigma") {
    GenSpec spec;
    spec.scale = 10;
    spec.edge_factor = 977; // just over 10^6 edges
    spec.seed = 7;
    std::vector<std::uint64_t> hist(1024, 0);
    std::uint64_t endpoints = 0;
    auto it = gen_uniform(spec);
    scan(*it, [&](const Edge& e) {
        ++hist[e.src];
        ++hist[e.des];
        endpoints += 2;
    });
    CHECK(endpoints == 2 * spec.edge_count());
    const double n = static_cast<double>(endpoints);
    const double p = 1.0 / 1024.0;
    const double mean = n * p;
    const double sigma = std::sqrt(n * p * (1 - p));
    std::uint64_t worst = 0;
    for (std::uint64_t h : hist)
        worst = std::max(worst, static_cast<std::uint64_t>(
                                    std::llabs(static_cast<long long>(h) -
                                               static_cast<long long>(mean))));
    CHECK(static_cast<double>(worst) <= 4.0 * sigma);
}

TEST_CASE("degenerate rmat corner produces only self-loops at zero") {
    GenSpec spec;
    spec.kind = GenKind::rmat;
    spec.scale = 1;
    spec.edge_factor = 4;
    spec.a = 1.0;
    spec.b = spec.c = spec.d = 0.0;
    for (const auto& e : collect(*gen_rmat(spec))) {
        CHECK(e.src == 0);
        CHECK(e.des == 0);
    }
}

TEST_CASE("rmat skews out-degree beyond the uniform generator") {
    auto max_out_degree = [](const std::vector<Edge>& edges) {
        std::map<Label, std::uint64_t> deg;
        for (const auto& e : edges) ++deg[e.src];
        std::uint64_t best = 0;
        for (const auto& [_, d] : deg) best = std::max(best, d);
        return best;
    };
    GenSpec spec;
    spec.scale = 12;
    spec.edge_factor = 8;
    spec.seed = 5;
    const auto uniform_max = max_out_degree(collect(*gen_uniform(spec)));
    spec.kind = GenKind::rmat;
    const auto rmat_max = max_out_degree(collect(*gen_rmat(spec)));
    CHECK(rmat_max > uniform_max);
}

TEST_CASE("rmat probabilities must sum to one") {
    GenSpec spec;
    spec.kind = GenKind::rmat;
    spec.a = 0.9;
    spec.b = spec.c = spec.d = 0.0;
    CHECK_THROWS_AS(gen_rmat(spec), argument_error);
}

TEST_CASE("binary edge files round-trip") {
    testutil::TempDir tmp("edges-bin");
    auto edges = testutil::random_edges(1000, 1 << 20, 77);
    auto it = make_vec_iter(edges);
    const auto path = tmp / "e.bin";
    write_edges_binary(path, *it);
    CHECK(read_edges_binary(path) == edges);
}

TEST_CASE("text edge files parse and report malformed lines") {
    testutil::TempDir tmp("edges-text");
    const auto path = tmp / "e.txt";
    {
        std::ofstream out(path);
        out << "3 5\n";
    }
    auto edges = read_edges_text(path);
    REQUIRE(edges.size() == 1);
    CHECK(edges[0] == Edge{3, 5});

    {
        std::ofstream out(path);
        out << "1 2\nbogus\n";
    }
    try {
        read_edges_text(path);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(e.line == 2);
    }
}

TEST_CASE("text round trip and misaligned binary rejection") {
    testutil::TempDir tmp("edges-rt");
    auto edges = testutil::random_edges(100, 1000, 3);
    auto it = make_vec_iter(edges);
    const auto tpath = tmp / "e.txt";
    write_edges_text(tpath, *it);
    CHECK(read_edges_text(tpath) == edges);

    const auto bpath = tmp / "odd.bin";
    {
        std::ofstream out(bpath, std::ios::binary);
        out << "xyz"; // 3 bytes, not a multiple of 16
    }
    CHECK_THROWS_AS(read_edges_binary(bpath), storage_error);
}
