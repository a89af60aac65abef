// Command-line driver: generate edge lists, run distributed CSR builds
// (inproc threads or one TCP process per box), verify against the in-memory
// reference build, and summarize pipeline traces.

#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "csrpipe/genio.hpp"
#include "csrpipe/oracle.hpp"
#include "csrpipe/pipeline.hpp"
#include "csrpipe/trace.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_usage = 2;
constexpr int exit_deadlock = 3;

std::function<std::uint32_t(csrpipe::Label)> make_label_map(const std::string& name,
                                                            std::uint32_t nb) {
    if (name == "mod") return [nb](csrpipe::Label l) { return static_cast<std::uint32_t>(l % nb); };
    if (name == "parity") {
        if (nb != 2) throw csrpipe::argument_error("parity label map requires --nb 2");
        return [](csrpipe::Label l) { return static_cast<std::uint32_t>(l % 2 == 1 ? 0 : 1); };
    }
    throw csrpipe::argument_error("unknown label map '" + name + "' (use mod or parity)");
}

std::vector<csrpipe::Edge> read_edges(const std::string& path, const std::string& format) {
    if (format == "text") return csrpipe::read_edges_text(path);
    return csrpipe::read_edges_binary(path);
}

struct GenerateArgs {
    std::string kind = "uniform";
    std::uint32_t scale = 0;
    std::uint32_t edge_factor = 8;
    std::uint64_t seed = 1;
    std::string out;
    std::string format = "bin";
    double a = 0.57, b = 0.19, c = 0.19, d = 0.05;
};

int cmd_generate(const GenerateArgs& args) {
    csrpipe::GenSpec spec;
    spec.kind = args.kind == "rmat" ? csrpipe::GenKind::rmat : csrpipe::GenKind::uniform;
    spec.scale = args.scale;
    spec.edge_factor = args.edge_factor;
    spec.seed = args.seed;
    spec.a = args.a;
    spec.b = args.b;
    spec.c = args.c;
    spec.d = args.d;
    auto it = csrpipe::generate(spec);
    if (args.format == "text")
        csrpipe::write_edges_text(args.out, *it);
    else
        csrpipe::write_edges_binary(args.out, *it);
    return exit_ok;
}

struct BuildArgs {
    std::string input;
    std::string input_format = "bin";
    std::string out;
    std::uint32_t nb = 1;
    std::uint32_t nc = 1;
    std::uint64_t blk_sz = 64 * 1024;
    std::uint64_t mmc = 8 * 1024 * 1024;
    std::string spill_dir;
    std::string transport = "inproc";
    std::uint32_t rank = 0;
    std::string peers;
    bool rendezvous = false;
    bool no_buffered_reader = false;
    bool serialize_comm = false;
    std::string trace_path;
    double watchdog = 10.0;
    bool keep_spill = false;
    std::string label_map = "mod";
};

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto comma = s.find(',', pos);
        if (comma == std::string::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

csrpipe::PersistentStream open_input(const BuildArgs& args, const std::string& spill_root) {
    if (args.input_format == "text") {
        // convert once into a binary staging file next to the spills
        auto edges = csrpipe::read_edges_text(args.input);
        auto staged = std::filesystem::path(spill_root) / "input-staged.bin";
        std::filesystem::create_directories(staged.parent_path());
        auto it = csrpipe::make_vec_iter(std::move(edges));
        csrpipe::write_edges_binary(staged, *it);
        return csrpipe::stream_over_file(staged, csrpipe::ElemKind::edge);
    }
    return csrpipe::stream_over_file(args.input, csrpipe::ElemKind::edge);
}

int report_build_error(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const csrpipe::deadlock_error& ex) {
        std::cerr << "deadlock: " << ex.what() << '\n';
        return exit_deadlock;
    } catch (const std::exception& ex) {
        std::cerr << "build failed: " << ex.what() << '\n';
        return exit_failure;
    }
}

int cmd_build(const BuildArgs& args) {
    csrpipe::TransportConfig tcfg;
    tcfg.backend = args.transport == "tcp" ? csrpipe::Backend::tcp : csrpipe::Backend::inproc;
    tcfg.rendezvous = args.rendezvous;
    tcfg.serialize_comm = args.serialize_comm;
    tcfg.buffered_reader = !args.no_buffered_reader;
    tcfg.watchdog_seconds = args.watchdog;

    csrpipe::BuildConfig base;
    base.nc = args.nc;
    base.blk_sz = args.blk_sz;
    base.mmc = args.mmc;
    base.out_dir = args.out;
    base.transport = tcfg;
    base.keep_spill = args.keep_spill;
    base.label_map_name = args.label_map;

    csrpipe::TraceSink sink;
    const bool tracing = !args.trace_path.empty();

    if (tcfg.backend == csrpipe::Backend::tcp) {
        const auto peers = split_commas(args.peers);
        if (peers.size() < 1) {
            std::cerr << "tcp transport requires --peers\n";
            return exit_usage;
        }
        base.nb = static_cast<std::uint32_t>(peers.size());
        base.label_map = make_label_map(args.label_map, base.nb);
        base.spill_dir = std::filesystem::path(args.spill_dir) /
                         ("box-" + std::to_string(args.rank));
        try {
            auto input = open_input(args, args.spill_dir);
            auto tile = csrpipe::split_balanced(input, base.nb)[args.rank];
            auto mesh = csrpipe::make_tcp_mesh(args.rank, peers, tcfg);
            if (tracing) mesh->set_trace(&sink);
            csrpipe::run(*mesh, base, tile);
        } catch (...) {
            return report_build_error(std::current_exception());
        }
        if (tracing) sink.write_jsonl(args.trace_path);
        return exit_ok;
    }

    // inproc: one thread group per box in this process
    base.nb = args.nb;
    base.label_map = make_label_map(args.label_map, base.nb);
    std::vector<std::exception_ptr> errors(base.nb);
    try {
        auto input = open_input(args, args.spill_dir);
        auto tiles = csrpipe::split_balanced(input, base.nb);
        auto meshes = csrpipe::make_inproc_mesh(base.nb, tcfg);
        std::vector<std::thread> boxes;
        for (std::uint32_t r = 0; r < base.nb; ++r) {
            boxes.emplace_back([&, r] {
                try {
                    csrpipe::BuildConfig cfg = base;
                    cfg.spill_dir =
                        std::filesystem::path(args.spill_dir) / ("box-" + std::to_string(r));
                    if (tracing) meshes[r]->set_trace(&sink);
                    csrpipe::run(*meshes[r], cfg, tiles[r]);
                } catch (...) {
                    errors[r] = std::current_exception();
                    try {
                        meshes[r]->abort("box " + std::to_string(r) + " failed");
                    } catch (...) {
                    }
                }
            });
        }
        for (auto& t : boxes) t.join();
    } catch (const std::exception& ex) {
        std::cerr << "build failed: " << ex.what() << '\n';
        return exit_failure;
    }
    if (tracing) sink.write_jsonl(args.trace_path);

    // deadlock reports take precedence over the secondary aborts they cause
    int rc = exit_ok;
    for (const auto& e : errors) {
        if (!e) continue;
        const int this_rc = report_build_error(e);
        if (rc == exit_ok || this_rc == exit_deadlock) rc = this_rc;
    }
    return rc;
}

struct VerifyArgs {
    std::string partitions;
    std::string input;
    std::string input_format = "bin";
    std::uint32_t nb = 1;
    std::string label_map = "mod";
};

int cmd_verify(const VerifyArgs& args) {
    const auto edges = read_edges(args.input, args.input_format);
    const auto expected = csrpipe::oracle::oracle_build(edges, args.nb,
                                                        make_label_map(args.label_map, args.nb));
    std::vector<csrpipe::oracle::PartitionImage> actual;
    for (std::uint32_t r = 0; r < args.nb; ++r)
        actual.push_back(csrpipe::load_partition_image(args.partitions, r));
    const auto report = csrpipe::oracle::compare(actual, expected);
    if (!report.ok()) {
        std::cerr << report.to_string();
        return exit_failure;
    }
    return exit_ok;
}

int cmd_trace_report(const std::string& trace_path) {
    const auto events = csrpipe::load_trace_jsonl(trace_path);
    const auto report = csrpipe::analyze_trace(events);
    std::cout << csrpipe::format_report(report);
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"out-of-core distributed CSR builder"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "write a synthetic edge list");
    generate->add_option("--kind", gen.kind)->check(CLI::IsMember({"uniform", "rmat"}));
    generate->add_option("--scale", gen.scale, "log2 vertex count")->required();
    generate->add_option("--edge-factor", gen.edge_factor);
    generate->add_option("--seed", gen.seed);
    generate->add_option("--out", gen.out)->required();
    generate->add_option("--format", gen.format)->check(CLI::IsMember({"bin", "text"}));
    generate->add_option("--rmat-a", gen.a);
    generate->add_option("--rmat-b", gen.b);
    generate->add_option("--rmat-c", gen.c);
    generate->add_option("--rmat-d", gen.d);

    BuildArgs build;
    auto* build_cmd = app.add_subcommand("build", "build the distributed CSR");
    build_cmd->add_option("--input", build.input)->required();
    build_cmd->add_option("--input-format", build.input_format)
        ->check(CLI::IsMember({"bin", "text"}));
    build_cmd->add_option("--out", build.out)->required();
    build_cmd->add_option("--nb", build.nb, "box count (inproc)");
    build_cmd->add_option("--nc", build.nc, "workers per box");
    build_cmd->add_option("--blk-sz", build.blk_sz, "message/block bytes");
    build_cmd->add_option("--mmc", build.mmc, "per-worker sort chunk bytes");
    build_cmd->add_option("--spill-dir", build.spill_dir)->required();
    build_cmd->add_option("--transport", build.transport)
        ->check(CLI::IsMember({"inproc", "tcp"}));
    build_cmd->add_option("--rank", build.rank, "this box's rank (tcp)");
    build_cmd->add_option("--peers", build.peers, "comma-separated host:port per rank (tcp)");
    build_cmd->add_flag("--rendezvous", build.rendezvous,
                        "sends block until the matching receive is posted");
    build_cmd->add_flag("--no-buffered-reader", build.no_buffered_reader,
                        "receive with naive per-sender blocking reads");
    build_cmd->add_flag("--serialize-comm", build.serialize_comm,
                        "serialize all transport calls per box");
    build_cmd->add_option("--trace", build.trace_path, "write a JSONL event trace");
    build_cmd->add_option("--watchdog", build.watchdog, "rendezvous watchdog seconds");
    build_cmd->add_flag("--keep-spill", build.keep_spill);
    build_cmd->add_option("--label-map", build.label_map)
        ->check(CLI::IsMember({"mod", "parity"}));

    VerifyArgs verify;
    auto* verify_cmd = app.add_subcommand("verify", "compare partitions to the reference build");
    verify_cmd->add_option("--partitions", verify.partitions)->required();
    verify_cmd->add_option("--input", verify.input)->required();
    verify_cmd->add_option("--input-format", verify.input_format)
        ->check(CLI::IsMember({"bin", "text"}));
    verify_cmd->add_option("--nb", verify.nb)->required();
    verify_cmd->add_option("--label-map", verify.label_map)
        ->check(CLI::IsMember({"mod", "parity"}));

    std::string trace_path;
    auto* trace_cmd = app.add_subcommand("trace-report", "summarize a JSONL trace");
    trace_cmd->add_option("--trace", trace_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << '\n' << app.help();
        return exit_usage;
    }

    try {
        if (generate->parsed()) return cmd_generate(gen);
        if (build_cmd->parsed()) return cmd_build(build);
        if (verify_cmd->parsed()) return cmd_verify(verify);
        if (trace_cmd->parsed()) return cmd_trace_report(trace_path);
    } catch (const csrpipe::parse_error& ex) {
        std::cerr << ex.what() << '\n';
        return exit_usage;
    } catch (const csrpipe::argument_error& ex) {
        std::cerr << ex.what() << '\n';
        return exit_usage;
    } catch (const csrpipe::deadlock_error& ex) {
        std::cerr << "deadlock: " << ex.what() << '\n';
        return exit_deadlock;
    } catch (const std::exception& ex) {
        std::cerr << ex.what() << '\n';
        return exit_failure;
    }
    return exit_usage;
}
