#ifndef CSRPIPE_ERRORS_HPP
#define CSRPIPE_ERRORS_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace csrpipe {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File-system level failure; message names the offending path.
struct storage_error : error {
    using error::error;
};

struct argument_error : error {
    using error::error;
};

/// A load() was asked to materialize more bytes than the configured chunk budget.
struct budget_error : error {
    budget_error(std::uint64_t requested, std::uint64_t budget)
        : error("stream of " + std::to_string(requested) +
                " bytes exceeds in-memory chunk budget of " + std::to_string(budget) + " bytes"),
          requested_bytes(requested), budget_bytes(budget) {}
    std::uint64_t requested_bytes;
    std::uint64_t budget_bytes;
};

/// An input that was promised sorted produced a decreasing adjacent pair.
struct sortedness_error : error {
    explicit sortedness_error(std::size_t input, const std::string& what_arg)
        : error(what_arg), input_index(input) {}
    std::size_t input_index;
};

/// Outer join key has no match in the inner (unique-key) stream.
struct join_key_miss : error {
    explicit join_key_miss(std::uint64_t key)
        : error("join key " + std::to_string(key) + " missing from inner stream"), key(key) {}
    std::uint64_t key;
};

struct transport_error : error {
    using error::error;
};

/// Raised by the watchdog; message carries the wait-for diagnostic.
struct deadlock_error : transport_error {
    using transport_error::transport_error;
};

/// Message-protocol violation (e.g. channel ended mid-session).
struct protocol_error : transport_error {
    using transport_error::transport_error;
};

/// Another box aborted the build; all blocking transport calls unwind with this.
struct aborted_error : transport_error {
    using transport_error::transport_error;
};

/// Malformed textual input; line numbers are 1-based.
struct parse_error : error {
    parse_error(std::size_t line_no, const std::string& what_arg)
        : error("line " + std::to_string(line_no) + ": " + what_arg), line(line_no) {}
    std::size_t line;
};

} // namespace csrpipe

#endif
