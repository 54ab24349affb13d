#pragma once

// shared plumbing: error type, deterministic rng, content hashing, small utils

#include "echat.h"

#include <cstdint>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace echat {

// ---------------------------------------------------------------------------
// errors
//
// every failure inside the library throws echat::error carrying one of the
// C-level status codes; the C wrapper catches at the boundary and stores the
// message on the session.  pos is an optional 1-based position for stream /
// parse errors (-1 = not applicable).

struct error : std::runtime_error {
    echat_status st;
    long long    pos;

    error(echat_status st_, const std::string & msg, long long pos_ = -1)
        : std::runtime_error(msg), st(st_), pos(pos_) {}
};

[[noreturn]] void fail(echat_status st, const std::string & msg, long long pos = -1);

// shorthand used all over validation code
inline void check(bool cond, echat_status st, const std::string & msg) {
    if (!cond) {
        fail(st, msg);
    }
}

// ---------------------------------------------------------------------------
// deterministic rng
//
// mt19937_64 has a bit-exact sequence on every platform; the standard
// *distributions* do not, so uniform/normal draws are hand-rolled here.
// derive() gives decorrelated child streams from (seed, tag) so that every
// sample / template / stage owns an independent, reproducible stream.

struct rng {
    std::mt19937_64 gen;

    explicit rng(uint64_t seed) : gen(seed) {}

    uint64_t u64() { return gen(); }

    // uniform in [0, 1)
    double uniform() {
        return (u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // unbiased uniform integer in [0, n), n >= 1
    uint64_t uniform_int(uint64_t n);

    // standard normal via Box-Muller (one draw per call, no cached spare so
    // the stream stays position-independent)
    double normal() {
        double u1 = 0.0;
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    bool coin(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T> & v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

    // stable child stream for (this seed, tag, index)
    static rng derive(uint64_t seed, std::string_view tag, uint64_t index = 0);
};

// splitmix64 finalizer; used for seed mixing
uint64_t mix64(uint64_t x);

// ---------------------------------------------------------------------------
// content hashing (FNV-1a, 64-bit)

struct fnv1a {
    uint64_t h = 0xcbf29ce484222325ull;

    void update(const void * data, size_t n) {
        const auto * p = static_cast<const uint8_t *>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ull;
        }
    }

    void update(std::string_view s) { update(s.data(), s.size()); }

    template <typename T>
    void update_pod(const T & v) {
        static_assert(std::is_trivially_copyable_v<T>);
        update(&v, sizeof(v));
    }

    uint64_t digest() const { return h; }
};

uint64_t    hash_bytes(const void * data, size_t n);
uint64_t    hash_string(std::string_view s);
std::string hash_hex(uint64_t h);

// ---------------------------------------------------------------------------
// filesystem + string helpers

std::string read_text_file(const std::string & path);
void        write_text_file(const std::string & path, std::string_view content);
void        write_binary_file(const std::string & path, const void * data, size_t n);
std::vector<uint8_t> read_binary_file(const std::string & path);
void        ensure_dir(const std::string & path);   // mkdir -p
bool        path_exists(const std::string & path);
std::string path_join(const std::string & a, const std::string & b);

std::vector<std::string> split_ws(std::string_view s);
std::string              join(const std::vector<std::string> & parts, std::string_view sep);
std::string format_float(double v); // shortest round-trip decimal

// newline-delimited integer token files (one token id per line)
void                 write_token_file(const std::string & path, const std::vector<int32_t> & tokens);
std::vector<int32_t> read_token_file(const std::string & path);

const char * status_name(echat_status st);

} // namespace echat
