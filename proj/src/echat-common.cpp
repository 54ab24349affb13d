#include "echat-common.h"

#include <cstdio>
#include <cstring>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace echat {

void fail(echat_status st, const std::string & msg, long long pos) {
    throw error(st, msg, pos);
}

uint64_t rng::uniform_int(uint64_t n) {
    if (n == 0) {
        fail(ECHAT_ERR_INTERNAL, "uniform_int: empty range");
    }
    // rejection sampling for an unbiased draw
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = u64();
    } while (x >= limit);
    return x % n;
}

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

rng rng::derive(uint64_t seed, std::string_view tag, uint64_t index) {
    fnv1a h;
    h.update_pod(seed);
    h.update(tag);
    h.update_pod(index);
    return rng(mix64(h.digest()));
}

uint64_t hash_bytes(const void * data, size_t n) {
    fnv1a h;
    h.update(data, n);
    return h.digest();
}

uint64_t hash_string(std::string_view s) {
    return hash_bytes(s.data(), s.size());
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long) h);
    return buf;
}

// ---------------------------------------------------------------------------

std::string read_text_file(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(ECHAT_ERR_IO, "cannot open file for reading: " + path);
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    if (!f.good() && !f.eof()) {
        fail(ECHAT_ERR_IO, "read failed: " + path);
    }
    return ss.str();
}

void write_text_file(const std::string & path, std::string_view content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        fail(ECHAT_ERR_IO, "cannot open file for writing: " + path);
    }
    f.write(content.data(), (std::streamsize) content.size());
    if (!f.good()) {
        fail(ECHAT_ERR_IO, "write failed: " + path);
    }
}

void write_binary_file(const std::string & path, const void * data, size_t n) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        fail(ECHAT_ERR_IO, "cannot open file for writing: " + path);
    }
    f.write(static_cast<const char *>(data), (std::streamsize) n);
    if (!f.good()) {
        fail(ECHAT_ERR_IO, "write failed: " + path);
    }
}

std::vector<uint8_t> read_binary_file(const std::string & path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) {
        fail(ECHAT_ERR_IO, "cannot open file for reading: " + path);
    }
    const auto n = (size_t) f.tellg();
    f.seekg(0);
    std::vector<uint8_t> buf(n);
    if (n > 0) {
        f.read(reinterpret_cast<char *>(buf.data()), (std::streamsize) n);
    }
    if (!f.good() && n > 0) {
        fail(ECHAT_ERR_IO, "read failed: " + path);
    }
    return buf;
}

void ensure_dir(const std::string & path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) {
        fail(ECHAT_ERR_IO, "cannot create directory " + path + ": " + ec.message());
    }
}

bool path_exists(const std::string & path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

std::string path_join(const std::string & a, const std::string & b) {
    if (a.empty()) {
        return b;
    }
    if (a.back() == '/') {
        return a + b;
    }
    return a + "/" + b;
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace((unsigned char) s[i])) {
            ++i;
        }
        size_t j = i;
        while (j < s.size() && !std::isspace((unsigned char) s[j])) {
            ++j;
        }
        if (j > i) {
            out.emplace_back(s.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

std::string join(const std::vector<std::string> & parts, std::string_view sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) {
            out += sep;
        }
        out += parts[i];
    }
    return out;
}

std::string format_float(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_token_file(const std::string & path, const std::vector<int32_t> & tokens) {
    std::string out;
    out.reserve(tokens.size() * 6);
    for (int32_t t : tokens) {
        out += std::to_string(t);
        out += '\n';
    }
    write_text_file(path, out);
}

std::vector<int32_t> read_token_file(const std::string & path) {
    const std::string text = read_text_file(path);
    std::vector<int32_t> out;
    size_t line_no = 0;
    size_t i = 0;
    while (i < text.size()) {
        size_t j = text.find('\n', i);
        if (j == std::string::npos) {
            j = text.size();
        }
        std::string_view line(text.data() + i, j - i);
        ++line_no;
        if (!line.empty()) {
            int32_t v = 0;
            auto res = std::from_chars(line.data(), line.data() + line.size(), v);
            if (res.ec != std::errc() || res.ptr != line.data() + line.size()) {
                fail(ECHAT_ERR_FORMAT,
                     "token file " + path + ": line " + std::to_string(line_no) +
                     " is not an integer", (long long) line_no);
            }
            out.push_back(v);
        }
        i = j + 1;
    }
    return out;
}

const char * status_name(echat_status st) {
    switch (st) {
        case ECHAT_OK:                   return "ok";
        case ECHAT_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case ECHAT_ERR_INVALID_CONFIG:   return "invalid_config";
        case ECHAT_ERR_IO:               return "io_error";
        case ECHAT_ERR_FORMAT:           return "format_error";
        case ECHAT_ERR_DOMAIN:           return "domain_error";
        case ECHAT_ERR_PROTOCOL:         return "protocol_error";
        case ECHAT_ERR_PARSE:            return "parse_error";
        case ECHAT_ERR_UNTERMINATED:     return "unterminated_span";
        case ECHAT_ERR_CAPACITY:         return "capacity_error";
        case ECHAT_ERR_CURRICULUM:       return "curriculum_error";
        case ECHAT_ERR_DISJOINTNESS:     return "disjointness_error";
        case ECHAT_ERR_JUDGE:            return "judge_error";
        case ECHAT_ERR_STATE:            return "state_error";
        case ECHAT_ERR_RUN_INVALID:      return "run_invalid";
        case ECHAT_ERR_NUMERIC:          return "numeric_error";
        case ECHAT_ERR_INTERNAL:         return "internal_error";
    }
    return "unknown";
}

} // namespace echat
