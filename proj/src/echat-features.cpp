#include "echat-features.h"

#include "echat-common.h"

#include <bit>
#include <cstring>

namespace echat {

feature_matrix feature_matrix::zeros(int32_t frames, int32_t channels, float frame_rate) {
    check(frames >= 0 && channels >= 1, ECHAT_ERR_DOMAIN, "bad feature matrix shape");
    feature_matrix m;
    m.frames     = frames;
    m.channels   = channels;
    m.frame_rate = frame_rate;
    m.data.assign((size_t) frames * channels, 0.0f);
    return m;
}

static_assert(sizeof(float) == 4);

void write_features(const std::string & base, const feature_matrix & m) {
    check(m.data.size() == (size_t) m.frames * m.channels, ECHAT_ERR_INTERNAL,
          "feature matrix shape/payload mismatch");
    std::string hdr;
    hdr += "echat-features 1\n";
    hdr += "frames " + std::to_string(m.frames) + "\n";
    hdr += "channels " + std::to_string(m.channels) + "\n";
    hdr += "frame_rate " + format_float(m.frame_rate) + "\n";
    write_text_file(base + ".hdr", hdr);
    // x86-style little-endian layout; asserted at build time below
    write_binary_file(base + ".f32", m.data.data(), m.data.size() * sizeof(float));
}

static_assert(std::endian::native == std::endian::little,
              "feature payloads are written as little-endian f32");

feature_matrix read_features(const std::string & base) {
    const std::string hdr_path = base + ".hdr";
    const std::string hdr      = read_text_file(hdr_path);

    feature_matrix m;
    bool have_frames = false, have_channels = false, have_rate = false;
    size_t i       = 0;
    int    line_no = 0;
    bool   magic   = false;
    while (i < hdr.size()) {
        size_t j = hdr.find('\n', i);
        if (j == std::string::npos) {
            j = hdr.size();
        }
        const std::string_view line(hdr.data() + i, j - i);
        ++line_no;
        i = j + 1;
        if (line.empty()) {
            continue;
        }
        const auto parts = split_ws(line);
        if (line_no == 1) {
            if (parts.size() != 2 || parts[0] != "echat-features" || parts[1] != "1") {
                fail(ECHAT_ERR_FORMAT, hdr_path + ": not an echat feature header");
            }
            magic = true;
            continue;
        }
        if (parts.size() != 2) {
            fail(ECHAT_ERR_FORMAT, hdr_path + ": malformed line " + std::to_string(line_no));
        }
        if (parts[0] == "frames") {
            m.frames    = (int32_t) std::stol(parts[1]);
            have_frames = true;
        } else if (parts[0] == "channels") {
            m.channels    = (int32_t) std::stol(parts[1]);
            have_channels = true;
        } else if (parts[0] == "frame_rate") {
            m.frame_rate = std::stof(parts[1]);
            have_rate    = true;
        } else {
            fail(ECHAT_ERR_FORMAT, hdr_path + ": unknown header field: " + parts[0]);
        }
    }
    if (!magic || !have_frames || !have_channels || !have_rate) {
        fail(ECHAT_ERR_FORMAT, hdr_path + ": incomplete header");
    }
    if (m.frames < 0 || m.channels < 1) {
        fail(ECHAT_ERR_FORMAT, hdr_path + ": invalid shape");
    }

    const auto payload = read_binary_file(base + ".f32");
    const size_t want  = (size_t) m.frames * m.channels * sizeof(float);
    if (payload.size() != want) {
        fail(ECHAT_ERR_FORMAT,
             base + ".f32: payload size " + std::to_string(payload.size()) +
             " does not match header (" + std::to_string(want) + " bytes expected)");
    }
    m.data.resize((size_t) m.frames * m.channels);
    std::memcpy(m.data.data(), payload.data(), payload.size());
    return m;
}

uint64_t features_hash(const feature_matrix & m) {
    fnv1a h;
    h.update_pod(m.frames);
    h.update_pod(m.channels);
    h.update_pod(m.frame_rate);
    h.update(m.data.data(), m.data.size() * sizeof(float));
    return h.digest();
}

} // namespace echat
