#pragma once

// continuous audio surrogate: a [frames x channels] float matrix with a frame
// rate, stored on disk as little-endian f32 payload + a text sidecar header.

#include <cstdint>
#include <string>
#include <vector>

namespace echat {

struct feature_matrix {
    int32_t frames     = 0;
    int32_t channels   = 0;
    float   frame_rate = 0.0f; // frames per second

    std::vector<float> data; // row-major, frames x channels

    float & at(int32_t t, int32_t c) { return data[(size_t) t * channels + c]; }
    float   at(int32_t t, int32_t c) const { return data[(size_t) t * channels + c]; }

    const float * row(int32_t t) const { return data.data() + (size_t) t * channels; }
    float *       row(int32_t t) { return data.data() + (size_t) t * channels; }

    static feature_matrix zeros(int32_t frames, int32_t channels, float frame_rate);
};

// writes base + ".f32" (payload) and base + ".hdr" (text header with frame
// count, channel count and frame rate)
void write_features(const std::string & base, const feature_matrix & m);

// inverse of write_features; validates header/payload consistency
feature_matrix read_features(const std::string & base);

// content hash over shape + payload bytes
uint64_t features_hash(const feature_matrix & m);

} // namespace echat
