#pragma once

// discrete speech codec: a k-means codebook over feature frames.  quantize
// maps frames to codebook indices (the LM's speech tokens); decode maps token
// sequences back to features (waveform surrogate), optionally smoothed.

#include "echat-features.h"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace echat {

struct codec_config {
    int32_t  codebook_size   = 256;
    int32_t  max_iterations  = 40;
    int32_t  max_fit_frames  = 40000; // seeded subsample cap for fitting
    int32_t  smoothing_width = 1;     // odd; 1 = no smoothing on decode
    uint64_t seed            = 1;
};

struct speech_codec {
    int32_t codebook_size   = 0;
    int32_t channels        = 0;
    float   frame_rate      = 0.0f;
    int32_t smoothing_width = 1;

    std::vector<float> centroids; // codebook_size x channels, row-major

    const float * centroid(int32_t k) const { return centroids.data() + (size_t) k * channels; }

    // nearest centroid per frame (squared euclidean, ties to the lowest index)
    std::vector<int32_t> quantize(const feature_matrix & m) const;
    int32_t              quantize_frame(const float * frame) const;

    // codebook lookup + optional centered moving average
    feature_matrix decode(const std::vector<int32_t> & indices) const;

    uint64_t content_hash() const;
};

struct codec_fit_stats {
    std::vector<double> inertia;      // per-iteration total squared error
    int32_t             frames_used  = 0;
    int32_t             iterations   = 0;
};

// Lloyd's algorithm with k-means++ seeding; deterministic for a given config
// and input order.  Empty clusters keep their previous centroid.  Throws
// invalid_config when the input has fewer distinct frames than codebook
// entries.
speech_codec fit_codec(const std::vector<const feature_matrix *> & data,
                       const codec_config & cfg,
                       codec_fit_stats * stats = nullptr);

void         write_codec(const std::string & path, const speech_codec & c);
speech_codec read_codec(const std::string & path);

} // namespace echat
