#include "echat-codec.h"

#include "echat-common.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

using json = nlohmann::ordered_json;

namespace echat {

static double frame_dist2(const float * a, const float * b, int32_t n) {
    double d = 0.0;
    for (int32_t i = 0; i < n; ++i) {
        const double x = (double) a[i] - b[i];
        d += x * x;
    }
    return d;
}

int32_t speech_codec::quantize_frame(const float * frame) const {
    int32_t best   = 0;
    double  best_d = frame_dist2(frame, centroid(0), channels);
    for (int32_t k = 1; k < codebook_size; ++k) {
        const double d = frame_dist2(frame, centroid(k), channels);
        if (d < best_d) { // strict: ties keep the lowest index
            best_d = d;
            best   = k;
        }
    }
    return best;
}

std::vector<int32_t> speech_codec::quantize(const feature_matrix & m) const {
    check(m.channels == channels, ECHAT_ERR_DOMAIN,
          "feature channels " + std::to_string(m.channels) +
          " do not match codec channels " + std::to_string(channels));
    std::vector<int32_t> out((size_t) m.frames);
    for (int32_t t = 0; t < m.frames; ++t) {
        out[(size_t) t] = quantize_frame(m.row(t));
    }
    return out;
}

feature_matrix speech_codec::decode(const std::vector<int32_t> & indices) const {
    auto out = feature_matrix::zeros((int32_t) indices.size(), channels, frame_rate);
    for (size_t t = 0; t < indices.size(); ++t) {
        const int32_t k = indices[t];
        check(k >= 0 && k < codebook_size, ECHAT_ERR_DOMAIN,
              "codebook index out of range: " + std::to_string(k));
        std::memcpy(out.row((int32_t) t), centroid(k), (size_t) channels * sizeof(float));
    }
    const int32_t w = smoothing_width;
    if (w > 1 && out.frames > 1) {
        check(w % 2 == 1, ECHAT_ERR_INVALID_CONFIG, "smoothing_width must be odd");
        const int32_t half = w / 2;
        feature_matrix sm  = out;
        for (int32_t t = 0; t < out.frames; ++t) {
            const int32_t lo = std::max(0, t - half);
            const int32_t hi = std::min(out.frames - 1, t + half);
            for (int32_t c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (int32_t u = lo; u <= hi; ++u) {
                    acc += out.at(u, c);
                }
                sm.at(t, c) = (float) (acc / (hi - lo + 1));
            }
        }
        return sm;
    }
    return out;
}

uint64_t speech_codec::content_hash() const {
    fnv1a h;
    h.update_pod(codebook_size);
    h.update_pod(channels);
    h.update_pod(frame_rate);
    h.update_pod(smoothing_width);
    h.update(centroids.data(), centroids.size() * sizeof(float));
    return h.digest();
}

// ---------------------------------------------------------------------------

speech_codec fit_codec(const std::vector<const feature_matrix *> & data,
                       const codec_config & cfg,
                       codec_fit_stats * stats) {
    check(cfg.codebook_size >= 1, ECHAT_ERR_INVALID_CONFIG, "codebook_size must be >= 1");
    check(cfg.max_iterations >= 1, ECHAT_ERR_INVALID_CONFIG, "max_iterations must be >= 1");
    check(cfg.smoothing_width >= 1 && cfg.smoothing_width % 2 == 1, ECHAT_ERR_INVALID_CONFIG,
          "smoothing_width must be a positive odd number");
    check(!data.empty(), ECHAT_ERR_INVALID_ARGUMENT, "fit_codec: no input features");

    const int32_t C    = data[0]->channels;
    const float   rate = data[0]->frame_rate;
    size_t total = 0;
    for (const auto * m : data) {
        check(m->channels == C, ECHAT_ERR_DOMAIN, "fit_codec: inconsistent channel counts");
        total += (size_t) m->frames;
    }
    check(total > 0, ECHAT_ERR_INVALID_ARGUMENT, "fit_codec: input has zero frames");

    // gather (subsampled) frames in deterministic order
    rng r = rng::derive(cfg.seed, "codec-fit");
    std::vector<float> frames;
    int32_t            n = 0;
    if ((int64_t) total <= cfg.max_fit_frames) {
        frames.reserve(total * (size_t) C);
        for (const auto * m : data) {
            frames.insert(frames.end(), m->data.begin(), m->data.end());
        }
        n = (int32_t) total;
    } else {
        // seeded sample without replacement over the concatenated frame index
        std::vector<size_t> idx(total);
        for (size_t i = 0; i < total; ++i) {
            idx[i] = i;
        }
        r.shuffle(idx);
        idx.resize((size_t) cfg.max_fit_frames);
        std::sort(idx.begin(), idx.end());
        std::vector<std::pair<size_t, const feature_matrix *>> spans; // start -> matrix
        size_t start = 0;
        for (const auto * m : data) {
            spans.emplace_back(start, m);
            start += (size_t) m->frames;
        }
        frames.reserve(idx.size() * (size_t) C);
        size_t si = 0;
        for (size_t i : idx) {
            while (si + 1 < spans.size() && spans[si + 1].first <= i) {
                ++si;
            }
            const auto * m = spans[si].second;
            const auto   t = (int32_t) (i - spans[si].first);
            frames.insert(frames.end(), m->row(t), m->row(t) + C);
        }
        n = cfg.max_fit_frames;
    }

    auto frame = [&](int32_t i) { return frames.data() + (size_t) i * C; };

    // distinct-frame precheck so every codebook entry can claim a distinct point
    {
        std::set<std::vector<float>> distinct;
        for (int32_t i = 0; i < n && (int32_t) distinct.size() < cfg.codebook_size; ++i) {
            distinct.emplace(frame(i), frame(i) + C);
        }
        check((int32_t) distinct.size() >= cfg.codebook_size, ECHAT_ERR_INVALID_CONFIG,
              "codebook_size " + std::to_string(cfg.codebook_size) +
              " exceeds the number of distinct input frames");
    }

    const int32_t K = cfg.codebook_size;
    speech_codec  c;
    c.codebook_size   = K;
    c.channels        = C;
    c.frame_rate      = rate;
    c.smoothing_width = cfg.smoothing_width;
    c.centroids.assign((size_t) K * C, 0.0f);

    // k-means++ seeding
    std::vector<double> d2((size_t) n, 0.0);
    {
        const int32_t first = (int32_t) r.uniform_int((uint64_t) n);
        std::memcpy(c.centroids.data(), frame(first), (size_t) C * sizeof(float));
        for (int32_t i = 0; i < n; ++i) {
            d2[(size_t) i] = frame_dist2(frame(i), c.centroid(0), C);
        }
        for (int32_t k = 1; k < K; ++k) {
            double sum = 0.0;
            for (int32_t i = 0; i < n; ++i) {
                sum += d2[(size_t) i];
            }
            int32_t pick = -1;
            if (sum <= 0.0) {
                pick = (int32_t) r.uniform_int((uint64_t) n);
            } else {
                const double target = r.uniform() * sum;
                double acc = 0.0;
                for (int32_t i = 0; i < n; ++i) {
                    acc += d2[(size_t) i];
                    if (acc >= target) {
                        pick = i;
                        break;
                    }
                }
                if (pick < 0) {
                    pick = n - 1;
                }
            }
            std::memcpy(c.centroids.data() + (size_t) k * C, frame(pick), (size_t) C * sizeof(float));
            for (int32_t i = 0; i < n; ++i) {
                const double d = frame_dist2(frame(i), c.centroid(k), C);
                if (d < d2[(size_t) i]) {
                    d2[(size_t) i] = d;
                }
            }
        }
    }

    // Lloyd iterations
    std::vector<int32_t> assign((size_t) n, 0);
    std::vector<double>  sums((size_t) K * C);
    std::vector<int64_t> counts((size_t) K);
    codec_fit_stats      local_stats;
    codec_fit_stats &    st = stats ? *stats : local_stats;
    st.frames_used = n;

    for (int32_t it = 0; it < cfg.max_iterations; ++it) {
        double inertia = 0.0;
        bool   moved   = false;
        for (int32_t i = 0; i < n; ++i) {
            const int32_t k = c.quantize_frame(frame(i));
            if (k != assign[(size_t) i]) {
                moved = true;
            }
            assign[(size_t) i] = k;
            inertia += frame_dist2(frame(i), c.centroid(k), C);
        }
        if (!st.inertia.empty()) {
            // Lloyd error is non-increasing; a rise means a bug
            check(inertia <= st.inertia.back() + 1e-6 * (1.0 + st.inertia.back()),
                  ECHAT_ERR_INTERNAL, "codec fit error increased between iterations");
        }
        st.inertia.push_back(inertia);
        st.iterations = it + 1;
        if (it > 0 && !moved) {
            break;
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int32_t i = 0; i < n; ++i) {
            const int32_t k = assign[(size_t) i];
            counts[(size_t) k]++;
            const float * f = frame(i);
            double * s = sums.data() + (size_t) k * C;
            for (int32_t j = 0; j < C; ++j) {
                s[j] += f[j];
            }
        }
        for (int32_t k = 0; k < K; ++k) {
            if (counts[(size_t) k] == 0) {
                continue; // empty cluster keeps its centroid
            }
            float * cent = c.centroids.data() + (size_t) k * C;
            const double * s = sums.data() + (size_t) k * C;
            for (int32_t j = 0; j < C; ++j) {
                cent[j] = (float) (s[j] / (double) counts[(size_t) k]);
            }
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// container: magic line + json header line + little-endian f32 payload

static constexpr const char * CODEC_MAGIC = "echat-codec 1";

void write_codec(const std::string & path, const speech_codec & c) {
    json hdr;
    hdr["codebook_size"]   = c.codebook_size;
    hdr["channels"]        = c.channels;
    hdr["frame_rate"]      = c.frame_rate;
    hdr["smoothing_width"] = c.smoothing_width;
    hdr["payload_hash"]    = hash_hex(hash_bytes(c.centroids.data(),
                                                 c.centroids.size() * sizeof(float)));
    std::string out = std::string(CODEC_MAGIC) + "\n" + hdr.dump() + "\n";
    const size_t text_len = out.size();
    out.resize(text_len + c.centroids.size() * sizeof(float));
    std::memcpy(out.data() + text_len, c.centroids.data(), c.centroids.size() * sizeof(float));
    write_binary_file(path, out.data(), out.size());
}

speech_codec read_codec(const std::string & path) {
    const auto raw = read_binary_file(path);
    const std::string_view sv(reinterpret_cast<const char *>(raw.data()), raw.size());
    const size_t nl1 = sv.find('\n');
    if (nl1 == std::string_view::npos || sv.substr(0, nl1) != CODEC_MAGIC) {
        fail(ECHAT_ERR_FORMAT, path + ": not a codec file");
    }
    const size_t nl2 = sv.find('\n', nl1 + 1);
    if (nl2 == std::string_view::npos) {
        fail(ECHAT_ERR_FORMAT, path + ": truncated codec header");
    }
    json hdr;
    try {
        hdr = json::parse(sv.substr(nl1 + 1, nl2 - nl1 - 1));
    } catch (const std::exception & e) {
        fail(ECHAT_ERR_FORMAT, path + ": bad codec header: " + e.what());
    }

    speech_codec c;
    try {
        c.codebook_size   = hdr.at("codebook_size").get<int32_t>();
        c.channels        = hdr.at("channels").get<int32_t>();
        c.frame_rate      = hdr.at("frame_rate").get<float>();
        c.smoothing_width = hdr.at("smoothing_width").get<int32_t>();
    } catch (const std::exception & e) {
        fail(ECHAT_ERR_FORMAT, path + ": incomplete codec header: " + e.what());
    }
    if (c.codebook_size < 1 || c.channels < 1) {
        fail(ECHAT_ERR_FORMAT, path + ": invalid codec shape");
    }

    const size_t want = (size_t) c.codebook_size * c.channels * sizeof(float);
    if (raw.size() - (nl2 + 1) != want) {
        fail(ECHAT_ERR_FORMAT, path + ": codec payload size mismatch");
    }
    c.centroids.resize((size_t) c.codebook_size * c.channels);
    std::memcpy(c.centroids.data(), raw.data() + nl2 + 1, want);

    const std::string have = hash_hex(hash_bytes(c.centroids.data(), want));
    if (hdr.at("payload_hash").get<std::string>() != have) {
        fail(ECHAT_ERR_FORMAT, path + ": codec payload hash mismatch");
    }
    return c;
}

} // namespace echat
