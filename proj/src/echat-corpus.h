#pragma once

// synthetic spoken-dialogue corpus with planted paralinguistic ground truth.
//
// audio surrogate: each text symbol renders to a fixed number of feature
// frames from a seeded per-symbol template (channels 0..39); speaker state is
// an additive band code (emotion 40..46 one-hot, gender 50..51, age 55..57);
// a vocal event inserts a loud signature segment at a seeded symbol boundary;
// channels 60..79 carry low-amplitude noise.  amplitudes are tiered
// (noise < symbol < cue < event) so the planted state survives quantization.

#include "echat-codec.h"
#include "echat-features.h"
#include "echat-symbols.h"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace echat {

struct corpus_config {
    uint64_t seed = 1;

    // audio surrogate geometry
    int32_t channels          = 80;
    float   frame_rate        = 100.0f;
    int32_t frames_per_symbol = 4;
    int32_t event_frames      = 8;
    float   symbol_amp        = 0.5f;
    float   cue_amp           = 6.0f;
    float   event_amp         = 9.0f;
    float   noise_amp         = 0.1f;

    // text structure
    int32_t scenario_count  = 8; // scenario s is identified by prefix (2s, 2s+1)
    int32_t filler_min      = 4;
    int32_t filler_max      = 8;

    // split sizes
    int32_t n_understanding = 3000; // single-label spoken queries
    int32_t n_tts           = 800;
    int32_t n_t2t           = 800;
    int32_t n_s2s           = 600;  // plain dialogue, no supervised cues
    int32_t n_empathy       = 1200;

    // label composition
    float emotion_share      = 0.5f;  // of single-label samples (rest split evenly)
    float multi_share        = 0.4f;  // of empathy samples carrying all four labels
    float event_present_rate = 0.35f; // unsupervised event is non-none this often
};

struct benchmark_config {
    uint64_t seed             = 2;
    int32_t  entries_per_task = 280;
    // every task reserves floor(entries/3) "studio-free" entries drawn from a
    // filler family never used by the training corpus
};

// which evaluation task an entry belongs to (report column order)
enum class eval_task : int32_t { emotion, age, gender, event, multi };
constexpr int32_t EVAL_TASK_COUNT = 5;
const char *             eval_task_name(eval_task t);
std::optional<eval_task> eval_task_from_name(std::string_view s);

enum class sample_task : int32_t { understanding, tts, t2t, s2s_plain, empathy };
const char * sample_task_name(sample_task t);

struct dialogue_sample {
    sample_task tag      = sample_task::understanding;
    int32_t     scenario = -1;
    uint64_t    seed     = 0;

    std::vector<int32_t> query_symbols;              // content symbols
    bool                 has_audio = true;           // false for tts / t2t
    cue_spec             cues;                       // planted state (audio samples)
    cue_labels           labels;                     // supervised view of cues

    std::vector<int32_t> response_symbols;           // text reply, no eot
    emotion_kind         response_emotion = emotion_kind::neutral;
    std::vector<int32_t> response_speech;            // codec indices; empty for text-only replies

    std::string feature_file;                        // corpus-relative base path, "" if none
};

struct benchmark_entry {
    eval_task task     = eval_task::emotion;
    int32_t   index    = 0;
    int32_t   scenario = -1;
    uint64_t  seed     = 0;

    std::vector<int32_t> query_symbols;
    cue_spec             cues;
    cue_labels           supervised;     // the fields this entry grades
    bool                 real_surrogate = false;

    std::string feature_file;
};

// ---------------------------------------------------------------------------
// generator

struct corpus_generator {
    corpus_config cfg;

    explicit corpus_generator(const corpus_config & cfg_);

    // deterministic audio surrogate for a symbol sequence + speaker state
    feature_matrix render_features(const std::vector<int32_t> & symbols,
                                   const cue_spec & cues,
                                   uint64_t sample_seed) const;

    // recover the planted state from features (nearest band pattern, ties to
    // the lowest taxonomy index; the all-zero matrix reads as
    // neutral/male/child/none)
    cue_spec decode_cues(const feature_matrix & m) const;

    // deterministic reply text for a query given its supervised labels
    std::vector<int32_t> generate_response(int32_t scenario, const cue_labels & labels) const;

    // scenario response/tts voice: mapped response emotion, fixed speaker
    cue_spec response_voice(emotion_kind response_emotion) const;

    // in-memory sample plans (no feature rendering, no speech tokens yet)
    std::vector<dialogue_sample> plan_corpus() const;
    std::vector<benchmark_entry> plan_benchmark(const benchmark_config & bc) const;

    // filler families: training corpus draws from one half, benchmark
    // "studio-free" entries from the held-out half
    std::vector<int32_t> filler_alphabet(bool held_out) const;

    int32_t symbol_frame_count(size_t n_symbols, bool with_event) const;
};

// ---------------------------------------------------------------------------
// on-disk corpus
//
// layout:  dir/manifest.json
//          dir/<split>/samples.jsonl
//          dir/<split>/feat/q<index>.f32 + .hdr
// the manifest echoes the config and carries per-split sample hash lists plus
// a corpus-level content hash; rebuilding with the same config reproduces the
// hash bit for bit.

struct corpus_build_result {
    std::string  manifest_path;
    uint64_t     content_hash = 0;
    int32_t      sample_count = 0;
    speech_codec codec;
};

// generate + render + fit codec + tokenize responses + write everything
corpus_build_result build_corpus(const std::string & dir,
                                 const corpus_config & cfg,
                                 const codec_config & ccfg);

struct benchmark_build_result {
    std::string manifest_path;
    uint64_t    content_hash = 0;
    int32_t     entry_count  = 0;
};

// benchmark generation refuses seeds colliding with the corpus seed and
// audits feature-hash disjointness against the training manifest
benchmark_build_result build_benchmark(const std::string & dir,
                                       const benchmark_config & bc,
                                       const corpus_config & corpus_cfg,
                                       const std::string & corpus_manifest_path);

// loaded views
struct corpus_data {
    corpus_config                cfg;
    std::vector<dialogue_sample> samples; // all splits, tagged
    std::string                  dir;
    uint64_t                     content_hash = 0;

    std::vector<const dialogue_sample *> split(sample_task t) const;
    feature_matrix load_features(const dialogue_sample & s) const;
};

struct benchmark_data {
    std::vector<benchmark_entry> entries;
    std::string                  dir;
    uint64_t                     content_hash = 0;

    feature_matrix load_features(const benchmark_entry & e) const;
};

corpus_data    load_corpus(const std::string & dir);
benchmark_data load_benchmark(const std::string & dir);

} // namespace echat
