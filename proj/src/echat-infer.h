#pragma once

// prompt construction, constrained autoregressive generation (non-streaming
// and streaming), reasoning-span handling, and response assembly.
//
// generation is grammar-constrained: at every position the sampler sees only
// the token kinds the active layout allows (think-span slots, text vs speech
// phases, the 6:18 streaming cadence), so emitted streams always validate.
// the model decides content and boundaries inside those kinds.

#include "echat-codec.h"
#include "echat-corpus.h"
#include "echat-model.h"
#include "echat-vocab.h"

#include <condition_variable>
#include <mutex>
#include <optional>
#include <thread>

namespace echat {

// ---------------------------------------------------------------------------
// prompt template
//
//   im_start system nl TASK im_end nl
//   im_start user nl [mode-word] payload... im_end nl
//   im_start assistant nl
//
// payload is either text symbols or `speech_rows` continuous slots (-1)
// filled from the adapter output.  understanding prompts carry a mode word.

struct prompt_spec {
    task_kind                      task = task_kind::s2s;
    std::vector<int32_t>           text_payload;       // t2t / tts input
    int32_t                        speech_rows = 0;    // audio payload slots
    std::optional<understand_mode> umode;              // understand task only
};

// tokens of the full prefix; -1 marks a soft (speech embedding) slot
std::vector<int32_t> format_prompt_tokens(const prompt_spec & spec, const vocab_layout & v);

// ---------------------------------------------------------------------------
// generation

enum class sampling_kind : int32_t { greedy, top_k, temperature };

struct generation_config {
    bool streaming = false;  // must match the task kind
    bool think     = false;  // must match the task kind

    int32_t max_text_tokens   = 64;
    int32_t max_speech_tokens = 320;

    sampling_kind sampling    = sampling_kind::greedy;
    int32_t       top_k       = 8;
    double        temperature = 1.0;
    uint64_t      seed        = 1;
};

enum class stop_reason : int32_t {
    speech_boundary,  // dialogue / tts output closed normally
    eot,              // text-only output closed normally
    label_complete,   // understanding grammar emitted all label slots
    limit,            // token or capacity limit hit; result is truncated
    cancelled,        // stream consumer cancelled mid-generation
    protocol_violation,  // unreachable under constrained decoding; kept for
                         // layout validators on externally produced streams
};
const char * stop_reason_name(stop_reason r);

struct generation_result {
    std::optional<think_span> think;
    std::vector<int32_t>      text;    // text token ids, incl. eot when emitted
    std::vector<int32_t>      speech;  // speech token ids, excl. the boundary
    stop_reason               stop = stop_reason::limit;
    std::vector<int32_t>      raw;     // every emitted token, in order
};

// audio is required for speech-payload tasks and must be null for text ones
generation_result generate(const model & m,
                           const feature_matrix * audio,
                           const prompt_spec & spec,
                           const generation_config & cfg);

// text symbols (eot stripped) + synthesized feature frames
struct assembled_response {
    std::vector<int32_t> text_symbols;
    feature_matrix       features;
};
assembled_response assemble_response(const generation_result & r,
                                     const speech_codec & codec,
                                     const vocab_layout & v);

// ---------------------------------------------------------------------------
// streaming event interface
//
// a producer thread generates while the consumer pulls typed events from a
// bounded queue (back-pressure: the producer blocks when the queue is full).
// concatenating the event payloads reconstructs generate()'s output exactly.

enum class gen_event_kind : int32_t { think_delta, text_chunk, speech_chunk, stop };

struct gen_event {
    gen_event_kind       kind = gen_event_kind::stop;
    std::vector<int32_t> tokens;
    stop_reason          reason = stop_reason::limit;  // stop events only
};

class stream_session {
public:
    // streaming-mode generation only (cfg.streaming must be true)
    stream_session(const model & m,
                   const feature_matrix * audio,
                   const prompt_spec & spec,
                   const generation_config & cfg,
                   size_t queue_capacity = 8);
    ~stream_session();

    stream_session(const stream_session &) = delete;
    stream_session & operator=(const stream_session &) = delete;

    // blocks for the next event; false once the terminal stop event has been
    // delivered (or the session was cancelled and drained)
    bool next(gen_event & out);

    // consumer-side cancellation; generation halts at the next token
    void cancel();

    // final (possibly partial) result; valid after next() returned false
    const generation_result & result() const { return res_; }

private:
    void push(gen_event && ev);  // producer; drops when cancelled

    const model &         m_;
    const feature_matrix * audio_;
    prompt_spec           spec_;
    generation_config     cfg_;

    std::mutex              mu_;
    std::condition_variable cv_;
    std::vector<gen_event>  queue_;
    size_t                  cap_;
    bool                    done_      = false;
    bool                    cancelled_ = false;

    generation_result res_;
    std::thread       worker_;

    friend struct stream_driver;
};

} // namespace echat
