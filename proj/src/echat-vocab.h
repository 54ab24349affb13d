#pragma once

// extended token vocabulary: text symbols, discrete speech tokens, control
// tokens; plus the interleaved text/speech wire protocol and the reasoning
// span format used by the think-before-speak dialogue mode.

#include "echat-symbols.h"

#include <cstdint>
#include <span>
#include <vector>

namespace echat {

// ---------------------------------------------------------------------------
// layout
//
// id space, contiguous:
//   [0, text)                 text symbols
//   [text, text+speech)       speech tokens (codec codebook entries)
//   then 6 control tokens in fixed order:
//   eot, speech_boundary, think_open, think_close, pad, unk_label

struct vocab_layout {
    int32_t text_vocab_size   = 0;
    int32_t speech_vocab_size = 0;

    int32_t eot             = -1; // end of text stream
    int32_t speech_boundary = -1; // end of speech stream
    int32_t think_open      = -1;
    int32_t think_close     = -1;
    int32_t pad             = -1;
    int32_t unk_label       = -1; // unknown paralinguistic label placeholder

    int32_t total_size = 0;

    static constexpr int32_t CONTROL_COUNT = 6;

    int32_t speech_first() const { return text_vocab_size; }
    int32_t speech_token(int32_t k) const;   // codebook index -> token id
    int32_t speech_index(int32_t id) const;  // token id -> codebook index

    bool is_text(int32_t id) const { return id >= 0 && id < text_vocab_size; }
    bool is_speech(int32_t id) const {
        return id >= text_vocab_size && id < text_vocab_size + speech_vocab_size;
    }
};

// text_vocab_size >= 1, speech_vocab_size >= 1; throws invalid_config otherwise
vocab_layout build_vocab_layout(int32_t text_vocab_size, int32_t speech_vocab_size);

enum class token_kind : int32_t {
    text, speech, eot, speech_boundary, think_open, think_close, pad, unk_label,
};
const char * token_kind_name(token_kind k);

// total classification over [0, total_size); domain error outside
token_kind classify_token(const vocab_layout & v, int32_t id);

// ---------------------------------------------------------------------------
// interleaved text/speech protocol
//
// fixed cadence: text_chunk text slots, then speech_chunk speech tokens,
// repeating.  eot occupies a text slot; once the text stream is exhausted the
// remaining speech tokens follow contiguously, closed by speech_boundary.

struct interleave_pattern {
    int32_t text_chunk   = 6;
    int32_t speech_chunk = 18;
};

// text must end with exactly one eot (no other controls); speech must be all
// speech tokens.  result = mux per the cadence + trailing speech_boundary.
std::vector<int32_t> mux_interleaved(std::span<const int32_t> text,
                                     std::span<const int32_t> speech,
                                     const vocab_layout & v,
                                     const interleave_pattern & pat);

struct demux_result {
    std::vector<int32_t> text;   // includes the eot
    std::vector<int32_t> speech; // excludes the speech_boundary
};

// strict inverse of mux_interleaved: validates the cadence token by token and
// throws protocol_error with the 1-based offending position.  tolerant_pad
// additionally accepts (and drops) pad tokens anywhere.
demux_result demux_interleaved(std::span<const int32_t> seq,
                               const vocab_layout & v,
                               const interleave_pattern & pat,
                               bool tolerant_pad = false);

// ---------------------------------------------------------------------------
// reasoning span
//
// serialized form:
//   think_open, transcript... (content symbols), E, G, A, V, think_close
// where E/G/A/V are label symbols in cue_field order, or unk_label for an
// unknown field.

struct think_span {
    std::vector<int32_t> transcript; // content symbols only
    cue_labels           labels;

    bool operator==(const think_span &) const = default;
};

std::vector<int32_t> format_think(const think_span & span, const vocab_layout & v);

struct think_parse {
    think_span span;
    size_t     consumed; // tokens consumed from the front (incl. think_close)
};

// seq must start with think_open; parse_error / unterminated_span otherwise.
think_parse parse_think(std::span<const int32_t> seq, const vocab_layout & v);

} // namespace echat
