#include "echat-vocab.h"

#include "echat-common.h"

namespace echat {

int32_t vocab_layout::speech_token(int32_t k) const {
    check(k >= 0 && k < speech_vocab_size, ECHAT_ERR_DOMAIN,
          "speech codebook index out of range: " + std::to_string(k));
    return text_vocab_size + k;
}

int32_t vocab_layout::speech_index(int32_t id) const {
    check(is_speech(id), ECHAT_ERR_DOMAIN,
          "token id is not a speech token: " + std::to_string(id));
    return id - text_vocab_size;
}

vocab_layout build_vocab_layout(int32_t text_vocab_size, int32_t speech_vocab_size) {
    check(text_vocab_size >= 1, ECHAT_ERR_INVALID_CONFIG,
          "text_vocab_size must be >= 1, got " + std::to_string(text_vocab_size));
    check(speech_vocab_size >= 1, ECHAT_ERR_INVALID_CONFIG,
          "speech_vocab_size must be >= 1, got " + std::to_string(speech_vocab_size));

    vocab_layout v;
    v.text_vocab_size   = text_vocab_size;
    v.speech_vocab_size = speech_vocab_size;

    int32_t next = text_vocab_size + speech_vocab_size;
    v.eot             = next++;
    v.speech_boundary = next++;
    v.think_open      = next++;
    v.think_close     = next++;
    v.pad             = next++;
    v.unk_label       = next++;
    v.total_size      = next;

    return v;
}

const char * token_kind_name(token_kind k) {
    switch (k) {
        case token_kind::text:            return "text";
        case token_kind::speech:          return "speech";
        case token_kind::eot:             return "eot";
        case token_kind::speech_boundary: return "speech_boundary";
        case token_kind::think_open:      return "think_open";
        case token_kind::think_close:     return "think_close";
        case token_kind::pad:             return "pad";
        case token_kind::unk_label:       return "unk_label";
    }
    return "?";
}

token_kind classify_token(const vocab_layout & v, int32_t id) {
    check(id >= 0 && id < v.total_size, ECHAT_ERR_DOMAIN,
          "token id out of range: " + std::to_string(id) +
          " (vocabulary size " + std::to_string(v.total_size) + ")");
    if (id < v.text_vocab_size) {
        return token_kind::text;
    }
    if (id < v.text_vocab_size + v.speech_vocab_size) {
        return token_kind::speech;
    }
    if (id == v.eot) {
        return token_kind::eot;
    }
    if (id == v.speech_boundary) {
        return token_kind::speech_boundary;
    }
    if (id == v.think_open) {
        return token_kind::think_open;
    }
    if (id == v.think_close) {
        return token_kind::think_close;
    }
    if (id == v.pad) {
        return token_kind::pad;
    }
    return token_kind::unk_label;
}

// ---------------------------------------------------------------------------
// mux / demux

static void validate_pattern(const interleave_pattern & pat) {
    check(pat.text_chunk >= 1 && pat.speech_chunk >= 1, ECHAT_ERR_INVALID_CONFIG,
          "interleave pattern chunks must be >= 1");
}

std::vector<int32_t> mux_interleaved(std::span<const int32_t> text,
                                     std::span<const int32_t> speech,
                                     const vocab_layout & v,
                                     const interleave_pattern & pat) {
    validate_pattern(pat);
    check(!text.empty(), ECHAT_ERR_PROTOCOL, "text stream is empty (must end with eot)");
    check(text.back() == v.eot, ECHAT_ERR_PROTOCOL, "text stream must end with eot");
    for (size_t i = 0; i + 1 < text.size(); ++i) {
        if (!v.is_text(text[i])) {
            fail(ECHAT_ERR_PROTOCOL,
                 "text stream position " + std::to_string(i + 1) + " is not a text symbol",
                 (long long) i + 1);
        }
    }
    for (size_t j = 0; j < speech.size(); ++j) {
        if (!v.is_speech(speech[j])) {
            fail(ECHAT_ERR_PROTOCOL,
                 "speech stream position " + std::to_string(j + 1) + " is not a speech token",
                 (long long) j + 1);
        }
    }

    // every pre-eot speech chunk must be full, so the cadence is rigid and the
    // demuxer can reject a misplaced token at its exact position
    const size_t chunks_before_eot = (text.size() - 1) / (size_t) pat.text_chunk;
    const size_t speech_needed     = chunks_before_eot * (size_t) pat.speech_chunk;
    check(speech.size() >= speech_needed, ECHAT_ERR_PROTOCOL,
          "speech stream too short for the interleave cadence: need at least " +
          std::to_string(speech_needed) + " tokens, have " + std::to_string(speech.size()));

    std::vector<int32_t> out;
    out.reserve(text.size() + speech.size() + 1);

    size_t i = 0; // text cursor
    size_t j = 0; // speech cursor
    while (i < text.size()) {
        // text slots; eot occupies one and ends the cadence
        for (int32_t k = 0; k < pat.text_chunk && i < text.size(); ++k) {
            out.push_back(text[i++]);
        }
        if (i == text.size()) {
            break; // eot emitted: remaining speech is contiguous
        }
        for (int32_t k = 0; k < pat.speech_chunk; ++k) {
            out.push_back(speech[j++]);
        }
    }
    while (j < speech.size()) {
        out.push_back(speech[j++]);
    }
    out.push_back(v.speech_boundary);
    return out;
}

demux_result demux_interleaved(std::span<const int32_t> seq,
                               const vocab_layout & v,
                               const interleave_pattern & pat,
                               bool tolerant_pad) {
    validate_pattern(pat);

    enum class st {
        text_phase,   // inside a text chunk
        speech_phase, // inside a speech chunk (must fill completely)
        post_eot,     // text done: contiguous speech until boundary
        done,
    };

    demux_result res;
    st      state   = st::text_phase;
    int32_t in_text = 0, in_speech = 0;

    auto bad = [&](size_t pos0, const std::string & what) {
        fail(ECHAT_ERR_PROTOCOL,
             what + " at position " + std::to_string(pos0 + 1), (long long) pos0 + 1);
    };

    for (size_t p = 0; p < seq.size(); ++p) {
        const int32_t id = seq[p];
        if (id < 0 || id >= v.total_size) {
            bad(p, "token id " + std::to_string(id) + " out of range");
        }
        const token_kind kind = classify_token(v, id);
        if (kind == token_kind::pad) {
            if (tolerant_pad) {
                continue;
            }
            bad(p, "pad token in interleaved stream");
        }

        switch (state) {
            case st::text_phase:
                if (kind == token_kind::text) {
                    res.text.push_back(id);
                    if (++in_text == pat.text_chunk) {
                        in_text   = 0;
                        in_speech = 0;
                        state     = st::speech_phase;
                    }
                } else if (kind == token_kind::eot) {
                    res.text.push_back(id);
                    state = st::post_eot;
                } else {
                    bad(p, std::string("expected text symbol or eot in text slot, found ") +
                            token_kind_name(kind));
                }
                break;
            case st::speech_phase:
                if (kind != token_kind::speech) {
                    bad(p, std::string("expected speech token in speech slot, found ") +
                            token_kind_name(kind));
                }
                res.speech.push_back(id);
                if (++in_speech == pat.speech_chunk) {
                    in_text = 0;
                    state   = st::text_phase;
                }
                break;
            case st::post_eot:
                if (kind == token_kind::speech) {
                    res.speech.push_back(id);
                } else if (kind == token_kind::speech_boundary) {
                    state = st::done;
                } else {
                    bad(p, std::string("expected speech token or speech_boundary, found ") +
                            token_kind_name(kind));
                }
                break;
            case st::done:
                bad(p, "token after speech_boundary");
        }
    }

    if (state != st::done) {
        const char * missing = (state == st::post_eot) ? "speech_boundary" : "eot";
        fail(ECHAT_ERR_PROTOCOL,
             std::string("truncated interleaved stream: missing ") + missing +
                 " (stream length " + std::to_string(seq.size()) + ")",
             (long long) seq.size() + 1);
    }
    return res;
}

// ---------------------------------------------------------------------------
// reasoning span

static int32_t label_slot_token(const think_span & span, cue_field f, const vocab_layout & v) {
    switch (f) {
        case cue_field::emotion:
            return span.labels.emotion ? sym::of_emotion(*span.labels.emotion) : v.unk_label;
        case cue_field::gender:
            return span.labels.gender ? sym::of_gender(*span.labels.gender) : v.unk_label;
        case cue_field::age:
            return span.labels.age ? sym::of_age(*span.labels.age) : v.unk_label;
        case cue_field::event:
            return span.labels.event ? sym::of_event(*span.labels.event) : v.unk_label;
    }
    fail(ECHAT_ERR_INTERNAL, "bad cue field");
}

std::vector<int32_t> format_think(const think_span & span, const vocab_layout & v) {
    check(v.text_vocab_size >= sym::count, ECHAT_ERR_INVALID_CONFIG,
          "text vocabulary too small for the symbol alphabet");
    for (int32_t s : span.transcript) {
        check(sym::is_content(s), ECHAT_ERR_DOMAIN,
              "reasoning transcript may contain content symbols only, got id " + std::to_string(s));
    }
    std::vector<int32_t> out;
    out.reserve(span.transcript.size() + 6);
    out.push_back(v.think_open);
    out.insert(out.end(), span.transcript.begin(), span.transcript.end());
    for (int32_t f = 0; f < CUE_FIELD_COUNT; ++f) {
        out.push_back(label_slot_token(span, (cue_field) f, v));
    }
    out.push_back(v.think_close);
    return out;
}

think_parse parse_think(std::span<const int32_t> seq, const vocab_layout & v) {
    check(!seq.empty(), ECHAT_ERR_PARSE, "empty sequence where a reasoning span was expected");
    if (seq[0] != v.think_open) {
        fail(ECHAT_ERR_PARSE, "reasoning span must start with think_open", 1);
    }
    size_t close = 0;
    for (size_t i = 1; i < seq.size(); ++i) {
        if (seq[i] == v.think_close) {
            close = i;
            break;
        }
    }
    if (close == 0) {
        fail(ECHAT_ERR_UNTERMINATED, "reasoning span never closed (no think_close)");
    }
    const size_t inner = close - 1;
    if (inner < CUE_FIELD_COUNT) {
        fail(ECHAT_ERR_PARSE,
             "reasoning span too short: needs " + std::to_string(CUE_FIELD_COUNT) +
             " label slots, has " + std::to_string(inner) + " tokens");
    }

    think_parse out;
    out.consumed = close + 1;

    const size_t label_first = close - CUE_FIELD_COUNT;
    for (size_t i = 1; i < label_first; ++i) {
        if (!sym::is_content(seq[i])) {
            fail(ECHAT_ERR_PARSE,
                 "reasoning transcript position " + std::to_string(i + 1) +
                 " is not a content symbol", (long long) i + 1);
        }
        out.span.transcript.push_back(seq[i]);
    }
    for (int32_t f = 0; f < CUE_FIELD_COUNT; ++f) {
        const size_t  pos = label_first + (size_t) f;
        const int32_t id  = seq[pos];
        if (id == v.unk_label) {
            continue;
        }
        const auto field = (cue_field) f;
        if (!sym::is_label_of(field, id)) {
            fail(ECHAT_ERR_PARSE,
                 std::string("label slot ") + cue_field_name(field) +
                 " holds an out-of-family token at position " + std::to_string(pos + 1),
                 (long long) pos + 1);
        }
        const int32_t value = sym::label_value(field, id);
        switch (field) {
            case cue_field::emotion: out.span.labels.emotion = (emotion_kind) value; break;
            case cue_field::gender:  out.span.labels.gender  = (gender_kind) value;  break;
            case cue_field::age:     out.span.labels.age     = (age_kind) value;     break;
            case cue_field::event:   out.span.labels.event   = (event_kind) value;   break;
        }
    }
    return out;
}

} // namespace echat
