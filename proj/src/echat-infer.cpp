#include "echat-infer.h"

#include "echat-common.h"

#include <algorithm>
#include <cmath>

namespace echat {

// ---------------------------------------------------------------------------
// prompt template

static bool task_takes_audio(task_kind t) {
    switch (t) {
        case task_kind::t2t:
        case task_kind::tts:
            return false;
        default:
            return true;
    }
}

static bool task_thinks(task_kind t) {
    return t == task_kind::s2s_think || t == task_kind::s2s_interleave_think;
}

static bool task_streams(task_kind t) {
    return t == task_kind::s2s_interleave || t == task_kind::s2s_interleave_think;
}

std::vector<int32_t> format_prompt_tokens(const prompt_spec & spec, const vocab_layout & v) {
    const bool audio = task_takes_audio(spec.task);
    if (audio) {
        check(spec.speech_rows >= 1, ECHAT_ERR_INVALID_ARGUMENT,
              "prompt: task takes a speech payload but speech_rows < 1");
        check(spec.text_payload.empty(), ECHAT_ERR_INVALID_ARGUMENT,
              "prompt: task takes a speech payload but text_payload is set");
    } else {
        check(spec.speech_rows == 0, ECHAT_ERR_INVALID_ARGUMENT,
              "prompt: task takes a text payload but speech_rows is set");
        check(!spec.text_payload.empty(), ECHAT_ERR_INVALID_ARGUMENT,
              "prompt: task takes a text payload but text_payload is empty");
    }
    if (spec.task == task_kind::understand) {
        check(spec.umode.has_value(), ECHAT_ERR_INVALID_ARGUMENT,
              "prompt: understanding task needs a mode word");
    } else {
        check(!spec.umode.has_value(), ECHAT_ERR_INVALID_ARGUMENT,
              "prompt: mode word is only valid for the understanding task");
    }
    for (int32_t s : spec.text_payload) {
        check(s >= 0 && s < v.text_vocab_size, ECHAT_ERR_INVALID_ARGUMENT,
              "prompt: text payload symbol out of range");
    }

    std::vector<int32_t> out;
    out.reserve(16 + spec.text_payload.size() + (size_t) spec.speech_rows);

    out.push_back(sym::im_start);
    out.push_back(sym::role_system);
    out.push_back(sym::newline);
    out.push_back(sym::of_task(spec.task));
    out.push_back(sym::im_end);
    out.push_back(sym::newline);

    out.push_back(sym::im_start);
    out.push_back(sym::role_user);
    out.push_back(sym::newline);
    if (spec.umode) {
        out.push_back(sym::of_prompt(*spec.umode));
    }
    if (audio) {
        out.insert(out.end(), (size_t) spec.speech_rows, -1);
    } else {
        out.insert(out.end(), spec.text_payload.begin(), spec.text_payload.end());
    }
    out.push_back(sym::im_end);
    out.push_back(sym::newline);

    out.push_back(sym::im_start);
    out.push_back(sym::role_assistant);
    out.push_back(sym::newline);
    return out;
}

const char * stop_reason_name(stop_reason r) {
    switch (r) {
        case stop_reason::speech_boundary:    return "speech_boundary";
        case stop_reason::eot:                return "eot";
        case stop_reason::label_complete:     return "label_complete";
        case stop_reason::limit:              return "limit";
        case stop_reason::cancelled:          return "cancelled";
        case stop_reason::protocol_violation: return "protocol_violation";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// allowed-set builders

static void add_content_syms(std::vector<int32_t> & a) {
    for (int32_t s = 0; s < sym::count; ++s) {
        if (sym::is_content(s)) {
            a.push_back(s);
        }
    }
}

// symbols a response utterance is made of: content words, cue acknowledgement
// words, scenario tag words
static void add_response_text(std::vector<int32_t> & a) {
    add_content_syms(a);
    for (int32_t i = 0; i < 4; ++i) {
        a.push_back(sym::of_ack((cue_field) i));
    }
    for (int32_t i = 0; i < 16; ++i) {
        a.push_back(sym::of_tag(i));
    }
}

static void add_field_labels(cue_field f, std::vector<int32_t> & a, const vocab_layout & v,
                             bool with_unk) {
    for (int32_t s = 0; s < sym::count; ++s) {
        if (sym::is_label_of(f, s)) {
            a.push_back(s);
        }
    }
    if (with_unk) {
        a.push_back(v.unk_label);
    }
}

static void add_speech_tokens(std::vector<int32_t> & a, const vocab_layout & v) {
    for (int32_t k = 0; k < v.speech_vocab_size; ++k) {
        a.push_back(v.speech_token(k));
    }
}

// ---------------------------------------------------------------------------
// sampling over an allowed set

static int32_t sample_token(const nn::mat<float> & logits_row, int64_t row,
                            const std::vector<int32_t> & allowed,
                            const generation_config & cfg, rng & r) {
    check(!allowed.empty(), ECHAT_ERR_STATE, "generation: empty allowed set");

    if (cfg.sampling == sampling_kind::greedy) {
        int32_t best    = allowed[0];
        float   best_lg = logits_row(row, allowed[0]);
        for (int32_t id : allowed) {
            const float lg = logits_row(row, id);
            if (lg > best_lg) {
                best_lg = lg;
                best    = id;
            }
        }
        return best;
    }

    std::vector<int32_t> pool = allowed;
    if (cfg.sampling == sampling_kind::top_k) {
        const size_t k = std::min<size_t>(std::max(1, cfg.top_k), pool.size());
        std::partial_sort(pool.begin(), pool.begin() + (ptrdiff_t) k, pool.end(),
                          [&](int32_t a, int32_t b) {
                              const float la = logits_row(row, a);
                              const float lb = logits_row(row, b);
                              return la != lb ? la > lb : a < b;
                          });
        pool.resize(k);
    }

    const double tau = cfg.sampling == sampling_kind::temperature
                           ? std::max(cfg.temperature, 1e-6)
                           : 1.0;
    double zmax = -1e30;
    for (int32_t id : pool) {
        zmax = std::max(zmax, (double) logits_row(row, id) / tau);
    }
    std::vector<double> w(pool.size());
    double              total = 0.0;
    for (size_t i = 0; i < pool.size(); ++i) {
        w[i] = std::exp((double) logits_row(row, pool[i]) / tau - zmax);
        total += w[i];
    }
    double u   = r.uniform() * total;
    size_t pick = pool.size() - 1;
    for (size_t i = 0; i < pool.size(); ++i) {
        u -= w[i];
        if (u < 0.0) {
            pick = i;
            break;
        }
    }
    return pool[pick];
}

// ---------------------------------------------------------------------------
// generation driver

namespace {

// event sink; null for batch generation
struct gen_sink {
    virtual ~gen_sink() = default;
    virtual void on_think(int32_t tok)                          = 0;
    virtual void on_text_chunk(std::vector<int32_t> && toks)    = 0;
    virtual void on_speech_chunk(std::vector<int32_t> && toks)  = 0;
    virtual void on_stop(stop_reason r)                         = 0;
    virtual bool cancelled() const                              = 0;
};

enum class gen_phase : int32_t {
    think_open, think_body, think_label, think_close,
    u_transcript, u_label,
    text, speech, post_eot,
    done,
};

struct gen_driver {
    const model &             m;
    const vocab_layout &      v;
    const generation_config & cfg;
    const prompt_spec &       spec;
    gen_sink *                sink;

    lm_decode_state<float> st;
    rng                    r;
    generation_result      res;

    gen_phase phase      = gen_phase::done;
    int32_t   label_slot = 0;   // think / understanding label index
    int32_t   text_slot  = 0;   // streaming cadence position
    int32_t   speech_slot = 0;
    int32_t   text_count  = 0;  // emitted text symbols (excl. eot)
    int32_t   think_count = 0;
    int32_t   speech_count = 0;

    std::vector<int32_t> think_raw;   // incl. open/close, for parsing
    std::vector<int32_t> chunk_buf;   // pending stream chunk

    gen_driver(const model & m_, const prompt_spec & spec_, const generation_config & cfg_,
               gen_sink * sink_)
        : m(m_), v(m_.vocab), cfg(cfg_), spec(spec_), sink(sink_),
          r(rng::derive(cfg_.seed, "generate")) {}

    // ---- allowed set for the current phase

    std::vector<int32_t> allowed() const {
        std::vector<int32_t> a;
        switch (phase) {
            case gen_phase::think_open:
                a.push_back(v.think_open);
                break;
            case gen_phase::think_body:
                add_content_syms(a);
                add_field_labels(cue_field::emotion, a, v, /*with_unk=*/true);
                break;
            case gen_phase::think_label:
                add_field_labels((cue_field) label_slot, a, v, /*with_unk=*/true);
                break;
            case gen_phase::think_close:
                a.push_back(v.think_close);
                break;
            case gen_phase::u_transcript:
                add_content_syms(a);
                if (*spec.umode == understand_mode::transcript_single) {
                    for (int32_t f = 0; f < 4; ++f) {
                        add_field_labels((cue_field) f, a, v, /*with_unk=*/false);
                    }
                } else if (*spec.umode == understand_mode::full_label) {
                    add_field_labels(cue_field::emotion, a, v, /*with_unk=*/true);
                }
                break;
            case gen_phase::u_label:
                add_field_labels((cue_field) label_slot, a, v, /*with_unk=*/true);
                break;
            case gen_phase::text:
                add_response_text(a);
                a.push_back(v.eot);
                break;
            case gen_phase::speech:
                add_speech_tokens(a, v);
                if (!cfg.streaming) {
                    a.push_back(v.speech_boundary);
                }
                break;
            case gen_phase::post_eot:
                add_speech_tokens(a, v);
                a.push_back(v.speech_boundary);
                break;
            case gen_phase::done:
                break;
        }
        return a;
    }

    // ---- phase entry after the prompt

    void start() {
        if (cfg.think) {
            phase = gen_phase::think_open;
            return;
        }
        switch (spec.task) {
            case task_kind::understand:
                phase = *spec.umode == understand_mode::labels_only ? gen_phase::u_label
                                                                    : gen_phase::u_transcript;
                label_slot = 0;
                break;
            case task_kind::tts:
                phase = gen_phase::speech;
                break;
            case task_kind::t2t:
            case task_kind::s2t:
            case task_kind::s2s:
            case task_kind::s2s_think:
            case task_kind::s2s_interleave:
            case task_kind::s2s_interleave_think:
                phase = gen_phase::text;
                text_slot = 0;
                break;
        }
    }

    // ---- stream chunk plumbing

    void flush_chunk(bool speech_chunk) {
        if (!sink || chunk_buf.empty()) {
            chunk_buf.clear();
            return;
        }
        if (speech_chunk) {
            sink->on_speech_chunk(std::move(chunk_buf));
        } else {
            sink->on_text_chunk(std::move(chunk_buf));
        }
        chunk_buf = {};
    }

    void finish(stop_reason why) {
        // res.think was filled when the span closed; a span truncated by a
        // limit stays unparsed (raw still carries the tokens)
        res.stop = why;
        if (sink) {
            sink->on_stop(why);
        }
        phase = gen_phase::done;
    }

    // ---- per-token bookkeeping; returns false when generation stops

    bool accept(int32_t tok) {
        res.raw.push_back(tok);
        switch (phase) {
            case gen_phase::think_open:
                think_raw.push_back(tok);
                if (sink) sink->on_think(tok);
                phase = gen_phase::think_body;
                return true;
            case gen_phase::think_body:
                think_raw.push_back(tok);
                if (sink) sink->on_think(tok);
                ++think_count;
                if (sym::is_label_of(cue_field::emotion, tok) || tok == v.unk_label) {
                    label_slot = 1;
                    phase      = gen_phase::think_label;
                }
                return true;
            case gen_phase::think_label:
                think_raw.push_back(tok);
                if (sink) sink->on_think(tok);
                ++label_slot;
                if (label_slot == 4) {
                    phase = gen_phase::think_close;
                }
                return true;
            case gen_phase::think_close:
                think_raw.push_back(tok);
                if (sink) sink->on_think(tok);
                res.think = parse_think(think_raw, v).span;
                start_after_think();
                return true;
            case gen_phase::u_transcript:
                res.text.push_back(tok);
                if (sym::is_label(tok) || tok == v.unk_label) {
                    if (*spec.umode == understand_mode::transcript_single) {
                        finish(stop_reason::label_complete);
                        return false;
                    }
                    label_slot = 1;
                    phase      = gen_phase::u_label;
                } else {
                    ++text_count;
                }
                return true;
            case gen_phase::u_label:
                res.text.push_back(tok);
                ++label_slot;
                if (label_slot == 4) {
                    finish(stop_reason::label_complete);
                    return false;
                }
                return true;
            case gen_phase::text:
                res.text.push_back(tok);
                chunk_buf.push_back(tok);
                if (tok == v.eot) {
                    flush_chunk(false);
                    if (spec.task == task_kind::t2t || spec.task == task_kind::s2t) {
                        finish(stop_reason::eot);
                        return false;
                    }
                    phase       = gen_phase::post_eot;
                    speech_slot = 0;
                    return true;
                }
                ++text_count;
                if (cfg.streaming) {
                    ++text_slot;
                    if (text_slot == m_pat.text_chunk) {
                        flush_chunk(false);
                        phase       = gen_phase::speech;
                        speech_slot = 0;
                    }
                }
                return true;
            case gen_phase::speech:
                if (tok == v.speech_boundary) {
                    flush_chunk(true);
                    finish(stop_reason::speech_boundary);
                    return false;
                }
                res.speech.push_back(tok);
                chunk_buf.push_back(tok);
                ++speech_count;
                if (cfg.streaming) {
                    ++speech_slot;
                    if (speech_slot == m_pat.speech_chunk) {
                        flush_chunk(true);
                        phase     = gen_phase::text;
                        text_slot = 0;
                    }
                }
                return true;
            case gen_phase::post_eot:
                if (tok == v.speech_boundary) {
                    flush_chunk(true);
                    finish(stop_reason::speech_boundary);
                    return false;
                }
                res.speech.push_back(tok);
                chunk_buf.push_back(tok);
                ++speech_count;
                if (cfg.streaming && (int32_t) chunk_buf.size() == m_pat.speech_chunk) {
                    flush_chunk(true);
                }
                return true;
            case gen_phase::done:
                break;
        }
        fail(ECHAT_ERR_STATE, "generation: token accepted in terminal phase");
    }

    void start_after_think() {
        // response follows the same layout as the thought-free task
        phase     = gen_phase::text;
        text_slot = 0;
    }

    // ---- limits, checked before sampling each position

    bool hit_limit() const {
        if (st.len >= m.cfg.max_positions) {
            return true;
        }
        switch (phase) {
            case gen_phase::think_body:
                return think_count >= cfg.max_text_tokens;
            case gen_phase::u_transcript:
            case gen_phase::text:
                return text_count >= cfg.max_text_tokens;
            case gen_phase::speech:
            case gen_phase::post_eot:
                return speech_count >= cfg.max_speech_tokens;
            default:
                return false;
        }
    }

    interleave_pattern m_pat; // fixed cadence

    // ---- main loop

    generation_result run(const feature_matrix * audio) {
        // prompt
        lm_input<float> in;
        in.tokens = format_prompt_tokens(spec, v);
        if (audio) {
            nn::mat<float> feats(audio->frames, audio->channels);
            for (int32_t t = 0; t < audio->frames; ++t) {
                for (int32_t c = 0; c < audio->channels; ++c) {
                    feats(t, c) = audio->at(t, c);
                }
            }
            encoder_state<float> es;
            adapter_state<float> as;
            in.soft = net_adapt(m, net_encode(m, feats, es), as);
        }
        check((int64_t) in.tokens.size() < m.cfg.max_positions, ECHAT_ERR_CAPACITY,
              "generation: prompt does not fit the position budget");

        lm_decode_reset(m, st);
        nn::mat<float> logits = lm_decode_feed(m, st, in);

        start();
        while (phase != gen_phase::done) {
            if (sink && sink->cancelled()) {
                res.stop = stop_reason::cancelled;
                phase    = gen_phase::done;
                break;
            }
            if (hit_limit()) {
                flush_chunk(phase == gen_phase::speech || phase == gen_phase::post_eot);
                finish(stop_reason::limit);
                break;
            }
            const std::vector<int32_t> set = allowed();
            const int32_t tok = sample_token(logits, logits.rows() - 1, set, cfg, r);
            const bool more = accept(tok);
            if (!more) {
                break;
            }
            lm_input<float> step;
            step.tokens = {tok};
            logits      = lm_decode_feed(m, st, step);
        }
        return std::move(res);
    }
};

} // namespace

static void validate_generation(const prompt_spec & spec, const generation_config & cfg,
                                const feature_matrix * audio) {
    check(cfg.think == task_thinks(spec.task), ECHAT_ERR_INVALID_CONFIG,
          "generation: think setting does not match the task kind");
    check(cfg.streaming == task_streams(spec.task), ECHAT_ERR_INVALID_CONFIG,
          "generation: streaming setting does not match the task kind");
    check(cfg.max_text_tokens >= 1 && cfg.max_speech_tokens >= 1, ECHAT_ERR_INVALID_CONFIG,
          "generation: token limits must be positive");
    if (task_takes_audio(spec.task)) {
        check(audio != nullptr, ECHAT_ERR_INVALID_ARGUMENT,
              "generation: task takes a speech payload but no features were given");
    } else {
        check(audio == nullptr, ECHAT_ERR_INVALID_ARGUMENT,
              "generation: task takes a text payload but features were given");
    }
}

generation_result generate(const model & m, const feature_matrix * audio,
                           const prompt_spec & spec, const generation_config & cfg) {
    validate_generation(spec, cfg, audio);
    prompt_spec s = spec;
    if (audio) {
        s.speech_rows = adapter_out_len(audio->frames);
    }
    gen_driver d(m, s, cfg, nullptr);
    return d.run(audio);
}

// ---------------------------------------------------------------------------
// response assembly

assembled_response assemble_response(const generation_result & r, const speech_codec & codec,
                                     const vocab_layout & v) {
    assembled_response out;
    out.text_symbols.reserve(r.text.size());
    for (int32_t id : r.text) {
        if (id == v.eot) {
            continue;
        }
        check(v.is_text(id), ECHAT_ERR_PROTOCOL, "assemble: non-text token in text stream");
        out.text_symbols.push_back(id);
    }
    std::vector<int32_t> idx;
    idx.reserve(r.speech.size());
    for (int32_t id : r.speech) {
        check(v.is_speech(id), ECHAT_ERR_PROTOCOL, "assemble: non-speech token in speech stream");
        idx.push_back(v.speech_index(id));
    }
    out.features = codec.decode(idx);
    return out;
}

// ---------------------------------------------------------------------------
// streaming session

struct stream_driver {
    static void push(stream_session & s, gen_event && ev) { s.push(std::move(ev)); }

    static bool is_cancelled(stream_session & s) {
        std::lock_guard<std::mutex> lk(s.mu_);
        return s.cancelled_;
    }

    struct queue_sink final : gen_sink {
        stream_session & s;
        explicit queue_sink(stream_session & s_) : s(s_) {}

        void on_think(int32_t tok) override {
            push(s, {gen_event_kind::think_delta, {tok}, stop_reason::limit});
        }
        void on_text_chunk(std::vector<int32_t> && toks) override {
            push(s, {gen_event_kind::text_chunk, std::move(toks), stop_reason::limit});
        }
        void on_speech_chunk(std::vector<int32_t> && toks) override {
            push(s, {gen_event_kind::speech_chunk, std::move(toks), stop_reason::limit});
        }
        void on_stop(stop_reason r) override {
            push(s, {gen_event_kind::stop, {}, r});
        }
        bool cancelled() const override { return is_cancelled(s); }
    };

    static void run(stream_session & s) {
        queue_sink sink(s);
        gen_driver d(s.m_, s.spec_, s.cfg_, &sink);
        generation_result res = d.run(s.audio_);
        std::lock_guard<std::mutex> lk(s.mu_);
        s.res_  = std::move(res);
        s.done_ = true;
        s.cv_.notify_all();
    }
};

stream_session::stream_session(const model & m, const feature_matrix * audio,
                               const prompt_spec & spec, const generation_config & cfg,
                               size_t queue_capacity)
    : m_(m), audio_(audio), spec_(spec), cfg_(cfg), cap_(std::max<size_t>(1, queue_capacity)) {
    check(cfg.streaming, ECHAT_ERR_INVALID_CONFIG,
          "stream session: config must be in streaming mode");
    validate_generation(spec_, cfg_, audio_);
    if (audio_) {
        spec_.speech_rows = adapter_out_len(audio_->frames);
    }
    worker_ = std::thread([this] { stream_driver::run(*this); });
}

stream_session::~stream_session() {
    cancel();
    if (worker_.joinable()) {
        worker_.join();
    }
}

void stream_session::push(gen_event && ev) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return queue_.size() < cap_ || cancelled_; });
    if (cancelled_) {
        return; // consumer walked away; drop silently
    }
    queue_.push_back(std::move(ev));
    cv_.notify_all();
}

bool stream_session::next(gen_event & out) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return !queue_.empty() || done_ || cancelled_; });
    if (cancelled_) {
        // wait for the producer to finalize the partial result
        cv_.wait(lk, [&] { return done_; });
        return false;
    }
    if (!queue_.empty()) {
        out = std::move(queue_.front());
        queue_.erase(queue_.begin());
        cv_.notify_all();
        return true;
    }
    return false; // done_ and drained
}

void stream_session::cancel() {
    std::lock_guard<std::mutex> lk(mu_);
    cancelled_ = true;
    cv_.notify_all();
}

} // namespace echat
