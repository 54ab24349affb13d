#include "echat-corpus.h"

#include "echat-common.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

using json = nlohmann::ordered_json;

namespace echat {

// band geometry of the audio surrogate (requires >= 80 channels)
namespace band {
constexpr int32_t symbol_first  = 0;  // 40 channels of per-symbol template
constexpr int32_t symbol_count  = 40;
constexpr int32_t event_block   = 5;  // event e occupies [5e, 5e+5) of the symbol band
constexpr int32_t emotion_first = 40; // 7 one-hot channels; neutral = all zero
constexpr int32_t gender_first  = 50; // 2 one-hot channels
constexpr int32_t age_first     = 55; // 3 one-hot channels
constexpr int32_t noise_first   = 60;
constexpr int32_t noise_count   = 20;
constexpr int32_t min_channels  = 80;
} // namespace band

const char * eval_task_name(eval_task t) {
    switch (t) {
        case eval_task::emotion: return "emotion";
        case eval_task::age:     return "age";
        case eval_task::gender:  return "gender";
        case eval_task::event:   return "event";
        case eval_task::multi:   return "multi";
    }
    return "?";
}

std::optional<eval_task> eval_task_from_name(std::string_view s) {
    for (int32_t i = 0; i < EVAL_TASK_COUNT; ++i) {
        if (s == eval_task_name((eval_task) i)) {
            return (eval_task) i;
        }
    }
    return std::nullopt;
}

const char * sample_task_name(sample_task t) {
    switch (t) {
        case sample_task::understanding: return "understanding";
        case sample_task::tts:           return "tts";
        case sample_task::t2t:           return "t2t";
        case sample_task::s2s_plain:     return "s2s";
        case sample_task::empathy:       return "empathy";
    }
    return "?";
}

static std::optional<sample_task> sample_task_from_name(std::string_view s) {
    for (int32_t i = 0; i < 5; ++i) {
        if (s == sample_task_name((sample_task) i)) {
            return (sample_task) i;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// generator

corpus_generator::corpus_generator(const corpus_config & cfg_) : cfg(cfg_) {
    check(cfg.channels >= band::min_channels, ECHAT_ERR_INVALID_CONFIG,
          "corpus channels must be >= " + std::to_string(band::min_channels));
    check(cfg.frames_per_symbol >= 1, ECHAT_ERR_INVALID_CONFIG, "frames_per_symbol must be >= 1");
    check(cfg.event_frames >= 1, ECHAT_ERR_INVALID_CONFIG, "event_frames must be >= 1");
    check(cfg.scenario_count >= 1 && cfg.scenario_count * 2 <= 16, ECHAT_ERR_INVALID_CONFIG,
          "scenario_count must be in [1, 8] (prefix symbols live below the filler families)");
    check(cfg.filler_min >= 1 && cfg.filler_min <= cfg.filler_max, ECHAT_ERR_INVALID_CONFIG,
          "filler length range invalid");
    check(cfg.emotion_share >= 0.0f && cfg.emotion_share <= 1.0f, ECHAT_ERR_INVALID_CONFIG,
          "emotion_share must be in [0, 1]");
    check(cfg.multi_share >= 0.0f && cfg.multi_share <= 1.0f, ECHAT_ERR_INVALID_CONFIG,
          "multi_share must be in [0, 1]");
    check(cfg.event_present_rate >= 0.0f && cfg.event_present_rate <= 1.0f,
          ECHAT_ERR_INVALID_CONFIG, "event_present_rate must be in [0, 1]");
    check(cfg.symbol_amp > 0 && cfg.cue_amp > cfg.symbol_amp && cfg.event_amp > cfg.cue_amp &&
              cfg.noise_amp >= 0 && cfg.noise_amp < cfg.symbol_amp,
          ECHAT_ERR_INVALID_CONFIG,
          "amplitude tiers must satisfy noise < symbol < cue < event");
}

std::vector<int32_t> corpus_generator::filler_alphabet(bool held_out) const {
    // content symbols 16..23: first half feeds training, second half is kept
    // for the benchmark's studio-free entries
    std::vector<int32_t> out;
    const int32_t first = held_out ? 20 : 16;
    for (int32_t s = first; s < first + 4; ++s) {
        out.push_back(s);
    }
    return out;
}

int32_t corpus_generator::symbol_frame_count(size_t n_symbols, bool with_event) const {
    return (int32_t) n_symbols * cfg.frames_per_symbol + (with_event ? cfg.event_frames : 0);
}

feature_matrix corpus_generator::render_features(const std::vector<int32_t> & symbols,
                                                 const cue_spec & cues,
                                                 uint64_t sample_seed) const {
    for (int32_t s : symbols) {
        check(s >= 0 && s < sym::count, ECHAT_ERR_DOMAIN,
              "render_features: symbol id out of range: " + std::to_string(s));
    }
    const bool    with_event = cues.event != event_kind::none;
    const int32_t fps        = cfg.frames_per_symbol;
    const int32_t T          = symbol_frame_count(symbols.size(), with_event);
    auto m = feature_matrix::zeros(T, cfg.channels, cfg.frame_rate);

    // event segment goes at a seeded symbol boundary
    int32_t event_at = -1;
    if (with_event) {
        rng er   = rng::derive(sample_seed, "event-pos");
        event_at = (int32_t) er.uniform_int(symbols.size() + 1) * fps;
    }

    rng noise = rng::derive(sample_seed, "noise");

    int32_t row = 0;
    auto emit_symbol_frames = [&](int32_t s) {
        // per-symbol template: fps x 40 values, fixed by the corpus seed
        rng tpl = rng::derive(cfg.seed, "symtpl", (uint64_t) s);
        for (int32_t f = 0; f < fps; ++f) {
            float * r = m.row(row++);
            for (int32_t c = 0; c < band::symbol_count; ++c) {
                r[band::symbol_first + c] = (float) (tpl.uniform(-1.0, 1.0) * cfg.symbol_amp);
            }
        }
    };
    auto emit_event_frames = [&]() {
        const int32_t e     = (int32_t) cues.event;
        const int32_t first = band::symbol_first + e * band::event_block;
        for (int32_t f = 0; f < cfg.event_frames; ++f) {
            float * r = m.row(row++);
            for (int32_t c = 0; c < band::event_block; ++c) {
                r[first + c] = cfg.event_amp;
            }
        }
    };

    for (size_t i = 0; i <= symbols.size(); ++i) {
        if (with_event && (int32_t) i * fps == event_at) {
            emit_event_frames();
        }
        if (i < symbols.size()) {
            emit_symbol_frames(symbols[i]);
        }
    }
    check(row == T, ECHAT_ERR_INTERNAL, "render_features: frame count mismatch");

    // speaker-state code on every frame + low-amplitude noise band
    for (int32_t t = 0; t < T; ++t) {
        float * r = m.row(t);
        if (cues.emotion != emotion_kind::neutral) {
            r[band::emotion_first + (int32_t) cues.emotion] += cfg.cue_amp;
        }
        r[band::gender_first + (int32_t) cues.gender] += cfg.cue_amp;
        r[band::age_first + (int32_t) cues.age] += cfg.cue_amp;
        for (int32_t c = 0; c < band::noise_count; ++c) {
            r[band::noise_first + c] += (float) (noise.normal() * cfg.noise_amp);
        }
    }
    return m;
}

// nearest one-hot pattern (amplitude a, n options, option `zero_index`
// represented by the zero vector when zero_index >= 0); ties break low
static int32_t nearest_pattern(const double * mean, int32_t n, double a, int32_t zero_index) {
    int32_t best   = -1;
    double  best_d = 0.0;
    for (int32_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (int32_t j = 0; j < n; ++j) {
            const double target = (i == zero_index) ? 0.0 : (j == i ? a : 0.0);
            const double x      = mean[j] - target;
            d += x * x;
        }
        if (best < 0 || d < best_d) {
            best_d = d;
            best   = i;
        }
    }
    return best;
}

cue_spec corpus_generator::decode_cues(const feature_matrix & m) const {
    check(m.channels >= band::min_channels, ECHAT_ERR_DOMAIN,
          "decode_cues: too few channels");

    // event frames carry a loud block in the symbol band
    std::vector<bool> is_event((size_t) m.frames, false);
    std::vector<int64_t> event_votes((size_t) EVENT_ACTIVE_COUNT, 0);
    for (int32_t t = 0; t < m.frames; ++t) {
        const float * r = m.row(t);
        int32_t best_e  = -1;
        double  best_m  = 0.0;
        for (int32_t e = 0; e < EVENT_ACTIVE_COUNT; ++e) {
            double s = 0.0;
            for (int32_t c = 0; c < band::event_block; ++c) {
                s += r[band::symbol_first + e * band::event_block + c];
            }
            s /= band::event_block;
            if (s > best_m) {
                best_m = s;
                best_e = e;
            }
        }
        if (best_e >= 0 && best_m > cfg.event_amp * 0.5) {
            is_event[(size_t) t] = true;
            event_votes[(size_t) best_e]++;
        }
    }

    cue_spec out;
    {
        int64_t best = 0;
        int32_t who  = -1;
        for (int32_t e = 0; e < EVENT_ACTIVE_COUNT; ++e) {
            if (event_votes[(size_t) e] > best) {
                best = event_votes[(size_t) e];
                who  = e;
            }
        }
        out.event = who < 0 ? event_kind::none : (event_kind) who;
    }

    // cue bands averaged over non-event frames (all frames if none remain)
    double emo[EMOTION_COUNT - 1] = {}; // 7 channels; neutral is the zero pattern
    double gen[GENDER_COUNT]      = {};
    double age[AGE_COUNT]         = {};
    int64_t used = 0;
    for (int32_t t = 0; t < m.frames; ++t) {
        if (is_event[(size_t) t]) {
            continue;
        }
        const float * r = m.row(t);
        for (int32_t i = 0; i < EMOTION_COUNT - 1; ++i) {
            emo[i] += r[band::emotion_first + i];
        }
        for (int32_t i = 0; i < GENDER_COUNT; ++i) {
            gen[i] += r[band::gender_first + i];
        }
        for (int32_t i = 0; i < AGE_COUNT; ++i) {
            age[i] += r[band::age_first + i];
        }
        ++used;
    }
    if (used == 0) {
        for (int32_t t = 0; t < m.frames; ++t) {
            const float * r = m.row(t);
            for (int32_t i = 0; i < EMOTION_COUNT - 1; ++i) {
                emo[i] += r[band::emotion_first + i];
            }
            for (int32_t i = 0; i < GENDER_COUNT; ++i) {
                gen[i] += r[band::gender_first + i];
            }
            for (int32_t i = 0; i < AGE_COUNT; ++i) {
                age[i] += r[band::age_first + i];
            }
        }
        used = std::max(1, m.frames);
    }
    for (auto & x : emo) x /= (double) used;
    for (auto & x : gen) x /= (double) used;
    for (auto & x : age) x /= (double) used;

    // emotion patterns: one-hot over 7 channels; the last taxonomy entry
    // (neutral) is the all-zero pattern, so silence reads as neutral
    {
        double mean8[EMOTION_COUNT] = {};
        std::memcpy(mean8, emo, sizeof(emo));
        // treat as 8-way choice over 7 channels: pattern i<7 = one-hot(i),
        // pattern 7 (neutral) = zero.  reuse nearest_pattern over 7 dims by
        // scanning manually:
        int32_t best   = -1;
        double  best_d = 0.0;
        for (int32_t i = 0; i < EMOTION_COUNT; ++i) {
            double d = 0.0;
            for (int32_t j = 0; j < EMOTION_COUNT - 1; ++j) {
                const double target = (i < EMOTION_COUNT - 1 && j == i) ? cfg.cue_amp : 0.0;
                const double x      = emo[j] - target;
                d += x * x;
            }
            if (best < 0 || d < best_d) {
                best_d = d;
                best   = i;
            }
        }
        out.emotion = (emotion_kind) best;
    }
    out.gender = (gender_kind) nearest_pattern(gen, GENDER_COUNT, cfg.cue_amp, -1);
    out.age    = (age_kind) nearest_pattern(age, AGE_COUNT, cfg.cue_amp, -1);
    return out;
}

std::vector<int32_t> corpus_generator::generate_response(int32_t scenario,
                                                         const cue_labels & labels) const {
    check(scenario >= 0 && scenario < cfg.scenario_count, ECHAT_ERR_DOMAIN,
          "scenario out of range: " + std::to_string(scenario));
    std::vector<int32_t> out;
    for (int32_t f = 0; f < CUE_FIELD_COUNT; ++f) {
        const auto field = (cue_field) f;
        if (!labels.has(field)) {
            continue;
        }
        out.push_back(sym::of_ack(field));
        switch (field) {
            case cue_field::emotion: out.push_back(sym::of_emotion(*labels.emotion)); break;
            case cue_field::gender:  out.push_back(sym::of_gender(*labels.gender)); break;
            case cue_field::age:     out.push_back(sym::of_age(*labels.age)); break;
            case cue_field::event:   out.push_back(sym::of_event(*labels.event)); break;
        }
    }
    out.push_back(sym::of_tag(scenario));
    // scenario-fixed reply body from the training filler family
    rng  r      = rng::derive(cfg.seed, "resp-body", (uint64_t) scenario);
    const auto fill = filler_alphabet(false);
    for (int32_t i = 0; i < 3; ++i) {
        out.push_back(fill[r.uniform_int(fill.size())]);
    }
    return out;
}

cue_spec corpus_generator::response_voice(emotion_kind response_emotion) const {
    return { response_emotion, gender_kind::female, age_kind::adult, event_kind::none };
}

// ---------------------------------------------------------------------------
// planning

static emotion_kind draw_emotion(rng & r) { return (emotion_kind) r.uniform_int(EMOTION_COUNT); }
static gender_kind  draw_gender(rng & r) { return (gender_kind) r.uniform_int(GENDER_COUNT); }
static age_kind     draw_age(rng & r) { return (age_kind) r.uniform_int(AGE_COUNT); }
static event_kind   draw_active_event(rng & r) { return (event_kind) r.uniform_int(EVENT_ACTIVE_COUNT); }

static cue_spec draw_background_cues(rng & r, float event_present_rate) {
    cue_spec c;
    c.emotion = draw_emotion(r);
    c.gender  = draw_gender(r);
    c.age     = draw_age(r);
    c.event   = r.coin(event_present_rate) ? draw_active_event(r) : event_kind::none;
    return c;
}

// single-label field quota: emotion_share for emotion, the rest split evenly
static cue_field single_field_for_index(int32_t i, int32_t n, float emotion_share) {
    const auto n_e   = (int32_t) std::lround((double) n * emotion_share);
    if (i < n_e) {
        return cue_field::emotion;
    }
    const int32_t rest = n - n_e;
    const int32_t j    = i - n_e;
    const int32_t base = rest / 3;
    const int32_t r3   = rest % 3;
    const int32_t n_g  = base + (r3 > 0 ? 1 : 0);
    const int32_t n_a  = base + (r3 > 1 ? 1 : 0);
    if (j < n_g) {
        return cue_field::gender;
    }
    if (j < n_g + n_a) {
        return cue_field::age;
    }
    return cue_field::event;
}

static void supervise_field(cue_labels & labels, const cue_spec & cues, cue_field f) {
    switch (f) {
        case cue_field::emotion: labels.emotion = cues.emotion; break;
        case cue_field::gender:  labels.gender = cues.gender; break;
        case cue_field::age:     labels.age = cues.age; break;
        case cue_field::event:   labels.event = cues.event; break;
    }
}

static std::vector<int32_t> make_query_symbols(const corpus_generator & g, rng & r, int32_t scenario,
                                        bool held_out_fillers) {
    std::vector<int32_t> q = { scenario * 2, scenario * 2 + 1 };
    const auto fill = g.filler_alphabet(held_out_fillers);
    const auto len  = g.cfg.filler_min +
                      (int32_t) r.uniform_int((uint64_t) (g.cfg.filler_max - g.cfg.filler_min + 1));
    for (int32_t i = 0; i < len; ++i) {
        q.push_back(fill[r.uniform_int(fill.size())]);
    }
    return q;
}

std::vector<dialogue_sample> corpus_generator::plan_corpus() const {
    std::vector<dialogue_sample> out;
    out.reserve((size_t) (cfg.n_understanding + cfg.n_tts + cfg.n_t2t + cfg.n_s2s + cfg.n_empathy));

    auto sample_seed = [&](sample_task t, int32_t i) {
        return rng::derive(cfg.seed, std::string("sample-") + sample_task_name(t), (uint64_t) i)
            .u64();
    };

    // understanding: spoken query, one supervised paralinguistic field
    for (int32_t i = 0; i < cfg.n_understanding; ++i) {
        dialogue_sample s;
        s.tag      = sample_task::understanding;
        s.seed     = sample_seed(s.tag, i);
        rng r(s.seed);
        s.scenario = (int32_t) r.uniform_int((uint64_t) cfg.scenario_count);
        s.query_symbols = make_query_symbols(*this, r, s.scenario, false);
        s.cues = draw_background_cues(r, cfg.event_present_rate);
        const cue_field f = single_field_for_index(i, cfg.n_understanding, cfg.emotion_share);
        if (f == cue_field::event) {
            s.cues.event = draw_active_event(r); // graded events are real events
        }
        supervise_field(s.labels, s.cues, f);
        out.push_back(std::move(s));
    }

    // tts: text in, speech tokens out (neutral fixed voice)
    for (int32_t i = 0; i < cfg.n_tts; ++i) {
        dialogue_sample s;
        s.tag       = sample_task::tts;
        s.seed      = sample_seed(s.tag, i);
        rng r(s.seed);
        s.scenario  = (int32_t) r.uniform_int((uint64_t) cfg.scenario_count);
        s.query_symbols = make_query_symbols(*this, r, s.scenario, false);
        s.has_audio = false;
        s.response_emotion = emotion_kind::neutral;
        out.push_back(std::move(s));
    }

    // t2t: text question -> scenario reply
    for (int32_t i = 0; i < cfg.n_t2t; ++i) {
        dialogue_sample s;
        s.tag       = sample_task::t2t;
        s.seed      = sample_seed(s.tag, i);
        rng r(s.seed);
        s.scenario  = (int32_t) r.uniform_int((uint64_t) cfg.scenario_count);
        s.query_symbols = make_query_symbols(*this, r, s.scenario, false);
        s.has_audio = false;
        s.response_symbols = generate_response(s.scenario, {});
        s.response_emotion = emotion_kind::neutral;
        out.push_back(std::move(s));
    }

    // plain s2s: spoken query, no supervised cues, neutral reply voice
    for (int32_t i = 0; i < cfg.n_s2s; ++i) {
        dialogue_sample s;
        s.tag      = sample_task::s2s_plain;
        s.seed     = sample_seed(s.tag, i);
        rng r(s.seed);
        s.scenario = (int32_t) r.uniform_int((uint64_t) cfg.scenario_count);
        s.query_symbols = make_query_symbols(*this, r, s.scenario, false);
        s.cues = draw_background_cues(r, cfg.event_present_rate);
        s.response_symbols = generate_response(s.scenario, {});
        s.response_emotion = emotion_kind::neutral;
        out.push_back(std::move(s));
    }

    // empathy: spoken query with supervised cues, acknowledging reply in the
    // mapped voice; a quota of samples carries all four labels
    const auto n_multi = (int32_t) std::lround((double) cfg.n_empathy * cfg.multi_share);
    for (int32_t i = 0; i < cfg.n_empathy; ++i) {
        dialogue_sample s;
        s.tag      = sample_task::empathy;
        s.seed     = sample_seed(s.tag, i);
        rng r(s.seed);
        s.scenario = (int32_t) r.uniform_int((uint64_t) cfg.scenario_count);
        s.query_symbols = make_query_symbols(*this, r, s.scenario, false);
        s.cues = draw_background_cues(r, cfg.event_present_rate);
        if (i < n_multi) {
            s.labels = cue_labels::all_of(s.cues);
        } else {
            const cue_field f = single_field_for_index(i - n_multi, cfg.n_empathy - n_multi,
                                                       cfg.emotion_share);
            if (f == cue_field::event) {
                s.cues.event = draw_active_event(r);
            }
            supervise_field(s.labels, s.cues, f);
        }
        s.response_symbols = generate_response(s.scenario, s.labels);
        s.response_emotion = response_emotion_for(s.labels.emotion);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<benchmark_entry> corpus_generator::plan_benchmark(const benchmark_config & bc) const {
    check(bc.entries_per_task >= 1, ECHAT_ERR_INVALID_CONFIG, "entries_per_task must be >= 1");
    std::vector<benchmark_entry> out;
    out.reserve((size_t) bc.entries_per_task * EVAL_TASK_COUNT);

    for (int32_t ti = 0; ti < EVAL_TASK_COUNT; ++ti) {
        const auto task   = (eval_task) ti;
        const auto n_real = bc.entries_per_task / 3;
        for (int32_t i = 0; i < bc.entries_per_task; ++i) {
            benchmark_entry e;
            e.task  = task;
            e.index = i;
            e.seed  = rng::derive(bc.seed, std::string("bench-") + eval_task_name(task),
                                  (uint64_t) i)
                          .u64();
            e.real_surrogate = i < n_real;
            rng r(e.seed);
            e.scenario      = (int32_t) r.uniform_int((uint64_t) cfg.scenario_count);
            e.query_symbols = make_query_symbols(*this, r, e.scenario, e.real_surrogate);
            e.cues          = draw_background_cues(r, cfg.event_present_rate);
            switch (task) {
                case eval_task::emotion: supervise_field(e.supervised, e.cues, cue_field::emotion); break;
                case eval_task::age:     supervise_field(e.supervised, e.cues, cue_field::age); break;
                case eval_task::gender:  supervise_field(e.supervised, e.cues, cue_field::gender); break;
                case eval_task::event:
                    e.cues.event = draw_active_event(r);
                    supervise_field(e.supervised, e.cues, cue_field::event);
                    break;
                case eval_task::multi:
                    e.supervised = cue_labels::all_of(e.cues);
                    break;
            }
            out.push_back(std::move(e));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// json helpers

static json cues_to_json(const cue_spec & c) {
    json j;
    j["emotion"] = emotion_name(c.emotion);
    j["gender"]  = gender_name(c.gender);
    j["age"]     = age_name(c.age);
    j["event"]   = event_name(c.event);
    return j;
}

static cue_spec cues_from_json(const json & j) {
    cue_spec c;
    auto emo = emotion_from_name(j.at("emotion").get<std::string>());
    auto gen = gender_from_name(j.at("gender").get<std::string>());
    auto age = age_from_name(j.at("age").get<std::string>());
    auto ev  = event_from_name(j.at("event").get<std::string>());
    check(emo && gen && age && ev, ECHAT_ERR_FORMAT, "bad cue record");
    c.emotion = *emo;
    c.gender  = *gen;
    c.age     = *age;
    c.event   = *ev;
    return c;
}

static json labels_to_json(const cue_labels & l) {
    json j = json::object();
    if (l.emotion) j["emotion"] = emotion_name(*l.emotion);
    if (l.gender)  j["gender"] = gender_name(*l.gender);
    if (l.age)     j["age"] = age_name(*l.age);
    if (l.event)   j["event"] = event_name(*l.event);
    return j;
}

static cue_labels labels_from_json(const json & j) {
    cue_labels l;
    if (j.contains("emotion")) {
        l.emotion = emotion_from_name(j.at("emotion").get<std::string>());
        check(l.emotion.has_value(), ECHAT_ERR_FORMAT, "bad emotion label");
    }
    if (j.contains("gender")) {
        l.gender = gender_from_name(j.at("gender").get<std::string>());
        check(l.gender.has_value(), ECHAT_ERR_FORMAT, "bad gender label");
    }
    if (j.contains("age")) {
        l.age = age_from_name(j.at("age").get<std::string>());
        check(l.age.has_value(), ECHAT_ERR_FORMAT, "bad age label");
    }
    if (j.contains("event")) {
        l.event = event_from_name(j.at("event").get<std::string>());
        check(l.event.has_value(), ECHAT_ERR_FORMAT, "bad event label");
    }
    return l;
}

static json sample_to_json(const dialogue_sample & s, uint64_t feature_hash) {
    json j;
    j["task"]     = sample_task_name(s.tag);
    j["scenario"] = s.scenario;
    j["seed"]     = hash_hex(s.seed);
    j["query"]    = symbols_to_string(s.query_symbols);
    if (s.has_audio) {
        j["cues"] = cues_to_json(s.cues);
    }
    j["labels"]           = labels_to_json(s.labels);
    j["response"]         = symbols_to_string(s.response_symbols);
    j["response_emotion"] = emotion_name(s.response_emotion);
    j["response_speech"]  = s.response_speech;
    if (s.has_audio) {
        j["features"]     = s.feature_file;
        j["feature_hash"] = hash_hex(feature_hash);
    }
    return j;
}

static dialogue_sample sample_from_json(const json & j) {
    dialogue_sample s;
    auto tag = sample_task_from_name(j.at("task").get<std::string>());
    check(tag.has_value(), ECHAT_ERR_FORMAT, "bad sample task");
    s.tag      = *tag;
    s.scenario = j.at("scenario").get<int32_t>();
    s.seed     = std::stoull(j.at("seed").get<std::string>(), nullptr, 16);
    s.query_symbols = symbols_from_string(j.at("query").get<std::string>());
    s.has_audio = j.contains("features");
    if (j.contains("cues")) {
        s.cues = cues_from_json(j.at("cues"));
    }
    s.labels           = labels_from_json(j.at("labels"));
    s.response_symbols = symbols_from_string(j.at("response").get<std::string>());
    auto remo          = emotion_from_name(j.at("response_emotion").get<std::string>());
    check(remo.has_value(), ECHAT_ERR_FORMAT, "bad response emotion");
    s.response_emotion = *remo;
    s.response_speech  = j.at("response_speech").get<std::vector<int32_t>>();
    if (s.has_audio) {
        s.feature_file = j.at("features").get<std::string>();
    }
    return s;
}

static json entry_to_json(const benchmark_entry & e, uint64_t feature_hash) {
    json j;
    j["task"]           = eval_task_name(e.task);
    j["index"]          = e.index;
    j["scenario"]       = e.scenario;
    j["seed"]           = hash_hex(e.seed);
    j["query"]          = symbols_to_string(e.query_symbols);
    j["cues"]           = cues_to_json(e.cues);
    j["supervised"]     = labels_to_json(e.supervised);
    j["real_surrogate"] = e.real_surrogate;
    j["features"]       = e.feature_file;
    j["feature_hash"]   = hash_hex(feature_hash);
    return j;
}

static benchmark_entry entry_from_json(const json & j) {
    benchmark_entry e;
    auto task = eval_task_from_name(j.at("task").get<std::string>());
    check(task.has_value(), ECHAT_ERR_FORMAT, "bad benchmark task");
    e.task           = *task;
    e.index          = j.at("index").get<int32_t>();
    e.scenario       = j.at("scenario").get<int32_t>();
    e.seed           = std::stoull(j.at("seed").get<std::string>(), nullptr, 16);
    e.query_symbols  = symbols_from_string(j.at("query").get<std::string>());
    e.cues           = cues_from_json(j.at("cues"));
    e.supervised     = labels_from_json(j.at("supervised"));
    e.real_surrogate = j.at("real_surrogate").get<bool>();
    e.feature_file   = j.at("features").get<std::string>();
    return e;
}

static json corpus_config_to_json(const corpus_config & c) {
    json j;
    j["seed"]               = c.seed;
    j["channels"]           = c.channels;
    j["frame_rate"]         = c.frame_rate;
    j["frames_per_symbol"]  = c.frames_per_symbol;
    j["event_frames"]       = c.event_frames;
    j["symbol_amp"]         = c.symbol_amp;
    j["cue_amp"]            = c.cue_amp;
    j["event_amp"]          = c.event_amp;
    j["noise_amp"]          = c.noise_amp;
    j["scenario_count"]     = c.scenario_count;
    j["filler_min"]         = c.filler_min;
    j["filler_max"]         = c.filler_max;
    j["n_understanding"]    = c.n_understanding;
    j["n_tts"]              = c.n_tts;
    j["n_t2t"]              = c.n_t2t;
    j["n_s2s"]              = c.n_s2s;
    j["n_empathy"]          = c.n_empathy;
    j["emotion_share"]      = c.emotion_share;
    j["multi_share"]        = c.multi_share;
    j["event_present_rate"] = c.event_present_rate;
    return j;
}

static corpus_config corpus_config_from_json(const json & j) {
    corpus_config c;
    c.seed               = j.at("seed").get<uint64_t>();
    c.channels           = j.at("channels").get<int32_t>();
    c.frame_rate         = j.at("frame_rate").get<float>();
    c.frames_per_symbol  = j.at("frames_per_symbol").get<int32_t>();
    c.event_frames       = j.at("event_frames").get<int32_t>();
    c.symbol_amp         = j.at("symbol_amp").get<float>();
    c.cue_amp            = j.at("cue_amp").get<float>();
    c.event_amp          = j.at("event_amp").get<float>();
    c.noise_amp          = j.at("noise_amp").get<float>();
    c.scenario_count     = j.at("scenario_count").get<int32_t>();
    c.filler_min         = j.at("filler_min").get<int32_t>();
    c.filler_max         = j.at("filler_max").get<int32_t>();
    c.n_understanding    = j.at("n_understanding").get<int32_t>();
    c.n_tts              = j.at("n_tts").get<int32_t>();
    c.n_t2t              = j.at("n_t2t").get<int32_t>();
    c.n_s2s              = j.at("n_s2s").get<int32_t>();
    c.n_empathy          = j.at("n_empathy").get<int32_t>();
    c.emotion_share      = j.at("emotion_share").get<float>();
    c.multi_share        = j.at("multi_share").get<float>();
    c.event_present_rate = j.at("event_present_rate").get<float>();
    return c;
}

// ---------------------------------------------------------------------------
// build

static const char * SPLIT_DIRS[5] = { "understanding", "tts", "t2t", "s2s", "empathy" };

corpus_build_result build_corpus(const std::string & dir,
                                 const corpus_config & cfg,
                                 const codec_config & ccfg) {
    const corpus_generator gen(cfg);
    auto samples = gen.plan_corpus();

    ensure_dir(dir);
    for (const char * s : SPLIT_DIRS) {
        ensure_dir(path_join(dir, std::string(s) + "/feat"));
    }

    // render query audio, collect frames for the codec fit
    std::vector<feature_matrix>          rendered((size_t) samples.size());
    std::vector<feature_matrix>          response_audio((size_t) samples.size());
    std::vector<const feature_matrix *>  fit_input;
    std::vector<int32_t>                 split_counter(5, 0);
    for (size_t i = 0; i < samples.size(); ++i) {
        auto & s = samples[i];
        if (s.has_audio) {
            const int32_t idx = split_counter[(int32_t) s.tag]++;
            char name[64];
            std::snprintf(name, sizeof(name), "%s/feat/q%06d", sample_task_name(s.tag), idx);
            s.feature_file = name;
            rendered[i]    = gen.render_features(s.query_symbols, s.cues, s.seed);
            fit_input.push_back(&rendered[i]);
        } else {
            split_counter[(int32_t) s.tag]++;
        }
        // responses are rendered in the reply voice; tts speaks its input text
        const bool   speaks = s.tag == sample_task::s2s_plain || s.tag == sample_task::empathy;
        const auto * spoken = (s.tag == sample_task::tts) ? &s.query_symbols
                            : (speaks && !s.response_symbols.empty() ? &s.response_symbols : nullptr);
        if (spoken) {
            response_audio[i] = gen.render_features(
                *spoken, gen.response_voice(s.response_emotion),
                rng::derive(s.seed, "resp-audio").u64());
            fit_input.push_back(&response_audio[i]);
        }
    }

    corpus_build_result res;
    res.codec = fit_codec(fit_input, ccfg);

    // tokenize spoken responses
    for (size_t i = 0; i < samples.size(); ++i) {
        auto & s = samples[i];
        if (response_audio[i].frames > 0 &&
            (s.tag == sample_task::tts || s.tag == sample_task::s2s_plain ||
             s.tag == sample_task::empathy)) {
            s.response_speech = res.codec.quantize(response_audio[i]);
        }
    }

    // write features + per-split jsonl
    std::vector<std::string> feature_hashes;
    std::string              jsonl_blob; // concatenation for the content hash
    std::vector<std::string> split_lines(5);
    for (size_t i = 0; i < samples.size(); ++i) {
        auto &   s  = samples[i];
        uint64_t fh = 0;
        if (s.has_audio) {
            write_features(path_join(dir, s.feature_file), rendered[i]);
            fh = features_hash(rendered[i]);
            feature_hashes.push_back(hash_hex(fh));
        }
        split_lines[(int32_t) s.tag] += sample_to_json(s, fh).dump() + "\n";
    }
    for (int32_t t = 0; t < 5; ++t) {
        const auto path = path_join(dir, std::string(SPLIT_DIRS[t]) + "/samples.jsonl");
        write_text_file(path, split_lines[t]);
        jsonl_blob += split_lines[t];
    }

    write_codec(path_join(dir, "codec.bin"), res.codec);

    json manifest;
    manifest["format"] = "echat-corpus 1";
    manifest["config"] = corpus_config_to_json(cfg);
    json splits        = json::array();
    {
        std::vector<int32_t> counts(5, 0);
        for (const auto & s : samples) {
            counts[(int32_t) s.tag]++;
        }
        for (int32_t t = 0; t < 5; ++t) {
            json sj;
            sj["name"]    = SPLIT_DIRS[t];
            sj["count"]   = counts[t];
            sj["samples"] = std::string(SPLIT_DIRS[t]) + "/samples.jsonl";
            splits.push_back(sj);
        }
    }
    manifest["splits"]         = splits;
    manifest["codec"]          = "codec.bin";
    manifest["codec_hash"]     = hash_hex(res.codec.content_hash());
    manifest["feature_hashes"] = feature_hashes;

    fnv1a h;
    h.update(manifest.dump());
    h.update(jsonl_blob);
    res.content_hash         = h.digest();
    manifest["content_hash"] = hash_hex(res.content_hash);

    res.manifest_path = path_join(dir, "manifest.json");
    write_text_file(res.manifest_path, manifest.dump(2) + "\n");
    res.sample_count = (int32_t) samples.size();
    return res;
}

benchmark_build_result build_benchmark(const std::string & dir,
                                       const benchmark_config & bc,
                                       const corpus_config & corpus_cfg,
                                       const std::string & corpus_manifest_path) {
    check(bc.seed != corpus_cfg.seed, ECHAT_ERR_DISJOINTNESS,
          "benchmark seed equals the training corpus seed; evaluation data must be "
          "generated from a disjoint seed");

    const corpus_generator gen(corpus_cfg);
    auto entries = gen.plan_benchmark(bc);

    ensure_dir(path_join(dir, "feat"));

    // training-side feature hashes for the disjointness audit
    std::set<std::string> train_hashes;
    {
        json manifest;
        try {
            manifest = json::parse(read_text_file(corpus_manifest_path));
        } catch (const std::exception & e) {
            fail(ECHAT_ERR_FORMAT, corpus_manifest_path + ": bad corpus manifest: " + e.what());
        }
        for (const auto & hh : manifest.at("feature_hashes")) {
            train_hashes.insert(hh.get<std::string>());
        }
    }

    std::vector<std::string> feature_hashes;
    std::string              lines;
    for (size_t i = 0; i < entries.size(); ++i) {
        auto & e = entries[i];
        char name[64];
        std::snprintf(name, sizeof(name), "feat/e%06d", (int32_t) i);
        e.feature_file = name;
        const auto m  = gen.render_features(e.query_symbols, e.cues, e.seed);
        const auto fh = hash_hex(features_hash(m));
        if (train_hashes.count(fh)) {
            fail(ECHAT_ERR_DISJOINTNESS,
                 "benchmark entry " + std::to_string(i) +
                 " reproduces a training corpus recording (feature hash " + fh + ")");
        }
        write_features(path_join(dir, e.feature_file), m);
        feature_hashes.push_back(fh);
        lines += entry_to_json(e, features_hash(m)).dump() + "\n";
    }
    write_text_file(path_join(dir, "entries.jsonl"), lines);

    json manifest;
    manifest["format"] = "echat-benchmark 1";
    json cfgj;
    cfgj["seed"]             = bc.seed;
    cfgj["entries_per_task"] = bc.entries_per_task;
    manifest["config"]       = cfgj;
    manifest["corpus_config"]  = corpus_config_to_json(corpus_cfg);
    manifest["entries"]        = "entries.jsonl";
    manifest["entry_count"]    = (int32_t) entries.size();
    manifest["real_per_task"]  = bc.entries_per_task / 3;
    manifest["feature_hashes"] = feature_hashes;

    fnv1a h;
    h.update(manifest.dump());
    h.update(lines);
    benchmark_build_result res;
    res.content_hash         = h.digest();
    manifest["content_hash"] = hash_hex(res.content_hash);
    res.manifest_path        = path_join(dir, "manifest.json");
    write_text_file(res.manifest_path, manifest.dump(2) + "\n");
    res.entry_count = (int32_t) entries.size();
    return res;
}

// ---------------------------------------------------------------------------
// load

static std::vector<json> read_jsonl(const std::string & path) {
    const auto text = read_text_file(path);
    std::vector<json> out;
    size_t i = 0;
    int    line_no = 0;
    while (i < text.size()) {
        size_t j = text.find('\n', i);
        if (j == std::string::npos) {
            j = text.size();
        }
        ++line_no;
        if (j > i) {
            try {
                out.push_back(json::parse(text.substr(i, j - i)));
            } catch (const std::exception & e) {
                fail(ECHAT_ERR_FORMAT,
                     path + ": line " + std::to_string(line_no) + ": " + e.what(),
                     line_no);
            }
        }
        i = j + 1;
    }
    return out;
}

corpus_data load_corpus(const std::string & dir) {
    const auto manifest_path = path_join(dir, "manifest.json");
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path));
    } catch (const error &) {
        throw;
    } catch (const std::exception & e) {
        fail(ECHAT_ERR_FORMAT, manifest_path + ": " + e.what());
    }
    if (!manifest.contains("format") || manifest.at("format") != "echat-corpus 1") {
        fail(ECHAT_ERR_FORMAT, manifest_path + ": not a corpus manifest");
    }

    corpus_data out;
    out.dir = dir;
    out.cfg = corpus_config_from_json(manifest.at("config"));
    out.content_hash = std::stoull(manifest.at("content_hash").get<std::string>(), nullptr, 16);
    for (const auto & split : manifest.at("splits")) {
        const auto lines = read_jsonl(path_join(dir, split.at("samples").get<std::string>()));
        check((int32_t) lines.size() == split.at("count").get<int32_t>(), ECHAT_ERR_FORMAT,
              "corpus split " + split.at("name").get<std::string>() + " count mismatch");
        for (const auto & l : lines) {
            out.samples.push_back(sample_from_json(l));
        }
    }
    return out;
}

std::vector<const dialogue_sample *> corpus_data::split(sample_task t) const {
    std::vector<const dialogue_sample *> out;
    for (const auto & s : samples) {
        if (s.tag == t) {
            out.push_back(&s);
        }
    }
    return out;
}

feature_matrix corpus_data::load_features(const dialogue_sample & s) const {
    check(s.has_audio && !s.feature_file.empty(), ECHAT_ERR_STATE,
          "sample has no audio features");
    return read_features(path_join(dir, s.feature_file));
}

benchmark_data load_benchmark(const std::string & dir) {
    const auto manifest_path = path_join(dir, "manifest.json");
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path));
    } catch (const error &) {
        throw;
    } catch (const std::exception & e) {
        fail(ECHAT_ERR_FORMAT, manifest_path + ": " + e.what());
    }
    if (!manifest.contains("format") || manifest.at("format") != "echat-benchmark 1") {
        fail(ECHAT_ERR_FORMAT, manifest_path + ": not a benchmark manifest");
    }
    benchmark_data out;
    out.dir          = dir;
    out.content_hash = std::stoull(manifest.at("content_hash").get<std::string>(), nullptr, 16);
    for (const auto & l : read_jsonl(path_join(dir, manifest.at("entries").get<std::string>()))) {
        out.entries.push_back(entry_from_json(l));
    }
    check((int32_t) out.entries.size() == manifest.at("entry_count").get<int32_t>(),
          ECHAT_ERR_FORMAT, "benchmark entry count mismatch");
    return out;
}

feature_matrix benchmark_data::load_features(const benchmark_entry & e) const {
    return read_features(path_join(dir, e.feature_file));
}

} // namespace echat
