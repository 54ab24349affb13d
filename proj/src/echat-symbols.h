#pragma once

// paralinguistic taxonomies and the canonical text symbol alphabet.
//
// the text side of the vocabulary is a closed alphabet of named symbols:
// content letters, paralinguistic label words, chat-template literals, task
// names, acknowledgement markers, scenario content tags and task prompt
// words.  text token id == symbol id, so everything downstream (prompts,
// corpus, judge) speaks in these ids.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace echat {

// ---------------------------------------------------------------------------
// taxonomies

enum class emotion_kind : int32_t {
    happy, sad, surprise, fear, sorry, disgust, anger, neutral,
};
constexpr int32_t EMOTION_COUNT = 8;

enum class gender_kind : int32_t { male, female };
constexpr int32_t GENDER_COUNT = 2;

enum class age_kind : int32_t { child, adult, old };
constexpr int32_t AGE_COUNT = 3;

enum class event_kind : int32_t {
    laugh, cough, cry, scream, sigh, throat_clearing, sneeze, other, none,
};
constexpr int32_t EVENT_COUNT        = 9; // includes "none"
constexpr int32_t EVENT_ACTIVE_COUNT = 8; // excludes "none"

const char * emotion_name(emotion_kind v);
const char * gender_name(gender_kind v);
const char * age_name(age_kind v);
const char * event_name(event_kind v);

std::optional<emotion_kind> emotion_from_name(std::string_view s);
std::optional<gender_kind>  gender_from_name(std::string_view s);
std::optional<age_kind>     age_from_name(std::string_view s);
std::optional<event_kind>   event_from_name(std::string_view s);

// which paralinguistic field; fixed serialization order
enum class cue_field : int32_t { emotion, gender, age, event };
constexpr int32_t CUE_FIELD_COUNT = 4;
const char * cue_field_name(cue_field f);

// fully specified speaker state planted into audio
struct cue_spec {
    emotion_kind emotion = emotion_kind::neutral;
    gender_kind  gender  = gender_kind::male;
    age_kind     age     = age_kind::child;
    event_kind   event   = event_kind::none;

    bool operator==(const cue_spec &) const = default;
};

// partially observed view: nullopt = unknown / unsupervised
struct cue_labels {
    std::optional<emotion_kind> emotion;
    std::optional<gender_kind>  gender;
    std::optional<age_kind>     age;
    std::optional<event_kind>   event;

    bool operator==(const cue_labels &) const = default;

    static cue_labels all_of(const cue_spec & c) {
        return { c.emotion, c.gender, c.age, c.event };
    }
    bool has(cue_field f) const;
};

// affect transfer: which emotion the spoken response should carry for a given
// perceived user emotion (unknown user emotion -> neutral delivery)
emotion_kind response_emotion_for(const std::optional<emotion_kind> & user_emotion);

// ---------------------------------------------------------------------------
// tasks

enum class task_kind : int32_t {
    s2s,                  // speech in, speech+text out
    s2s_think,            // + reasoning span before the reply
    s2s_interleave,       // streaming (interleaved) output
    s2s_interleave_think,
    s2t,                  // speech in, text out
    t2t,                  // text in, text out
    understand,           // speech in, transcript + paralinguistic labels out
    tts,                  // text in, speech tokens out
};
constexpr int32_t TASK_KIND_COUNT = 8;
const char *              task_kind_name(task_kind t);
std::optional<task_kind>  task_kind_from_name(std::string_view s);

// flavor of an understanding run: what the supervision covers
enum class understand_mode : int32_t {
    transcript,        // transcript only
    transcript_single, // transcript + one paralinguistic label
    labels_only,       // paralinguistic labels only
    full_label,        // transcript + all four labels
};
constexpr int32_t UNDERSTAND_MODE_COUNT = 4;
const char * understand_mode_name(understand_mode m);

// ---------------------------------------------------------------------------
// symbol alphabet
//
// id ranges (contiguous, fixed):
//   [0,24)   content letters  sym_a .. sym_x
//   [24,32)  emotion labels   (emotion_kind order)
//   [32,34)  gender labels
//   [34,37)  age labels
//   [37,46)  event labels     (event_kind order, includes "none")
//   [46,52)  chat template literals
//   [52,60)  task names       (task_kind order)
//   [60,64)  acknowledgement markers (cue_field order)
//   [64,80)  scenario content tags  tag_0 .. tag_15
//   [80,84)  understanding prompt words (understand_mode order)

namespace sym {

constexpr int32_t content_first = 0;
constexpr int32_t content_count = 24;

constexpr int32_t emotion_first = 24;
constexpr int32_t gender_first  = 32;
constexpr int32_t age_first     = 34;
constexpr int32_t event_first   = 37;

constexpr int32_t im_start       = 46;
constexpr int32_t im_end         = 47;
constexpr int32_t role_system    = 48;
constexpr int32_t role_user      = 49;
constexpr int32_t role_assistant = 50;
constexpr int32_t newline        = 51;

constexpr int32_t task_first = 52;

constexpr int32_t ack_first = 60; // ack_emotion, ack_gender, ack_age, ack_event

constexpr int32_t tag_first = 64;
constexpr int32_t tag_count = 16;

constexpr int32_t prompt_first = 80; // one word per understand_mode

constexpr int32_t count = 84; // minimum text vocabulary size

int32_t of_emotion(emotion_kind v);
int32_t of_gender(gender_kind v);
int32_t of_age(age_kind v);
int32_t of_event(event_kind v);
int32_t of_field_label(cue_field f, int32_t value_index); // value_index within the field's taxonomy
int32_t of_task(task_kind t);
int32_t of_ack(cue_field f);
int32_t of_tag(int32_t tag_index);
int32_t of_prompt(understand_mode m);

bool is_content(int32_t s);
bool is_label(int32_t s);                  // any paralinguistic label symbol
bool is_label_of(cue_field f, int32_t s);  // label symbol of a specific field
int32_t label_value(cue_field f, int32_t s); // index within the field taxonomy

} // namespace sym

// symbol id -> name ("A".."X", "happy", "im_start", "tag_3", ...); ids must be
// in [0, sym::count)
const char * symbol_name(int32_t s);
std::optional<int32_t> symbol_from_name(std::string_view name);

// render a symbol sequence as a space-separated string and parse it back
std::string          symbols_to_string(const std::vector<int32_t> & syms);
std::vector<int32_t> symbols_from_string(std::string_view text);

} // namespace echat
