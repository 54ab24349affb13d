#include "echat-symbols.h"

#include "echat-common.h"

#include <array>
#include <map>

namespace echat {

static const char * EMOTION_NAMES[EMOTION_COUNT] = {
    "happy", "sad", "surprise", "fear", "sorry", "disgust", "anger", "neutral",
};
static const char * GENDER_NAMES[GENDER_COUNT] = { "male", "female" };
static const char * AGE_NAMES[AGE_COUNT]       = { "child", "adult", "old" };
static const char * EVENT_NAMES[EVENT_COUNT]   = {
    "laugh", "cough", "cry", "scream", "sigh", "throat_clearing", "sneeze", "other", "none",
};

const char * emotion_name(emotion_kind v) { return EMOTION_NAMES[(int32_t) v]; }
const char * gender_name(gender_kind v)   { return GENDER_NAMES[(int32_t) v]; }
const char * age_name(age_kind v)         { return AGE_NAMES[(int32_t) v]; }
const char * event_name(event_kind v)     { return EVENT_NAMES[(int32_t) v]; }

template <typename E, int32_t N>
static std::optional<E> from_name_impl(const char * const (&names)[N], std::string_view s) {
    for (int32_t i = 0; i < N; ++i) {
        if (s == names[i]) {
            return (E) i;
        }
    }
    return std::nullopt;
}

std::optional<emotion_kind> emotion_from_name(std::string_view s) {
    return from_name_impl<emotion_kind, EMOTION_COUNT>(EMOTION_NAMES, s);
}
std::optional<gender_kind> gender_from_name(std::string_view s) {
    return from_name_impl<gender_kind, GENDER_COUNT>(GENDER_NAMES, s);
}
std::optional<age_kind> age_from_name(std::string_view s) {
    return from_name_impl<age_kind, AGE_COUNT>(AGE_NAMES, s);
}
std::optional<event_kind> event_from_name(std::string_view s) {
    return from_name_impl<event_kind, EVENT_COUNT>(EVENT_NAMES, s);
}

const char * cue_field_name(cue_field f) {
    switch (f) {
        case cue_field::emotion: return "emotion";
        case cue_field::gender:  return "gender";
        case cue_field::age:     return "age";
        case cue_field::event:   return "event";
    }
    return "?";
}

bool cue_labels::has(cue_field f) const {
    switch (f) {
        case cue_field::emotion: return emotion.has_value();
        case cue_field::gender:  return gender.has_value();
        case cue_field::age:     return age.has_value();
        case cue_field::event:   return event.has_value();
    }
    return false;
}

emotion_kind response_emotion_for(const std::optional<emotion_kind> & user_emotion) {
    if (!user_emotion) {
        return emotion_kind::neutral;
    }
    switch (*user_emotion) {
        case emotion_kind::happy:    return emotion_kind::happy;
        case emotion_kind::sad:      return emotion_kind::sorry;
        case emotion_kind::surprise: return emotion_kind::surprise;
        case emotion_kind::fear:     return emotion_kind::sorry;
        case emotion_kind::sorry:    return emotion_kind::sorry;
        case emotion_kind::disgust:  return emotion_kind::neutral;
        case emotion_kind::anger:    return emotion_kind::sorry;
        case emotion_kind::neutral:  return emotion_kind::neutral;
    }
    return emotion_kind::neutral;
}

static const char * TASK_NAMES[TASK_KIND_COUNT] = {
    "s2s", "s2s_think", "s2s_interleave", "s2s_interleave_think",
    "s2t", "t2t", "understand", "tts",
};

const char * task_kind_name(task_kind t) { return TASK_NAMES[(int32_t) t]; }

std::optional<task_kind> task_kind_from_name(std::string_view s) {
    return from_name_impl<task_kind, TASK_KIND_COUNT>(TASK_NAMES, s);
}

static const char * UNDERSTAND_MODE_NAMES[UNDERSTAND_MODE_COUNT] = {
    "transcript", "transcript_single", "labels_only", "full_label",
};

const char * understand_mode_name(understand_mode m) {
    return UNDERSTAND_MODE_NAMES[(int32_t) m];
}

// ---------------------------------------------------------------------------
// symbol alphabet

namespace sym {

int32_t of_emotion(emotion_kind v) { return emotion_first + (int32_t) v; }
int32_t of_gender(gender_kind v)   { return gender_first + (int32_t) v; }
int32_t of_age(age_kind v)         { return age_first + (int32_t) v; }
int32_t of_event(event_kind v)     { return event_first + (int32_t) v; }

int32_t of_field_label(cue_field f, int32_t value_index) {
    switch (f) {
        case cue_field::emotion:
            check(value_index >= 0 && value_index < EMOTION_COUNT, ECHAT_ERR_DOMAIN, "emotion index out of range");
            return emotion_first + value_index;
        case cue_field::gender:
            check(value_index >= 0 && value_index < GENDER_COUNT, ECHAT_ERR_DOMAIN, "gender index out of range");
            return gender_first + value_index;
        case cue_field::age:
            check(value_index >= 0 && value_index < AGE_COUNT, ECHAT_ERR_DOMAIN, "age index out of range");
            return age_first + value_index;
        case cue_field::event:
            check(value_index >= 0 && value_index < EVENT_COUNT, ECHAT_ERR_DOMAIN, "event index out of range");
            return event_first + value_index;
    }
    fail(ECHAT_ERR_DOMAIN, "bad cue field");
}

int32_t of_task(task_kind t) { return task_first + (int32_t) t; }
int32_t of_ack(cue_field f)  { return ack_first + (int32_t) f; }

int32_t of_tag(int32_t tag_index) {
    check(tag_index >= 0 && tag_index < tag_count, ECHAT_ERR_DOMAIN, "content tag index out of range");
    return tag_first + tag_index;
}

int32_t of_prompt(understand_mode m) { return prompt_first + (int32_t) m; }

bool is_content(int32_t s) { return s >= content_first && s < content_first + content_count; }

bool is_label(int32_t s) { return s >= emotion_first && s < event_first + EVENT_COUNT; }

bool is_label_of(cue_field f, int32_t s) {
    switch (f) {
        case cue_field::emotion: return s >= emotion_first && s < emotion_first + EMOTION_COUNT;
        case cue_field::gender:  return s >= gender_first && s < gender_first + GENDER_COUNT;
        case cue_field::age:     return s >= age_first && s < age_first + AGE_COUNT;
        case cue_field::event:   return s >= event_first && s < event_first + EVENT_COUNT;
    }
    return false;
}

int32_t label_value(cue_field f, int32_t s) {
    check(is_label_of(f, s), ECHAT_ERR_DOMAIN,
          std::string("symbol is not a ") + cue_field_name(f) + " label");
    switch (f) {
        case cue_field::emotion: return s - emotion_first;
        case cue_field::gender:  return s - gender_first;
        case cue_field::age:     return s - age_first;
        case cue_field::event:   return s - event_first;
    }
    return -1;
}

} // namespace sym

static std::array<std::string, sym::count> build_symbol_names() {
    std::array<std::string, sym::count> n;
    for (int32_t i = 0; i < sym::content_count; ++i) {
        n[sym::content_first + i] = std::string(1, (char) ('A' + i));
    }
    for (int32_t i = 0; i < EMOTION_COUNT; ++i) {
        n[sym::emotion_first + i] = EMOTION_NAMES[i];
    }
    for (int32_t i = 0; i < GENDER_COUNT; ++i) {
        n[sym::gender_first + i] = GENDER_NAMES[i];
    }
    for (int32_t i = 0; i < AGE_COUNT; ++i) {
        n[sym::age_first + i] = AGE_NAMES[i];
    }
    for (int32_t i = 0; i < EVENT_COUNT; ++i) {
        n[sym::event_first + i] = EVENT_NAMES[i];
    }
    n[sym::im_start]       = "im_start";
    n[sym::im_end]         = "im_end";
    n[sym::role_system]    = "system";
    n[sym::role_user]      = "user";
    n[sym::role_assistant] = "assistant";
    n[sym::newline]        = "nl";
    for (int32_t i = 0; i < TASK_KIND_COUNT; ++i) {
        n[sym::task_first + i] = std::string("task_") + TASK_NAMES[i];
    }
    for (int32_t i = 0; i < CUE_FIELD_COUNT; ++i) {
        n[sym::ack_first + i] = std::string("ack_") + cue_field_name((cue_field) i);
    }
    for (int32_t i = 0; i < sym::tag_count; ++i) {
        n[sym::tag_first + i] = "tag_" + std::to_string(i);
    }
    for (int32_t i = 0; i < UNDERSTAND_MODE_COUNT; ++i) {
        n[sym::prompt_first + i] = std::string("ask_") + UNDERSTAND_MODE_NAMES[i];
    }
    return n;
}

static const std::array<std::string, sym::count> & symbol_names() {
    static const auto names = build_symbol_names();
    return names;
}

const char * symbol_name(int32_t s) {
    check(s >= 0 && s < sym::count, ECHAT_ERR_DOMAIN,
          "symbol id out of range: " + std::to_string(s));
    return symbol_names()[s].c_str();
}

std::optional<int32_t> symbol_from_name(std::string_view name) {
    static const std::map<std::string, int32_t, std::less<>> index = [] {
        std::map<std::string, int32_t, std::less<>> m;
        const auto & names = symbol_names();
        for (int32_t i = 0; i < sym::count; ++i) {
            m.emplace(names[i], i);
        }
        return m;
    }();
    auto it = index.find(name);
    if (it == index.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string symbols_to_string(const std::vector<int32_t> & syms) {
    std::vector<std::string> parts;
    parts.reserve(syms.size());
    for (int32_t s : syms) {
        parts.push_back(symbol_name(s));
    }
    return join(parts, " ");
}

std::vector<int32_t> symbols_from_string(std::string_view text) {
    std::vector<int32_t> out;
    for (const auto & w : split_ws(text)) {
        auto s = symbol_from_name(w);
        if (!s) {
            fail(ECHAT_ERR_PARSE, "unknown symbol name: " + w);
        }
        out.push_back(*s);
    }
    return out;
}

} // namespace echat
