#include "echat-config.h"

#include "echat-common.h"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>

using json = nlohmann::ordered_json;

namespace echat {

// ---------------------------------------------------------------------------
// names

const char * preset_name(preset_kind p) {
    return p == preset_kind::paper ? "paper" : "desk";
}

std::optional<preset_kind> preset_from_name(std::string_view s) {
    if (s == "desk") {
        return preset_kind::desk;
    }
    if (s == "paper") {
        return preset_kind::paper;
    }
    return std::nullopt;
}

const char * judge_choice_name(judge_choice j) {
    return j == judge_choice::remote ? "remote" : "rule";
}

std::optional<judge_choice> judge_choice_from_name(std::string_view s) {
    if (s == "rule") {
        return judge_choice::rule;
    }
    if (s == "remote") {
        return judge_choice::remote;
    }
    return std::nullopt;
}

static const char * ablation_name(curriculum_ablation a) {
    switch (a) {
        case curriculum_ablation::none:     return "none";
        case curriculum_ablation::no_think: return "no_think";
        case curriculum_ablation::skip_s1:  return "skip_s1";
    }
    return "?";
}

static std::optional<curriculum_ablation> ablation_from_name(std::string_view s) {
    if (s == "none")     return curriculum_ablation::none;
    if (s == "no_think") return curriculum_ablation::no_think;
    if (s == "skip_s1")  return curriculum_ablation::skip_s1;
    return std::nullopt;
}

static const char * sampling_name(sampling_kind s) {
    switch (s) {
        case sampling_kind::greedy:      return "greedy";
        case sampling_kind::top_k:       return "top_k";
        case sampling_kind::temperature: return "temperature";
    }
    return "?";
}

static std::optional<sampling_kind> sampling_from_name(std::string_view s) {
    if (s == "greedy")      return sampling_kind::greedy;
    if (s == "top_k")       return sampling_kind::top_k;
    if (s == "temperature") return sampling_kind::temperature;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// presets

echat_config preset_config(preset_kind p) {
    echat_config cfg;
    cfg.optimizer = p == preset_kind::paper ? paper_optimizer() : desk_optimizer();
    return cfg;
}

// ---------------------------------------------------------------------------
// schema
//
// two levels: top-level scalars and named sections of scalars.  every key has
// a typed applier; anything else is rejected by full key path.

namespace {

using apply_fn = std::function<void(echat_config &, const json &, const std::string &)>;

void expect(bool ok, const std::string & keypath, const char * what) {
    check(ok, ECHAT_ERR_INVALID_CONFIG,
          "config: key \"" + keypath + "\" expects " + what);
}

template <typename Get> apply_fn k_i32(Get get) {
    return [get](echat_config & c, const json & v, const std::string & kp) {
        expect(v.is_number_integer(), kp, "an integer");
        get(c) = v.get<int32_t>();
    };
}

template <typename Get> apply_fn k_u64(Get get) {
    return [get](echat_config & c, const json & v, const std::string & kp) {
        expect(v.is_number_integer() && v.get<int64_t>() >= 0, kp, "a non-negative integer");
        get(c) = v.get<uint64_t>();
    };
}

template <typename Get> apply_fn k_f64(Get get) {
    return [get](echat_config & c, const json & v, const std::string & kp) {
        expect(v.is_number(), kp, "a number");
        get(c) = v.get<double>();
    };
}

template <typename Get> apply_fn k_f32(Get get) {
    return [get](echat_config & c, const json & v, const std::string & kp) {
        expect(v.is_number(), kp, "a number");
        get(c) = v.get<float>();
    };
}

template <typename Get> apply_fn k_bool(Get get) {
    return [get](echat_config & c, const json & v, const std::string & kp) {
        expect(v.is_boolean(), kp, "a boolean");
        get(c) = v.get<bool>();
    };
}

template <typename Get> apply_fn k_str(Get get) {
    return [get](echat_config & c, const json & v, const std::string & kp) {
        expect(v.is_string(), kp, "a string");
        get(c) = v.get<std::string>();
    };
}

// enum spelled as a string; `parse` returns nullopt on bad values
template <typename Get, typename Parse>
apply_fn k_enum(Get get, Parse parse, const char * choices) {
    return [get, parse, choices](echat_config & c, const json & v, const std::string & kp) {
        expect(v.is_string(), kp, choices);
        const auto parsed = parse(v.get<std::string>());
        expect(parsed.has_value(), kp, choices);
        get(c) = *parsed;
    };
}

using section_schema = std::map<std::string, apply_fn>;

const std::map<std::string, section_schema> & schema() {
    static const std::map<std::string, section_schema> s = [] {
        std::map<std::string, section_schema> m;

        m["model"] = {
            {"feature_channels",  k_i32([](echat_config & c) -> int32_t & { return c.model.feature_channels; })},
            {"enc_layers",        k_i32([](echat_config & c) -> int32_t & { return c.model.enc_layers; })},
            {"enc_dim",           k_i32([](echat_config & c) -> int32_t & { return c.model.enc_dim; })},
            {"enc_heads",         k_i32([](echat_config & c) -> int32_t & { return c.model.enc_heads; })},
            {"enc_ffn",           k_i32([](echat_config & c) -> int32_t & { return c.model.enc_ffn; })},
            {"adapter_tf_layers", k_i32([](echat_config & c) -> int32_t & { return c.model.adapter_tf_layers; })},
            {"adapter_dim",       k_i32([](echat_config & c) -> int32_t & { return c.model.adapter_dim; })},
            {"adapter_heads",     k_i32([](echat_config & c) -> int32_t & { return c.model.adapter_heads; })},
            {"adapter_ffn",       k_i32([](echat_config & c) -> int32_t & { return c.model.adapter_ffn; })},
            {"lm_layers",         k_i32([](echat_config & c) -> int32_t & { return c.model.lm_layers; })},
            {"lm_dim",            k_i32([](echat_config & c) -> int32_t & { return c.model.lm_dim; })},
            {"lm_heads",          k_i32([](echat_config & c) -> int32_t & { return c.model.lm_heads; })},
            {"lm_ffn",            k_i32([](echat_config & c) -> int32_t & { return c.model.lm_ffn; })},
            {"max_positions",     k_i32([](echat_config & c) -> int32_t & { return c.model.max_positions; })},
            {"speech_vocab",      k_i32([](echat_config & c) -> int32_t & { return c.model.speech_vocab; })},
            {"init_seed",         k_u64([](echat_config & c) -> uint64_t & { return c.model.init_seed; })},
        };

        m["corpus"] = {
            {"seed",               k_u64([](echat_config & c) -> uint64_t & { return c.corpus.seed; })},
            {"channels",           k_i32([](echat_config & c) -> int32_t & { return c.corpus.channels; })},
            {"frame_rate",         k_f32([](echat_config & c) -> float & { return c.corpus.frame_rate; })},
            {"frames_per_symbol",  k_i32([](echat_config & c) -> int32_t & { return c.corpus.frames_per_symbol; })},
            {"event_frames",       k_i32([](echat_config & c) -> int32_t & { return c.corpus.event_frames; })},
            {"symbol_amp",         k_f32([](echat_config & c) -> float & { return c.corpus.symbol_amp; })},
            {"cue_amp",            k_f32([](echat_config & c) -> float & { return c.corpus.cue_amp; })},
            {"event_amp",          k_f32([](echat_config & c) -> float & { return c.corpus.event_amp; })},
            {"noise_amp",          k_f32([](echat_config & c) -> float & { return c.corpus.noise_amp; })},
            {"scenario_count",     k_i32([](echat_config & c) -> int32_t & { return c.corpus.scenario_count; })},
            {"filler_min",         k_i32([](echat_config & c) -> int32_t & { return c.corpus.filler_min; })},
            {"filler_max",         k_i32([](echat_config & c) -> int32_t & { return c.corpus.filler_max; })},
            {"n_understanding",    k_i32([](echat_config & c) -> int32_t & { return c.corpus.n_understanding; })},
            {"n_tts",              k_i32([](echat_config & c) -> int32_t & { return c.corpus.n_tts; })},
            {"n_t2t",              k_i32([](echat_config & c) -> int32_t & { return c.corpus.n_t2t; })},
            {"n_s2s",              k_i32([](echat_config & c) -> int32_t & { return c.corpus.n_s2s; })},
            {"n_empathy",          k_i32([](echat_config & c) -> int32_t & { return c.corpus.n_empathy; })},
            {"emotion_share",      k_f32([](echat_config & c) -> float & { return c.corpus.emotion_share; })},
            {"multi_share",        k_f32([](echat_config & c) -> float & { return c.corpus.multi_share; })},
            {"event_present_rate", k_f32([](echat_config & c) -> float & { return c.corpus.event_present_rate; })},
        };

        m["codec"] = {
            {"codebook_size",   k_i32([](echat_config & c) -> int32_t & { return c.codec.codebook_size; })},
            {"max_iterations",  k_i32([](echat_config & c) -> int32_t & { return c.codec.max_iterations; })},
            {"max_fit_frames",  k_i32([](echat_config & c) -> int32_t & { return c.codec.max_fit_frames; })},
            {"smoothing_width", k_i32([](echat_config & c) -> int32_t & { return c.codec.smoothing_width; })},
            {"seed",            k_u64([](echat_config & c) -> uint64_t & { return c.codec.seed; })},
        };

        m["benchmark"] = {
            {"seed",             k_u64([](echat_config & c) -> uint64_t & { return c.benchmark.seed; })},
            {"entries_per_task", k_i32([](echat_config & c) -> int32_t & { return c.benchmark.entries_per_task; })},
        };

        m["optimizer"] = {
            {"lr",           k_f64([](echat_config & c) -> double & { return c.optimizer.lr; })},
            {"beta1",        k_f64([](echat_config & c) -> double & { return c.optimizer.beta1; })},
            {"beta2",        k_f64([](echat_config & c) -> double & { return c.optimizer.beta2; })},
            {"eps",          k_f64([](echat_config & c) -> double & { return c.optimizer.eps; })},
            {"weight_decay", k_f64([](echat_config & c) -> double & { return c.optimizer.weight_decay; })},
            {"clip_norm",    k_f64([](echat_config & c) -> double & { return c.optimizer.clip_norm; })},
            {"warmup_steps", k_i32([](echat_config & c) -> int32_t & { return c.optimizer.warmup_steps; })},
            {"accumulation", k_i32([](echat_config & c) -> int32_t & { return c.optimizer.accumulation; })},
            {"token_budget", k_i32([](echat_config & c) -> int32_t & { return c.optimizer.token_budget; })},
        };

        m["train"] = {
            {"ablation", k_enum([](echat_config & c) -> curriculum_ablation & { return c.train.ablation; },
                                ablation_from_name, "one of none, no_think, skip_s1")},
            {"warmup",   k_bool([](echat_config & c) -> bool & { return c.train.warmup; })},
        };

        m["eval"] = {
            {"streaming",         k_bool([](echat_config & c) -> bool & { return c.eval.streaming; })},
            {"max_text_tokens",   k_i32([](echat_config & c) -> int32_t & { return c.eval.max_text_tokens; })},
            {"max_speech_tokens", k_i32([](echat_config & c) -> int32_t & { return c.eval.max_speech_tokens; })},
            {"fail_threshold",    k_f64([](echat_config & c) -> double & { return c.eval.fail_threshold; })},
        };

        m["chat"] = {
            {"task",     k_enum([](echat_config & c) -> task_kind & { return c.chat.task; },
                                task_kind_from_name,
                                "one of s2s, s2s_think, s2s_interleave, s2s_interleave_think, "
                                "s2t, t2t, understand, tts")},
            {"sampling", k_enum([](echat_config & c) -> sampling_kind & { return c.chat.sampling; },
                                sampling_from_name, "one of greedy, top_k, temperature")},
            {"top_k",             k_i32([](echat_config & c) -> int32_t & { return c.chat.top_k; })},
            {"temperature",       k_f64([](echat_config & c) -> double & { return c.chat.temperature; })},
            {"max_text_tokens",   k_i32([](echat_config & c) -> int32_t & { return c.chat.max_text_tokens; })},
            {"max_speech_tokens", k_i32([](echat_config & c) -> int32_t & { return c.chat.max_speech_tokens; })},
        };

        m["judge"] = {
            {"kind",       k_enum([](echat_config & c) -> judge_choice & { return c.judge.kind; },
                                  judge_choice_from_name, "one of rule, remote")},
            {"endpoint",   k_str([](echat_config & c) -> std::string & { return c.judge.endpoint; })},
            {"timeout_ms", k_i32([](echat_config & c) -> int32_t & { return c.judge.timeout_ms; })},
            {"retries",    k_i32([](echat_config & c) -> int32_t & { return c.judge.retries; })},
            {"backoff_ms", k_i32([](echat_config & c) -> int32_t & { return c.judge.backoff_ms; })},
        };

        m["paths"] = {
            {"corpus",    k_str([](echat_config & c) -> std::string & { return c.paths.corpus; })},
            {"benchmark", k_str([](echat_config & c) -> std::string & { return c.paths.benchmark; })},
            {"train",     k_str([](echat_config & c) -> std::string & { return c.paths.train; })},
            {"eval",      k_str([](echat_config & c) -> std::string & { return c.paths.eval; })},
            {"chat",      k_str([](echat_config & c) -> std::string & { return c.paths.chat; })},
        };

        return m;
    }();
    return s;
}

} // namespace

// ---------------------------------------------------------------------------
// loading

static void apply_document(echat_config & cfg, const json & doc) {
    check(doc.is_object(), ECHAT_ERR_INVALID_CONFIG, "config: top level must be an object");
    for (const auto & [key, value] : doc.items()) {
        if (key == "seed") {
            k_u64([](echat_config & c) -> uint64_t & { return c.seed; })(cfg, value, "seed");
            continue;
        }
        const auto sect = schema().find(key);
        check(sect != schema().end(), ECHAT_ERR_INVALID_CONFIG,
              "config: unknown key \"" + key + "\"");
        expect(value.is_object(), key, "an object");
        for (const auto & [sub, v] : value.items()) {
            const std::string keypath = key + "." + sub;
            const auto        field   = sect->second.find(sub);
            check(field != sect->second.end(), ECHAT_ERR_INVALID_CONFIG,
                  "config: unknown key \"" + keypath + "\"");
            field->second(cfg, v, keypath);
        }
    }
}

echat_config config_from_json(const std::string & text, const echat_config & base) {
    echat_config cfg = base;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        return cfg;  // empty document: keep the base as-is
    }
    json doc;
    try {
        doc = json::parse(text);
    } catch (const std::exception & e) {
        fail(ECHAT_ERR_INVALID_CONFIG, std::string("config: parse error: ") + e.what());
    }
    apply_document(cfg, doc);
    validate_config(cfg);
    return cfg;
}

echat_config load_config(const std::string & path, preset_kind preset) {
    return config_from_json(read_text_file(path), preset_config(preset));
}

void validate_config(const echat_config & cfg) {
    validate_model_config(cfg.model);
    check(cfg.model.feature_channels == cfg.corpus.channels, ECHAT_ERR_INVALID_CONFIG,
          "config: model.feature_channels must equal corpus.channels");
    check(cfg.model.speech_vocab == cfg.codec.codebook_size, ECHAT_ERR_INVALID_CONFIG,
          "config: model.speech_vocab must equal codec.codebook_size");
    check(cfg.eval.fail_threshold >= 0.0 && cfg.eval.fail_threshold <= 1.0,
          ECHAT_ERR_INVALID_CONFIG, "config: eval.fail_threshold must be in [0, 1]");
    check(cfg.eval.max_text_tokens >= 1 && cfg.eval.max_speech_tokens >= 1,
          ECHAT_ERR_INVALID_CONFIG, "config: eval token limits must be positive");
    check(cfg.chat.max_text_tokens >= 1 && cfg.chat.max_speech_tokens >= 1,
          ECHAT_ERR_INVALID_CONFIG, "config: chat token limits must be positive");
    check(cfg.judge.timeout_ms > 0 && cfg.judge.retries >= 0 && cfg.judge.backoff_ms >= 0,
          ECHAT_ERR_INVALID_CONFIG, "config: bad judge transport settings");
    for (const std::string * p : {&cfg.paths.corpus, &cfg.paths.benchmark, &cfg.paths.train,
                                  &cfg.paths.eval, &cfg.paths.chat}) {
        check(!p->empty(), ECHAT_ERR_INVALID_CONFIG, "config: paths entries must be non-empty");
    }
}

// ---------------------------------------------------------------------------
// canonical echo

std::string config_to_json(const echat_config & c) {
    json j;
    j["seed"] = c.seed;

    json & m          = j["model"] = json::object();
    m["feature_channels"]  = c.model.feature_channels;
    m["enc_layers"]        = c.model.enc_layers;
    m["enc_dim"]           = c.model.enc_dim;
    m["enc_heads"]         = c.model.enc_heads;
    m["enc_ffn"]           = c.model.enc_ffn;
    m["adapter_tf_layers"] = c.model.adapter_tf_layers;
    m["adapter_dim"]       = c.model.adapter_dim;
    m["adapter_heads"]     = c.model.adapter_heads;
    m["adapter_ffn"]       = c.model.adapter_ffn;
    m["lm_layers"]         = c.model.lm_layers;
    m["lm_dim"]            = c.model.lm_dim;
    m["lm_heads"]          = c.model.lm_heads;
    m["lm_ffn"]            = c.model.lm_ffn;
    m["max_positions"]     = c.model.max_positions;
    m["speech_vocab"]      = c.model.speech_vocab;
    m["init_seed"]         = c.model.init_seed;

    json & co = j["corpus"] = json::object();
    co["seed"]               = c.corpus.seed;
    co["channels"]           = c.corpus.channels;
    co["frame_rate"]         = c.corpus.frame_rate;
    co["frames_per_symbol"]  = c.corpus.frames_per_symbol;
    co["event_frames"]       = c.corpus.event_frames;
    co["symbol_amp"]         = c.corpus.symbol_amp;
    co["cue_amp"]            = c.corpus.cue_amp;
    co["event_amp"]          = c.corpus.event_amp;
    co["noise_amp"]          = c.corpus.noise_amp;
    co["scenario_count"]     = c.corpus.scenario_count;
    co["filler_min"]         = c.corpus.filler_min;
    co["filler_max"]         = c.corpus.filler_max;
    co["n_understanding"]    = c.corpus.n_understanding;
    co["n_tts"]              = c.corpus.n_tts;
    co["n_t2t"]              = c.corpus.n_t2t;
    co["n_s2s"]              = c.corpus.n_s2s;
    co["n_empathy"]          = c.corpus.n_empathy;
    co["emotion_share"]      = c.corpus.emotion_share;
    co["multi_share"]        = c.corpus.multi_share;
    co["event_present_rate"] = c.corpus.event_present_rate;

    json & cd = j["codec"] = json::object();
    cd["codebook_size"]   = c.codec.codebook_size;
    cd["max_iterations"]  = c.codec.max_iterations;
    cd["max_fit_frames"]  = c.codec.max_fit_frames;
    cd["smoothing_width"] = c.codec.smoothing_width;
    cd["seed"]            = c.codec.seed;

    json & b = j["benchmark"] = json::object();
    b["seed"]             = c.benchmark.seed;
    b["entries_per_task"] = c.benchmark.entries_per_task;

    json & o = j["optimizer"] = json::object();
    o["lr"]           = c.optimizer.lr;
    o["beta1"]        = c.optimizer.beta1;
    o["beta2"]        = c.optimizer.beta2;
    o["eps"]          = c.optimizer.eps;
    o["weight_decay"] = c.optimizer.weight_decay;
    o["clip_norm"]    = c.optimizer.clip_norm;
    o["warmup_steps"] = c.optimizer.warmup_steps;
    o["accumulation"] = c.optimizer.accumulation;
    o["token_budget"] = c.optimizer.token_budget;

    json & t = j["train"] = json::object();
    t["ablation"] = ablation_name(c.train.ablation);
    t["warmup"]   = c.train.warmup;

    json & e = j["eval"] = json::object();
    e["streaming"]         = c.eval.streaming;
    e["max_text_tokens"]   = c.eval.max_text_tokens;
    e["max_speech_tokens"] = c.eval.max_speech_tokens;
    e["fail_threshold"]    = c.eval.fail_threshold;

    json & ch = j["chat"] = json::object();
    ch["task"]              = task_kind_name(c.chat.task);
    ch["sampling"]          = sampling_name(c.chat.sampling);
    ch["top_k"]             = c.chat.top_k;
    ch["temperature"]       = c.chat.temperature;
    ch["max_text_tokens"]   = c.chat.max_text_tokens;
    ch["max_speech_tokens"] = c.chat.max_speech_tokens;

    json & ju = j["judge"] = json::object();
    ju["kind"]       = judge_choice_name(c.judge.kind);
    ju["endpoint"]   = c.judge.endpoint;
    ju["timeout_ms"] = c.judge.timeout_ms;
    ju["retries"]    = c.judge.retries;
    ju["backoff_ms"] = c.judge.backoff_ms;

    json & p = j["paths"] = json::object();
    p["corpus"]    = c.paths.corpus;
    p["benchmark"] = c.paths.benchmark;
    p["train"]     = c.paths.train;
    p["eval"]      = c.paths.eval;
    p["chat"]      = c.paths.chat;

    return j.dump(2) + "\n";
}

uint64_t config_hash(const echat_config & cfg) { return hash_string(config_to_json(cfg)); }

} // namespace echat
