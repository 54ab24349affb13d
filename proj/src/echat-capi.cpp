// C boundary: translate between the extern-C surface in include/echat.h and
// the C++ library.  Exceptions stop here; the session stores the last message.

#include "echat.h"

#include "echat-run.h"

#include <cstdlib>
#include <cstring>
#include <string>

struct echat_session {
    echat::echat_config cfg;
    std::string         out_dir;
    std::string         last_error;
};

static const char * STATUS_NAMES[] = {
    "ok",           "invalid_argument", "invalid_config", "io",
    "format",       "domain",           "protocol",       "parse",
    "unterminated", "capacity",         "curriculum",     "disjointness",
    "judge",        "state",            "run_invalid",    "numeric",
    "internal",
};

extern "C" {

const char * echat_status_name(echat_status st) {
    if (st < 0 || st > ECHAT_ERR_INTERNAL) {
        return "unknown";
    }
    return STATUS_NAMES[st];
}

const char * echat_version(void) { return ECHAT_VERSION_STRING; }

} // extern "C"

static const char * str_or(const char * s, const char * fallback) {
    return s && *s ? s : fallback;
}

template <typename F> static echat_status wrap(echat_session * s, F && fn) {
    if (!s) {
        return ECHAT_ERR_INVALID_ARGUMENT;
    }
    s->last_error.clear();
    try {
        fn();
        return ECHAT_OK;
    } catch (const echat::error & e) {
        s->last_error = e.what();
        return e.st;
    } catch (const std::exception & e) {
        s->last_error = e.what();
        return ECHAT_ERR_INTERNAL;
    }
}

// run_* calls need somewhere to write
static void need_out_dir(const echat_session * s) {
    echat::check(!s->out_dir.empty(), ECHAT_ERR_STATE,
                 "session was opened without an out_dir");
}

// detail for a failed echat_session_open, where no session survives to carry
// it; echat_last_error(NULL) reads it back
static thread_local std::string g_open_error;

extern "C" {

echat_status echat_session_open(const echat_session_params * params, echat_session ** out) {
    if (!out) {
        return ECHAT_ERR_INVALID_ARGUMENT;
    }
    *out = nullptr;
    if (!params) {
        return ECHAT_ERR_INVALID_ARGUMENT;
    }

    auto s = new echat_session();
    const echat_status st = wrap(s, [&] {
        const std::string preset_name = str_or(params->preset, "desk");
        const auto        preset      = echat::preset_from_name(preset_name);
        echat::check(preset.has_value(), ECHAT_ERR_INVALID_CONFIG,
                     "unknown preset: " + preset_name + " (want desk or paper)");
        if (params->config_path && *params->config_path) {
            s->cfg = echat::load_config(params->config_path, *preset);
        } else {
            s->cfg = echat::preset_config(*preset);
        }
        if (params->seed >= 0) {
            s->cfg.seed = params->seed;
        }
        echat::validate_config(s->cfg);
        s->out_dir = str_or(params->out_dir, "");
    });
    if (st != ECHAT_OK) {
        g_open_error = s->last_error;
        delete s;
        return st;
    }
    *out = s;
    return ECHAT_OK;
}

void echat_session_close(echat_session * s) { delete s; }

const char * echat_last_error(const echat_session * s) {
    return s ? s->last_error.c_str() : g_open_error.c_str();
}

echat_status echat_run_data_gen(echat_session * s) {
    return wrap(s, [&] {
        need_out_dir(s);
        echat::run_data_gen(s->cfg, s->out_dir);
    });
}

echat_status echat_run_fit_codec(echat_session * s, const char * corpus_dir) {
    return wrap(s, [&] {
        need_out_dir(s);
        echat::run_fit_codec(s->cfg, str_or(corpus_dir, ""), s->out_dir);
    });
}

echat_status echat_run_train(echat_session * s, const char * corpus_dir, const char * stage,
                             const char * init_checkpoint) {
    return wrap(s, [&] {
        need_out_dir(s);
        echat::run_train(s->cfg, str_or(corpus_dir, ""), str_or(stage, ""),
                         str_or(init_checkpoint, ""), s->out_dir);
    });
}

echat_status echat_run_eval(echat_session * s, const char * checkpoint,
                            const char * benchmark_dir, const char * judge) {
    return wrap(s, [&] {
        need_out_dir(s);
        const std::string judge_name = str_or(judge, "rule");
        const auto        jc         = echat::judge_choice_from_name(judge_name);
        echat::check(jc.has_value(), ECHAT_ERR_INVALID_ARGUMENT,
                     "unknown judge: " + judge_name + " (want rule or remote)");
        echat::run_eval(s->cfg, str_or(checkpoint, ""), str_or(benchmark_dir, ""), *jc,
                        s->out_dir);
    });
}

echat_status echat_run_chat(echat_session * s, const char * checkpoint,
                            const char * features_path, const char * task,
                            const char * text_query) {
    return wrap(s, [&] {
        need_out_dir(s);
        echat::run_chat(s->cfg, str_or(checkpoint, ""), str_or(features_path, ""),
                        str_or(task, ""), str_or(text_query, ""), s->out_dir);
    });
}

echat_status echat_inspect(echat_session * s, const char * path, char ** out_text) {
    if (out_text) {
        *out_text = nullptr;
    }
    return wrap(s, [&] {
        echat::check(out_text != nullptr, ECHAT_ERR_INVALID_ARGUMENT,
                     "inspect needs an output pointer");
        echat::check(path && *path, ECHAT_ERR_INVALID_ARGUMENT, "inspect needs a path");
        const std::string text = echat::inspect_artifact(path);
        char *            buf  = (char *) std::malloc(text.size() + 1);
        echat::check(buf != nullptr, ECHAT_ERR_INTERNAL, "out of memory");
        std::memcpy(buf, text.c_str(), text.size() + 1);
        *out_text = buf;
    });
}

void echat_string_free(char * p) { std::free(p); }

} // extern "C"
