#ifndef ECHAT_H
#define ECHAT_H

// C interface for the echat library: an end-to-end, self-verifying testbed for
// an empathetic speech-to-speech dialogue pipeline (listen -> think -> speak).
//
// All entry points are exported with C linkage and operate on an opaque
// session handle.  Calls return echat_status; ECHAT_OK means success and
// anything else is an error whose human-readable detail can be fetched with
// echat_last_error().

#include <stdint.h>
#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifdef _WIN32
#    define ECHAT_API __declspec(dllexport)
#else
#    define ECHAT_API __attribute__((visibility("default")))
#endif

typedef enum echat_status {
    ECHAT_OK                = 0,
    // caller errors (CLI exit code 1)
    ECHAT_ERR_INVALID_ARGUMENT = 1,
    ECHAT_ERR_INVALID_CONFIG   = 2,
    ECHAT_ERR_IO               = 3,
    ECHAT_ERR_FORMAT           = 4,  // malformed file / checkpoint / hash mismatch
    ECHAT_ERR_DOMAIN           = 5,  // value outside its documented domain
    ECHAT_ERR_PROTOCOL         = 6,  // token stream violates the interleave protocol
    ECHAT_ERR_PARSE            = 7,  // malformed reasoning span or structured record
    ECHAT_ERR_UNTERMINATED     = 8,  // reasoning span never closed
    ECHAT_ERR_CAPACITY         = 9,  // sequence exceeds configured maximum
    ECHAT_ERR_CURRICULUM       = 10, // stage ordering / eligibility violation
    ECHAT_ERR_DISJOINTNESS     = 11, // benchmark seeds overlap training seeds
    ECHAT_ERR_JUDGE            = 12, // judge endpoint unreachable / malformed reply
    ECHAT_ERR_STATE            = 13, // operation not valid in current session state
    // invalid run (CLI exit code 3): produced outputs failed a validity gate
    ECHAT_ERR_RUN_INVALID      = 14,
    // internal errors (CLI exit code 2)
    ECHAT_ERR_NUMERIC          = 15, // non-finite loss / gradient during training
    ECHAT_ERR_INTERNAL         = 16,
} echat_status;

// Stable name for a status code ("ok", "invalid_argument", ...).
ECHAT_API const char * echat_status_name(echat_status st);

// Library version string.
ECHAT_API const char * echat_version(void);

typedef struct echat_session echat_session;

typedef struct echat_session_params {
    const char * config_path; // optional JSON config file (NULL = preset defaults)
    const char * preset;      // "desk" (default) or "paper"
    const char * out_dir;     // directory for run outputs (required by run_* calls)
    int64_t      seed;        // master seed; < 0 means "use config/preset value"
} echat_session_params;

// Create a session: loads + validates configuration (file > preset > defaults).
// On success *out owns the session; release with echat_session_close.
ECHAT_API echat_status echat_session_open(const echat_session_params * params,
                                          echat_session ** out);
ECHAT_API void echat_session_close(echat_session * s);

// Last error detail for this session (valid until the next call on the session).
ECHAT_API const char * echat_last_error(const echat_session * s);

// Generate the synthetic dialogue corpus + evaluation benchmark under out_dir,
// fitting the speech-token codec on the way (corpus/, benchmark/, codec file,
// manifests).
ECHAT_API echat_status echat_run_data_gen(echat_session * s);

// Fit only the codec from a corpus directory's audio features.
ECHAT_API echat_status echat_run_fit_codec(echat_session * s, const char * corpus_dir);

// Run the staged training curriculum on a generated corpus.
// stage: NULL/"" = full curriculum, otherwise a single stage name
// ("s1_align", "s1_asr_p", "s1_only_p", "s1_full_label", "s2_tts", "s2_s2s",
//  "s3_think", "s3_distill").  init_checkpoint may seed the model state
// (required when running a later stage in isolation).
ECHAT_API echat_status echat_run_train(echat_session * s,
                                       const char * corpus_dir,
                                       const char * stage,
                                       const char * init_checkpoint);

// Evaluate a checkpoint on the generated benchmark with the paralinguistic
// judge.  judge: "rule" (deterministic, default) or "remote" (HTTP endpoint
// from config / ECHAT_JUDGE_URL).  Writes report JSON + table under out_dir.
ECHAT_API echat_status echat_run_eval(echat_session * s,
                                      const char * checkpoint,
                                      const char * benchmark_dir,
                                      const char * judge);

// One dialogue turn: read a query feature file, generate the spoken response,
// write response text, tokens and synthesized features under out_dir.
// task: "s2s", "s2s_think", "s2t", "t2t", "understand" (NULL = config default).
// text_query: symbol string for text-input tasks (NULL otherwise).
ECHAT_API echat_status echat_run_chat(echat_session * s,
                                      const char * checkpoint,
                                      const char * features_path,
                                      const char * task,
                                      const char * text_query);

// Describe an artifact (checkpoint, codec, corpus/benchmark manifest, feature
// file, config) as human-readable text.  *out_text is heap-allocated; free
// with echat_string_free.
ECHAT_API echat_status echat_inspect(echat_session * s,
                                     const char * path,
                                     char ** out_text);

ECHAT_API void echat_string_free(char * p);

#ifdef __cplusplus
}
#endif

#endif // ECHAT_H
