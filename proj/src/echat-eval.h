#pragma once

// dialogue evaluation: per-task benchmark runs scored by a judge (a
// deterministic rule judge or a remote HTTP scorer), response-emotion
// extraction from assembled speech, and understanding / reasoning-accuracy
// metrics.

#include "echat-codec.h"
#include "echat-corpus.h"
#include "echat-infer.h"
#include "echat-model.h"

#include <array>
#include <string>
#include <vector>

namespace echat {

// ---------------------------------------------------------------------------
// judge interface
//
// the judge sees the query text, the labeled cue fields the entry grades
// (absent = ungraded), the response text, and the emotion carried by the
// response speech; it returns three 1-5 dimension scores.

struct judge_request {
    eval_task            task = eval_task::emotion;
    std::vector<int32_t> query_text;
    cue_labels           cues;              // graded fields only
    std::vector<int32_t> response_text;     // symbols, eot stripped
    emotion_kind         response_emotion = emotion_kind::neutral;
};

struct judge_score {
    int32_t cue_acknowledgement  = 1;
    int32_t content_relevance    = 1;
    int32_t response_emotion_fit = 1;
    double  final                = 1.0;  // arithmetic mean of the three

    bool operator==(const judge_score &) const = default;
};

constexpr int32_t JUDGE_DIM_COUNT = 3;
const char * judge_dim_name(int32_t dim);

// mean(dims) with range validation
judge_score make_judge_score(int32_t cue_ack, int32_t content, int32_t emotion_fit);

// order-preserving map of a 1-5 mean onto 0-100 (1 -> 0, 5 -> 100)
double rescale_score(double mean_1_5);

struct judge {
    virtual ~judge() = default;

    // throws a judge error on failure; the harness records failed entries
    virtual judge_score  score(const judge_request & req) = 0;
    virtual const char * kind() const                     = 0;
};

// ---------------------------------------------------------------------------
// rule judge: a deterministic rubric the template generator can satisfy
// exactly, so a perfect score is well-defined
//
//   cue_acknowledgement:  1 + 4 * (fraction of graded cues whose
//                         acknowledgement marker appears in the response)
//   content_relevance:    5 if the response names the query's scenario tag,
//                         else 1
//   response_emotion_fit: 5 if the response emotion equals the affect-map
//                         output for the graded user emotion, else 1; the
//                         event task instead requires the graded event's
//                         label word in the response text

struct rule_judge final : judge {
    judge_score  score(const judge_request & req) override;
    const char * kind() const override { return "rule"; }
};

// ---------------------------------------------------------------------------
// remote judge: HTTP POST of a "key: value" text document
//
// body lines: task, query_text, cue_emotion, cue_gender, cue_age, cue_event,
// response_text, response_emotion (symbols spelled as space-separated names,
// ungraded cues as "unknown").  reply: exactly three ASCII integers in [1,5]
// separated by single spaces.  transport failures retry with exponential
// backoff; malformed or out-of-range replies fail immediately.

struct remote_judge_config {
    std::string endpoint;            // http://host:port[/path]
    int32_t     timeout_ms = 2000;   // connect + read
    int32_t     retries    = 3;      // additional attempts after the first
    int32_t     backoff_ms = 50;     // first retry delay, doubling
};

std::string serialize_judge_request(const judge_request & req);
judge_score parse_judge_reply(const std::string & body);

struct remote_judge final : judge {
    remote_judge_config cfg;
    int64_t             transport_retries = 0;  // across all score() calls

    explicit remote_judge(const remote_judge_config & cfg_);

    judge_score  score(const judge_request & req) override;
    const char * kind() const override { return "remote"; }
};

// ---------------------------------------------------------------------------
// benchmark evaluation

struct eval_config {
    bool     streaming        = false;  // interleaved response decoding
    int32_t  max_text_tokens  = 48;
    int32_t  max_speech_tokens = 320;
    uint64_t seed             = 1;

    // band geometry for reading the response emotion off assembled speech
    corpus_config decode_cfg;

    // recorded verbatim in the report (the caller knows the file)
    std::string checkpoint_hash;

    double fail_threshold = 0.10;  // failed fraction above this voids the run
};

struct entry_record {
    int32_t     index = 0;          // within the benchmark entry list
    eval_task   task  = eval_task::emotion;
    bool        failed = false;
    std::string failure;            // judge error message when failed
    judge_score score;              // valid when !failed
    stop_reason stop = stop_reason::limit;
};

struct task_summary {
    eval_task task   = eval_task::emotion;
    int32_t   scored = 0;
    int32_t   failed = 0;
    double    final_0_100 = 0.0;                     // mean final, rescaled
    std::array<double, JUDGE_DIM_COUNT> dim_means{};  // 1-5 scale
};

struct eval_report {
    std::string judge_kind;
    uint64_t    benchmark_hash = 0;
    std::string checkpoint_hash;
    uint64_t    seed  = 0;
    bool        valid = true;   // false once failures exceed the threshold

    int32_t total  = 0;
    int32_t scored = 0;
    int32_t failed = 0;

    std::vector<entry_record>                 entries;
    std::array<task_summary, EVAL_TASK_COUNT> tasks{};

    std::string report_hash;  // content hash of everything above
};

// runs the model over every benchmark entry (reasoning on), reads the
// response emotion from the assembled speech, scores via `j`, and aggregates
// per task.  judge failures mark entries failed and are excluded from means.
eval_report run_echat_eval(const model & m, const speech_codec & codec,
                           const benchmark_data & bench, judge & j,
                           const eval_config & cfg);

// canonical serialization (hash input) and the fixed-layout summary table
// (columns: Emotion, Age, Gender, Event, Multi)
std::string report_to_json(const eval_report & rep);
std::string render_report_table(const eval_report & rep);

// ---------------------------------------------------------------------------
// understanding metrics
//
// grades the explicit understanding path (transcript + all labels) and the
// labels recovered from the reasoning span of dialogue generation against
// the planted speaker state.

struct und_metrics {
    int32_t entries = 0;

    double ter = 0.0;  // transcript token error rate, explicit decoding

    std::array<double, CUE_FIELD_COUNT> asr_p_accuracy{};  // explicit labels
    std::array<double, CUE_FIELD_COUNT> think_accuracy{};  // reasoning-span labels
    double asr_p_mean = 0.0;
    double think_mean = 0.0;

    int32_t think_complete = 0;  // entries whose reasoning span closed
};

// hypothesis-vs-reference token error rate: edit distance / reference length
double token_error_rate(const std::vector<int32_t> & hyp, const std::vector<int32_t> & ref);

und_metrics understanding_metrics(const model & m, const benchmark_data & bench,
                                  const eval_config & cfg);

} // namespace echat
