#include "echat-eval.h"

#include "echat-common.h"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

using json = nlohmann::ordered_json;

namespace echat {

// ---------------------------------------------------------------------------
// scores

const char * judge_dim_name(int32_t dim) {
    switch (dim) {
        case 0: return "cue_acknowledgement";
        case 1: return "content_relevance";
        case 2: return "response_emotion_fit";
    }
    return "?";
}

judge_score make_judge_score(int32_t cue_ack, int32_t content, int32_t emotion_fit) {
    for (int32_t v : {cue_ack, content, emotion_fit}) {
        check(v >= 1 && v <= 5, ECHAT_ERR_JUDGE,
              "judge score outside [1, 5]: " + std::to_string(v));
    }
    judge_score s;
    s.cue_acknowledgement  = cue_ack;
    s.content_relevance    = content;
    s.response_emotion_fit = emotion_fit;
    s.final = (cue_ack + content + emotion_fit) / 3.0;
    return s;
}

double rescale_score(double mean_1_5) { return (mean_1_5 - 1.0) / 4.0 * 100.0; }

static double dim_of(const judge_score & s, int32_t dim) {
    switch (dim) {
        case 0: return s.cue_acknowledgement;
        case 1: return s.content_relevance;
        case 2: return s.response_emotion_fit;
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// rule judge

static bool contains_symbol(const std::vector<int32_t> & text, int32_t id) {
    return std::find(text.begin(), text.end(), id) != text.end();
}

static std::optional<int32_t> scenario_of_query(const std::vector<int32_t> & query) {
    // template queries open with the scenario's two content letters
    if (query.empty() || !sym::is_content(query[0])) {
        return std::nullopt;
    }
    const int32_t scenario = query[0] / 2;
    return scenario < sym::tag_count ? std::optional<int32_t>(scenario) : std::nullopt;
}

judge_score rule_judge::score(const judge_request & req) {
    // acknowledgement: fraction of graded cues whose marker made the reply
    int32_t graded = 0, acked = 0;
    for (int32_t f = 0; f < CUE_FIELD_COUNT; ++f) {
        if (!req.cues.has((cue_field) f)) {
            continue;
        }
        ++graded;
        acked += contains_symbol(req.response_text, sym::of_ack((cue_field) f)) ? 1 : 0;
    }
    const double fraction = graded > 0 ? (double) acked / (double) graded : 1.0;
    const auto   cue_ack  = (int32_t) std::llround(1.0 + 4.0 * fraction);

    // relevance: the reply names the query's scenario tag
    const auto scenario = scenario_of_query(req.query_text);
    const int32_t content =
        scenario && contains_symbol(req.response_text, sym::of_tag(*scenario)) ? 5 : 1;

    // affect: event entries want the event named in text; everything else
    // wants the mapped delivery emotion on the response speech
    int32_t fit = 1;
    if (req.task == eval_task::event) {
        fit = req.cues.event &&
                      contains_symbol(req.response_text, sym::of_event(*req.cues.event))
                  ? 5
                  : 1;
    } else {
        fit = req.response_emotion == response_emotion_for(req.cues.emotion) ? 5 : 1;
    }
    return make_judge_score(cue_ack, content, fit);
}

// ---------------------------------------------------------------------------
// remote judge

std::string serialize_judge_request(const judge_request & req) {
    const auto field_line = [&](cue_field f) -> std::string {
        switch (f) {
            case cue_field::emotion:
                return req.cues.emotion ? emotion_name(*req.cues.emotion) : "unknown";
            case cue_field::gender:
                return req.cues.gender ? gender_name(*req.cues.gender) : "unknown";
            case cue_field::age:
                return req.cues.age ? age_name(*req.cues.age) : "unknown";
            case cue_field::event:
                return req.cues.event ? event_name(*req.cues.event) : "unknown";
        }
        return "unknown";
    };
    std::string out;
    out += std::string("task: ") + eval_task_name(req.task) + "\n";
    out += "query_text: " + symbols_to_string(req.query_text) + "\n";
    out += "cue_emotion: " + field_line(cue_field::emotion) + "\n";
    out += "cue_gender: " + field_line(cue_field::gender) + "\n";
    out += "cue_age: " + field_line(cue_field::age) + "\n";
    out += "cue_event: " + field_line(cue_field::event) + "\n";
    out += "response_text: " + symbols_to_string(req.response_text) + "\n";
    out += std::string("response_emotion: ") + emotion_name(req.response_emotion) + "\n";
    return out;
}

judge_score parse_judge_reply(const std::string & body) {
    // exactly three ASCII integers separated by single spaces (a trailing
    // newline is tolerated); anything else is malformed
    std::string s = body;
    if (!s.empty() && s.back() == '\n') {
        s.pop_back();
    }
    int32_t v[3]   = {0, 0, 0};
    size_t  pos    = 0;
    for (int32_t i = 0; i < 3; ++i) {
        if (i > 0) {
            if (pos >= s.size() || s[pos] != ' ') {
                fail(ECHAT_ERR_JUDGE, "malformed judge reply: " + body);
            }
            ++pos;
        }
        const size_t start = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            ++pos;
        }
        if (pos == start || pos - start > 2) {
            fail(ECHAT_ERR_JUDGE, "malformed judge reply: " + body);
        }
        v[i] = std::stoi(s.substr(start, pos - start));
    }
    if (pos != s.size()) {
        fail(ECHAT_ERR_JUDGE, "malformed judge reply: " + body);
    }
    return make_judge_score(v[0], v[1], v[2]);
}

remote_judge::remote_judge(const remote_judge_config & cfg_) : cfg(cfg_) {
    check(!cfg.endpoint.empty(), ECHAT_ERR_INVALID_CONFIG, "remote judge endpoint not set");
    check(cfg.retries >= 0 && cfg.timeout_ms > 0 && cfg.backoff_ms >= 0,
          ECHAT_ERR_INVALID_CONFIG, "bad remote judge settings");
}

// http://host:port[/path] -> (base, path)
static void split_endpoint(const std::string & url, std::string & base, std::string & path) {
    const size_t scheme = url.find("://");
    check(scheme != std::string::npos, ECHAT_ERR_INVALID_CONFIG,
          "judge endpoint needs a scheme: " + url);
    const size_t slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) {
        base = url;
        path = "/";
    } else {
        base = url.substr(0, slash);
        path = url.substr(slash);
    }
}

judge_score remote_judge::score(const judge_request & req) {
    std::string base, path;
    split_endpoint(cfg.endpoint, base, path);

    httplib::Client cli(base);
    cli.set_connection_timeout(0, cfg.timeout_ms * 1000);
    cli.set_read_timeout(0, cfg.timeout_ms * 1000);
    cli.set_write_timeout(0, cfg.timeout_ms * 1000);

    const std::string body = serialize_judge_request(req);

    for (int32_t attempt = 0;; ++attempt) {
        auto res = cli.Post(path, body, "text/plain");
        if (!res) {
            // transport failure: retriable with exponential backoff
            if (attempt >= cfg.retries) {
                fail(ECHAT_ERR_JUDGE,
                     "judge endpoint unreachable after " + std::to_string(attempt + 1) +
                         " attempts: " + cfg.endpoint);
            }
            transport_retries += 1;
            const auto delay = (int64_t) cfg.backoff_ms << attempt;
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            continue;
        }
        check(res->status == 200, ECHAT_ERR_JUDGE,
              "judge endpoint returned status " + std::to_string(res->status));
        return parse_judge_reply(res->body);
    }
}

// ---------------------------------------------------------------------------
// benchmark evaluation

eval_report run_echat_eval(const model & m, const speech_codec & codec,
                           const benchmark_data & bench, judge & j,
                           const eval_config & cfg) {
    check(!bench.entries.empty(), ECHAT_ERR_INVALID_CONFIG, "benchmark has no entries");
    check(cfg.fail_threshold >= 0.0 && cfg.fail_threshold <= 1.0, ECHAT_ERR_INVALID_CONFIG,
          "fail_threshold must be in [0, 1]");
    const corpus_generator reader(cfg.decode_cfg);

    eval_report rep;
    rep.judge_kind      = j.kind();
    rep.benchmark_hash  = bench.content_hash;
    rep.checkpoint_hash = cfg.checkpoint_hash;
    rep.seed            = cfg.seed;
    rep.total           = (int32_t) bench.entries.size();

    for (size_t i = 0; i < bench.entries.size(); ++i) {
        const benchmark_entry & e  = bench.entries[i];
        const feature_matrix    fm = bench.load_features(e);

        prompt_spec ps;
        ps.task = cfg.streaming ? task_kind::s2s_interleave_think : task_kind::s2s_think;

        generation_config gc;
        gc.streaming         = cfg.streaming;
        gc.think             = true;
        gc.max_text_tokens   = cfg.max_text_tokens;
        gc.max_speech_tokens = cfg.max_speech_tokens;
        gc.seed              = rng::derive(cfg.seed, "eval", (uint64_t) i).u64();

        const generation_result  gr  = generate(m, &fm, ps, gc);
        const assembled_response ar  = assemble_response(gr, codec, m.vocab);
        const emotion_kind       emo = ar.features.frames > 0
                                           ? reader.decode_cues(ar.features).emotion
                                           : emotion_kind::neutral;

        judge_request req;
        req.task             = e.task;
        req.query_text       = e.query_symbols;
        req.cues             = e.supervised;
        req.response_text    = ar.text_symbols;
        req.response_emotion = emo;

        entry_record rec;
        rec.index = (int32_t) i;
        rec.task  = e.task;
        rec.stop  = gr.stop;
        try {
            rec.score = j.score(req);
        } catch (const error & err) {
            if (err.st != ECHAT_ERR_JUDGE) {
                throw;
            }
            rec.failed  = true;
            rec.failure = err.what();
        }
        rep.entries.push_back(std::move(rec));
    }

    // per-task aggregation over scored entries
    std::array<double, EVAL_TASK_COUNT>                                final_sum{};
    std::array<std::array<double, JUDGE_DIM_COUNT>, EVAL_TASK_COUNT>   dim_sum{};
    for (const entry_record & rec : rep.entries) {
        auto & t = rep.tasks[(size_t) rec.task];
        t.task   = rec.task;
        if (rec.failed) {
            t.failed += 1;
            rep.failed += 1;
            continue;
        }
        t.scored += 1;
        rep.scored += 1;
        final_sum[(size_t) rec.task] += rec.score.final;
        for (int32_t d = 0; d < JUDGE_DIM_COUNT; ++d) {
            dim_sum[(size_t) rec.task][(size_t) d] += dim_of(rec.score, d);
        }
    }
    for (int32_t ti = 0; ti < EVAL_TASK_COUNT; ++ti) {
        auto & t = rep.tasks[(size_t) ti];
        t.task   = (eval_task) ti;
        if (t.scored > 0) {
            t.final_0_100 = rescale_score(final_sum[(size_t) ti] / t.scored);
            for (int32_t d = 0; d < JUDGE_DIM_COUNT; ++d) {
                t.dim_means[(size_t) d] = dim_sum[(size_t) ti][(size_t) d] / t.scored;
            }
        }
    }
    rep.valid = (double) rep.failed / (double) rep.total <= cfg.fail_threshold;

    rep.report_hash.clear();
    rep.report_hash = hash_hex(hash_string(report_to_json(rep)));
    return rep;
}

// ---------------------------------------------------------------------------
// report serialization

static json report_json_impl(const eval_report & rep, bool with_hash) {
    json j;
    j["judge"]           = rep.judge_kind;
    j["benchmark_hash"]  = hash_hex(rep.benchmark_hash);
    j["checkpoint_hash"] = rep.checkpoint_hash;
    j["seed"]            = rep.seed;
    j["valid"]           = rep.valid;
    j["total"]           = rep.total;
    j["scored"]          = rep.scored;
    j["failed"]          = rep.failed;

    json tasks = json::array();
    for (const task_summary & t : rep.tasks) {
        json tj;
        tj["task"]   = eval_task_name(t.task);
        tj["scored"] = t.scored;
        tj["failed"] = t.failed;
        tj["final"]  = t.final_0_100;
        json dims    = json::object();
        for (int32_t d = 0; d < JUDGE_DIM_COUNT; ++d) {
            dims[judge_dim_name(d)] = t.dim_means[(size_t) d];
        }
        tj["dimensions"] = std::move(dims);
        tasks.push_back(std::move(tj));
    }
    j["tasks"] = std::move(tasks);

    json entries = json::array();
    for (const entry_record & rec : rep.entries) {
        json ej;
        ej["index"] = rec.index;
        ej["task"]  = eval_task_name(rec.task);
        ej["stop"]  = stop_reason_name(rec.stop);
        if (rec.failed) {
            ej["failed"]  = true;
            ej["failure"] = rec.failure;
        } else {
            ej["scores"] = {rec.score.cue_acknowledgement, rec.score.content_relevance,
                            rec.score.response_emotion_fit};
            ej["final"]  = rec.score.final;
        }
        entries.push_back(std::move(ej));
    }
    j["entries"] = std::move(entries);
    if (with_hash) {
        j["report_hash"] = rep.report_hash;
    }
    return j;
}

std::string report_to_json(const eval_report & rep) {
    // the hash field itself stays out of the hashed content
    return report_json_impl(rep, !rep.report_hash.empty()).dump(2) + "\n";
}

std::string render_report_table(const eval_report & rep) {
    char line[256];

    std::string out;
    std::snprintf(line, sizeof(line), "%-22s", "");
    out += line;
    for (int32_t ti = 0; ti < EVAL_TASK_COUNT; ++ti) {
        std::string head = eval_task_name((eval_task) ti);
        head[0]          = (char) std::toupper((unsigned char) head[0]);
        std::snprintf(line, sizeof(line), "%9s", head.c_str());
        out += line;
    }
    out += "\n";

    std::snprintf(line, sizeof(line), "%-22s", "final (0-100)");
    out += line;
    for (const task_summary & t : rep.tasks) {
        std::snprintf(line, sizeof(line), "%9.1f", t.final_0_100);
        out += line;
    }
    out += "\n";

    for (int32_t d = 0; d < JUDGE_DIM_COUNT; ++d) {
        std::snprintf(line, sizeof(line), "%-22s", judge_dim_name(d));
        out += line;
        for (const task_summary & t : rep.tasks) {
            std::snprintf(line, sizeof(line), "%9.2f", t.dim_means[(size_t) d]);
            out += line;
        }
        out += "\n";
    }

    std::snprintf(line, sizeof(line), "%-22s", "scored / failed");
    out += line;
    for (const task_summary & t : rep.tasks) {
        char cell[32];
        std::snprintf(cell, sizeof(cell), "%d/%d", t.scored, t.failed);
        std::snprintf(line, sizeof(line), "%9s", cell);
        out += line;
    }
    out += "\n";
    return out;
}

// ---------------------------------------------------------------------------
// understanding metrics

double token_error_rate(const std::vector<int32_t> & hyp, const std::vector<int32_t> & ref) {
    check(!ref.empty(), ECHAT_ERR_INVALID_ARGUMENT, "token error rate needs a reference");
    const size_t n = hyp.size(), m = ref.size();
    std::vector<int64_t> prev(m + 1), cur(m + 1);
    for (size_t k = 0; k <= m; ++k) {
        prev[k] = (int64_t) k;
    }
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = (int64_t) i;
        for (size_t k = 1; k <= m; ++k) {
            const int64_t sub = prev[k - 1] + (hyp[i - 1] == ref[k - 1] ? 0 : 1);
            cur[k]            = std::min({prev[k] + 1, cur[k - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return (double) prev[m] / (double) m;
}

// -1 when the symbol is not a label of the field (unk, wrong field, ...)
static int32_t field_value_of(cue_field f, int32_t s) {
    return sym::is_label_of(f, s) ? sym::label_value(f, s) : -1;
}

static int32_t planted_value(const cue_spec & c, cue_field f) {
    switch (f) {
        case cue_field::emotion: return (int32_t) c.emotion;
        case cue_field::gender:  return (int32_t) c.gender;
        case cue_field::age:     return (int32_t) c.age;
        case cue_field::event:   return (int32_t) c.event;
    }
    return -1;
}

und_metrics understanding_metrics(const model & m, const benchmark_data & bench,
                                  const eval_config & cfg) {
    check(!bench.entries.empty(), ECHAT_ERR_INVALID_CONFIG, "benchmark has no entries");

    und_metrics out;
    out.entries = (int32_t) bench.entries.size();

    double ter_sum = 0.0;
    std::array<int64_t, CUE_FIELD_COUNT> asr_hit{};
    std::array<int64_t, CUE_FIELD_COUNT> think_hit{};

    for (size_t i = 0; i < bench.entries.size(); ++i) {
        const benchmark_entry & e  = bench.entries[i];
        const feature_matrix    fm = bench.load_features(e);

        // explicit path: transcript + all four labels
        {
            prompt_spec ps;
            ps.task  = task_kind::understand;
            ps.umode = understand_mode::full_label;

            generation_config gc;
            gc.max_text_tokens = cfg.max_text_tokens;
            gc.seed            = rng::derive(cfg.seed, "und-asr", (uint64_t) i).u64();

            const generation_result gr = generate(m, &fm, ps, gc);

            // the grammar emits content first, then one label per field
            std::vector<int32_t> transcript;
            std::vector<int32_t> labels;
            for (int32_t id : gr.text) {
                if (sym::is_content(id) && labels.empty()) {
                    transcript.push_back(id);
                } else {
                    labels.push_back(id);
                }
            }
            ter_sum += token_error_rate(transcript, e.query_symbols);
            for (int32_t f = 0; f < CUE_FIELD_COUNT; ++f) {
                if ((size_t) f < labels.size() &&
                    field_value_of((cue_field) f, labels[(size_t) f]) ==
                        planted_value(e.cues, (cue_field) f)) {
                    asr_hit[(size_t) f] += 1;
                }
            }
        }

        // reasoning path: labels recovered from the dialogue think span
        {
            prompt_spec ps;
            ps.task = task_kind::s2s_think;

            generation_config gc;
            gc.think             = true;
            gc.max_text_tokens   = cfg.max_text_tokens;
            gc.max_speech_tokens = cfg.max_speech_tokens;
            gc.seed              = rng::derive(cfg.seed, "und-think", (uint64_t) i).u64();

            const generation_result gr = generate(m, &fm, ps, gc);
            if (gr.think) {
                out.think_complete += 1;
                const cue_labels & l = gr.think->labels;
                const auto match = [&](cue_field f, auto opt) {
                    return opt && (int32_t) *opt == planted_value(e.cues, f);
                };
                think_hit[0] += match(cue_field::emotion, l.emotion) ? 1 : 0;
                think_hit[1] += match(cue_field::gender, l.gender) ? 1 : 0;
                think_hit[2] += match(cue_field::age, l.age) ? 1 : 0;
                think_hit[3] += match(cue_field::event, l.event) ? 1 : 0;
            }
        }
    }

    out.ter = ter_sum / out.entries;
    for (int32_t f = 0; f < CUE_FIELD_COUNT; ++f) {
        out.asr_p_accuracy[(size_t) f] = (double) asr_hit[(size_t) f] / out.entries;
        out.think_accuracy[(size_t) f] = (double) think_hit[(size_t) f] / out.entries;
        out.asr_p_mean += out.asr_p_accuracy[(size_t) f] / CUE_FIELD_COUNT;
        out.think_mean += out.think_accuracy[(size_t) f] / CUE_FIELD_COUNT;
    }
    return out;
}

} // namespace echat
