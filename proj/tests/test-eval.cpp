#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "echat-common.h"
#include "echat-corpus.h"
#include "echat-eval.h"
#include "echat-model.h"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

using namespace echat;

static std::string tmp_dir(const std::string & name) {
    auto dir = std::filesystem::temp_directory_path() / "echat-test-eval" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

template <typename F>
static echat_status thrown_status(F && f) {
    try {
        f();
    } catch (const error & e) {
        return e.st;
    }
    return ECHAT_OK;
}

// ---------------------------------------------------------------------------
// fixtures

static model_config micro_model_config() {
    model_config cfg     = gradcheck_config();
    cfg.feature_channels = 80;  // the corpus band geometry is fixed
    cfg.max_positions    = 160;
    return cfg;
}

static corpus_config micro_corpus_config() {
    corpus_config c;
    c.seed            = 21;
    c.n_understanding = 24;
    c.n_tts           = 12;
    c.n_t2t           = 10;
    c.n_s2s           = 10;
    c.n_empathy       = 12;
    return c;
}

struct eval_fixture {
    speech_codec   codec;
    benchmark_data bench;
    model          m;
};

static const eval_fixture & fixture() {
    static eval_fixture f = [] {
        eval_fixture fx;

        const auto   cdir = tmp_dir("corpus");
        codec_config cc;
        cc.codebook_size = micro_model_config().speech_vocab;
        const auto built = build_corpus(cdir, micro_corpus_config(), cc);
        fx.codec         = built.codec;

        const auto       bdir = tmp_dir("bench");
        benchmark_config bc;
        bc.seed             = 77;
        bc.entries_per_task = 4;
        build_benchmark(bdir, bc, micro_corpus_config(), built.manifest_path);
        fx.bench = load_benchmark(bdir);

        net_init(fx.m, micro_model_config());
        return fx;
    }();
    return f;
}

static eval_config micro_eval_config() {
    eval_config c;
    c.max_text_tokens   = 24;
    c.max_speech_tokens = 48;
    c.seed              = 9;
    c.decode_cfg        = micro_corpus_config();
    c.checkpoint_hash   = "feedbee5";
    return c;
}

// a judge that fails chosen calls (entries are visited in order)
struct flaky_judge final : judge {
    int32_t calls      = 0;
    int32_t fail_every = 0;  // every n-th call throws; 0 = never

    judge_score score(const judge_request &) override {
        const int32_t k = calls++;
        if (fail_every > 0 && k % fail_every == 0) {
            fail(ECHAT_ERR_JUDGE, "scripted failure on call " + std::to_string(k));
        }
        return make_judge_score(5, 5, 5);
    }
    const char * kind() const override { return "flaky"; }
};

// ---------------------------------------------------------------------------
// scores and rescaling

TEST_CASE("judge scores validate range and average exactly") {
    const judge_score s = make_judge_score(3, 4, 5);
    CHECK(s.cue_acknowledgement == 3);
    CHECK(s.content_relevance == 4);
    CHECK(s.response_emotion_fit == 5);
    CHECK(s.final == (3 + 4 + 5) / 3.0);

    CHECK(thrown_status([] { make_judge_score(0, 4, 5); }) == ECHAT_ERR_JUDGE);
    CHECK(thrown_status([] { make_judge_score(3, 6, 5); }) == ECHAT_ERR_JUDGE);
    CHECK(thrown_status([] { make_judge_score(3, 4, -1); }) == ECHAT_ERR_JUDGE);

    CHECK(judge_dim_name(0) == std::string("cue_acknowledgement"));
    CHECK(judge_dim_name(1) == std::string("content_relevance"));
    CHECK(judge_dim_name(2) == std::string("response_emotion_fit"));
}

TEST_CASE("rescaling maps the endpoints exactly and preserves order") {
    CHECK(rescale_score(1.0) == 0.0);
    CHECK(rescale_score(5.0) == 100.0);
    CHECK(rescale_score(3.0) == 50.0);
    double prev = -1.0;
    for (int32_t i = 0; i <= 16; ++i) {
        const double v = rescale_score(1.0 + i * 0.25);
        CHECK(v > prev);
        prev = v;
    }
}

// ---------------------------------------------------------------------------
// rule judge

static judge_request base_request(int32_t scenario) {
    judge_request req;
    req.query_text = {scenario * 2, scenario * 2 + 1, 40, 41};
    return req;
}

TEST_CASE("rule judge scores the oracle response perfectly") {
    const corpus_generator g(micro_corpus_config());
    rule_judge             j;

    judge_request req = base_request(3);
    req.task          = eval_task::emotion;
    req.cues.emotion  = emotion_kind::sad;
    req.response_text = g.generate_response(3, req.cues);
    req.response_emotion = response_emotion_for(req.cues.emotion);

    const judge_score s = j.score(req);
    CHECK(s == make_judge_score(5, 5, 5));
    CHECK(s.final == 5.0);
}

TEST_CASE("rule judge counts partial acknowledgement linearly") {
    rule_judge    j;
    judge_request req = base_request(2);
    req.task          = eval_task::multi;
    req.cues          = cue_labels::all_of(
        {emotion_kind::happy, gender_kind::female, age_kind::old, event_kind::laugh});

    // acknowledge 2 of 4 cues, name the right scenario, right delivery
    req.response_text = {sym::of_ack(cue_field::emotion), sym::of_emotion(emotion_kind::happy),
                         sym::of_ack(cue_field::gender), sym::of_gender(gender_kind::female),
                         sym::of_tag(2)};
    req.response_emotion = response_emotion_for(req.cues.emotion);

    const judge_score s = j.score(req);
    CHECK(s.cue_acknowledgement == 3);  // 1 + 4 * (2/4)
    CHECK(s.content_relevance == 5);
    CHECK(s.response_emotion_fit == 5);
}

TEST_CASE("rule judge floors wrong delivery emotion and missing content") {
    rule_judge    j;
    judge_request req = base_request(1);
    req.task          = eval_task::emotion;
    req.cues.emotion  = emotion_kind::anger;
    req.response_text = {sym::of_ack(cue_field::emotion), sym::of_emotion(emotion_kind::anger)};
    req.response_emotion = emotion_kind::happy;  // map says sorry

    const judge_score s = j.score(req);
    CHECK(s.cue_acknowledgement == 5);
    CHECK(s.content_relevance == 1);    // no scenario tag in the reply
    CHECK(s.response_emotion_fit == 1); // wrong delivery
}

TEST_CASE("rule judge grades the event task by the named event") {
    rule_judge    j;
    judge_request req = base_request(0);
    req.task          = eval_task::event;
    req.cues.event    = event_kind::cough;

    req.response_text    = {sym::of_ack(cue_field::event), sym::of_tag(0)};
    req.response_emotion = emotion_kind::neutral;
    CHECK(j.score(req).response_emotion_fit == 1);  // event never named

    req.response_text.push_back(sym::of_event(event_kind::cough));
    CHECK(j.score(req).response_emotion_fit == 5);
}

TEST_CASE("rule judge uses neutral delivery when emotion is ungraded") {
    const corpus_generator g(micro_corpus_config());
    rule_judge             j;

    judge_request req = base_request(4);
    req.task          = eval_task::age;
    req.cues.age      = age_kind::old;
    req.response_text = g.generate_response(4, req.cues);

    req.response_emotion = emotion_kind::neutral;
    CHECK(j.score(req) == make_judge_score(5, 5, 5));

    req.response_emotion = emotion_kind::happy;
    CHECK(j.score(req).response_emotion_fit == 1);
}

TEST_CASE("template responses score perfectly across the whole benchmark") {
    const corpus_generator g(micro_corpus_config());
    rule_judge             j;

    for (const benchmark_entry & e : fixture().bench.entries) {
        judge_request req;
        req.task             = e.task;
        req.query_text       = e.query_symbols;
        req.cues             = e.supervised;
        req.response_text    = g.generate_response(e.scenario, e.supervised);
        req.response_emotion = response_emotion_for(e.supervised.emotion);

        const judge_score s = j.score(req);
        CHECK(s.final == 5.0);
        CHECK(rescale_score(s.final) == 100.0);
    }
}

// ---------------------------------------------------------------------------
// remote judge wire format

TEST_CASE("judge requests serialize to the pinned document") {
    judge_request req;
    req.task             = eval_task::multi;
    req.query_text       = {0, 1};
    req.cues.emotion     = emotion_kind::happy;
    req.cues.event       = event_kind::laugh;
    req.response_text    = {0};
    req.response_emotion = emotion_kind::sorry;

    CHECK(serialize_judge_request(req) == "task: multi\n"
                                          "query_text: A B\n"
                                          "cue_emotion: happy\n"
                                          "cue_gender: unknown\n"
                                          "cue_age: unknown\n"
                                          "cue_event: laugh\n"
                                          "response_text: A\n"
                                          "response_emotion: sorry\n");
}

TEST_CASE("judge replies parse strictly") {
    const judge_score s = parse_judge_reply("3 4 5");
    CHECK(s == make_judge_score(3, 4, 5));
    CHECK(s.final == 4.0);
    CHECK(parse_judge_reply("1 1 1\n") == make_judge_score(1, 1, 1));

    for (const char * bad : {"", "7", "3 4", "3 4 5 6", "3  4 5", "a 4 5", "0 4 5",
                             "6 4 5", "3 4 5 ", "10 4 5", " 3 4 5"}) {
        CAPTURE(bad);
        CHECK(thrown_status([&] { parse_judge_reply(bad); }) == ECHAT_ERR_JUDGE);
    }
}

// ---------------------------------------------------------------------------
// remote judge transport

namespace {

struct stub_server {
    httplib::Server svr;
    int32_t         port = 0;
    std::thread     th;

    explicit stub_server(const httplib::Server::Handler & handler) {
        svr.Post("/judge", handler);
        port = svr.bind_to_any_port("127.0.0.1");
        th   = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }
    ~stub_server() {
        svr.stop();
        th.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port) + "/judge"; }
};

} // namespace

TEST_CASE("remote judge round-trips request and reply") {
    std::string seen;
    stub_server srv([&](const httplib::Request & q, httplib::Response & res) {
        seen = q.body;
        res.set_content("3 4 5", "text/plain");
    });

    remote_judge_config cfg;
    cfg.endpoint = srv.endpoint();
    remote_judge j(cfg);
    CHECK(j.kind() == std::string("remote"));

    judge_request req;
    req.task          = eval_task::emotion;
    req.query_text    = {2, 3};
    req.cues.emotion  = emotion_kind::fear;
    req.response_text = {4};

    CHECK(j.score(req) == make_judge_score(3, 4, 5));
    CHECK(seen == serialize_judge_request(req));
    CHECK(j.transport_retries == 0);
}

TEST_CASE("remote judge retries timeouts with backoff and then succeeds") {
    std::atomic<int32_t> calls{0};
    stub_server srv([&](const httplib::Request &, httplib::Response & res) {
        if (calls++ < 2) {
            std::this_thread::sleep_for(std::chrono::milliseconds(600));
        }
        res.set_content("2 3 4", "text/plain");
    });

    remote_judge_config cfg;
    cfg.endpoint   = srv.endpoint();
    cfg.timeout_ms = 200;
    cfg.retries    = 3;
    cfg.backoff_ms = 10;
    remote_judge j(cfg);

    CHECK(j.score({}) == make_judge_score(2, 3, 4));
    CHECK(j.transport_retries == 2);
}

TEST_CASE("remote judge gives up after exhausting retries") {
    remote_judge_config cfg;
    cfg.endpoint   = "http://127.0.0.1:9";  // nothing listens here
    cfg.timeout_ms = 100;
    cfg.retries    = 2;
    cfg.backoff_ms = 1;
    remote_judge j(cfg);

    CHECK(thrown_status([&] { j.score({}); }) == ECHAT_ERR_JUDGE);
    CHECK(j.transport_retries == 2);
}

TEST_CASE("malformed replies and error statuses are non-retriable") {
    {
        stub_server srv([](const httplib::Request &, httplib::Response & res) {
            res.set_content("7", "text/plain");
        });
        remote_judge_config cfg;
        cfg.endpoint = srv.endpoint();
        remote_judge j(cfg);
        CHECK(thrown_status([&] { j.score({}); }) == ECHAT_ERR_JUDGE);
        CHECK(j.transport_retries == 0);
    }
    {
        stub_server srv([](const httplib::Request &, httplib::Response & res) {
            res.status = 500;
        });
        remote_judge_config cfg;
        cfg.endpoint = srv.endpoint();
        remote_judge j(cfg);
        CHECK(thrown_status([&] { j.score({}); }) == ECHAT_ERR_JUDGE);
        CHECK(j.transport_retries == 0);
    }
}

TEST_CASE("remote judge validates its configuration") {
    CHECK(thrown_status([] { remote_judge j({}); }) == ECHAT_ERR_INVALID_CONFIG);

    remote_judge_config cfg;
    cfg.endpoint = "localhost:1234";  // no scheme
    remote_judge j(cfg);
    CHECK(thrown_status([&] { j.score({}); }) == ECHAT_ERR_INVALID_CONFIG);
}

// ---------------------------------------------------------------------------
// benchmark evaluation

TEST_CASE("benchmark evaluation reconciles counts and reproduces bit for bit") {
    const eval_fixture & fx = fixture();
    rule_judge           j;

    const eval_report rep = run_echat_eval(fx.m, fx.codec, fx.bench, j, micro_eval_config());

    CHECK(rep.judge_kind == "rule");
    CHECK(rep.benchmark_hash == fx.bench.content_hash);
    CHECK(rep.checkpoint_hash == "feedbee5");
    CHECK(rep.total == (int32_t) fx.bench.entries.size());
    CHECK(rep.total == 20);
    CHECK(rep.scored + rep.failed == rep.total);
    CHECK(rep.failed == 0);  // the rule judge never fails
    CHECK(rep.valid);

    for (int32_t ti = 0; ti < EVAL_TASK_COUNT; ++ti) {
        const task_summary & t = rep.tasks[(size_t) ti];
        CHECK(t.task == (eval_task) ti);
        CHECK(t.scored == 4);
        CHECK(t.failed == 0);
        CHECK(t.final_0_100 >= 0.0);
        CHECK(t.final_0_100 <= 100.0);
    }
    for (size_t i = 0; i < rep.entries.size(); ++i) {
        CHECK(rep.entries[i].index == (int32_t) i);
        CHECK(rep.entries[i].task == fx.bench.entries[i].task);
    }

    // the recorded hash covers the hash-free serialization
    eval_report unhashed = rep;
    unhashed.report_hash.clear();
    CHECK(rep.report_hash == hash_hex(hash_string(report_to_json(unhashed))));

    // a rerun is byte-identical
    rule_judge        j2;
    const eval_report rep2 = run_echat_eval(fx.m, fx.codec, fx.bench, j2, micro_eval_config());
    CHECK(rep2.report_hash == rep.report_hash);
    CHECK(report_to_json(rep2) == report_to_json(rep));
}

TEST_CASE("report serialization carries the summary in task order") {
    const eval_fixture & fx = fixture();
    rule_judge           j;
    const eval_report    rep = run_echat_eval(fx.m, fx.codec, fx.bench, j, micro_eval_config());

    const auto doc = nlohmann::json::parse(report_to_json(rep));
    CHECK(doc.at("judge") == "rule");
    CHECK(doc.at("total") == 20);
    CHECK(doc.at("tasks").size() == (size_t) EVAL_TASK_COUNT);
    CHECK(doc.at("tasks")[0].at("task") == "emotion");
    CHECK(doc.at("tasks")[4].at("task") == "multi");
    CHECK(doc.at("entries").size() == 20);
    CHECK(doc.at("report_hash") == rep.report_hash);

    const std::string table  = render_report_table(rep);
    const auto        header = table.substr(0, table.find('\n'));
    const size_t      c0     = header.find("Emotion");
    const size_t      c1     = header.find("Age");
    const size_t      c2     = header.find("Gender");
    const size_t      c3     = header.find("Event");
    const size_t      c4     = header.find("Multi");
    CHECK(c0 != std::string::npos);
    CHECK(c0 < c1);
    CHECK(c1 < c2);
    CHECK(c2 < c3);
    CHECK(c3 < c4);
    CHECK(table.find("cue_acknowledgement") != std::string::npos);
    CHECK(table.find("scored / failed") != std::string::npos);
}

TEST_CASE("judge failures are excluded from means and can void the run") {
    const eval_fixture & fx = fixture();

    // 2 failures out of 20 sits exactly at the threshold: still valid
    {
        flaky_judge j;
        j.fail_every          = 10;  // calls 0 and 10
        const eval_report rep = run_echat_eval(fx.m, fx.codec, fx.bench, j, micro_eval_config());
        CHECK(rep.failed == 2);
        CHECK(rep.scored == 18);
        CHECK(rep.valid);
        CHECK(rep.entries[0].failed);
        CHECK(rep.entries[0].failure.find("scripted failure") != std::string::npos);
        // every scored entry got (5,5,5): failures do not drag the means
        for (const task_summary & t : rep.tasks) {
            if (t.scored > 0) {
                CHECK(t.final_0_100 == 100.0);
            }
        }
    }
    // 4 failures out of 20 exceeds 10%: run voided but still reported
    {
        flaky_judge j;
        j.fail_every          = 5;
        const eval_report rep = run_echat_eval(fx.m, fx.codec, fx.bench, j, micro_eval_config());
        CHECK(rep.failed == 4);
        CHECK(rep.scored + rep.failed == rep.total);
        CHECK(!rep.valid);
    }
}

TEST_CASE("non-judge errors from a judge propagate") {
    const eval_fixture & fx = fixture();
    struct broken_judge final : judge {
        judge_score score(const judge_request &) override {
            fail(ECHAT_ERR_IO, "disk on fire");
        }
        const char * kind() const override { return "broken"; }
    } j;
    CHECK(thrown_status([&] {
              run_echat_eval(fx.m, fx.codec, fx.bench, j, micro_eval_config());
          }) == ECHAT_ERR_IO);
}

TEST_CASE("evaluation validates its inputs") {
    const eval_fixture & fx = fixture();
    rule_judge           j;

    benchmark_data empty;
    CHECK(thrown_status([&] { run_echat_eval(fx.m, fx.codec, empty, j, micro_eval_config()); }) ==
          ECHAT_ERR_INVALID_CONFIG);

    eval_config bad     = micro_eval_config();
    bad.fail_threshold  = 1.5;
    CHECK(thrown_status([&] { run_echat_eval(fx.m, fx.codec, fx.bench, j, bad); }) ==
          ECHAT_ERR_INVALID_CONFIG);
}

// ---------------------------------------------------------------------------
// understanding metrics

TEST_CASE("token error rate matches hand-computed edit distances") {
    CHECK(token_error_rate({1, 2, 3}, {1, 2, 3}) == 0.0);
    // kitten -> sitting: 3 edits over 7 reference tokens
    const std::vector<int32_t> kitten  = {10, 8, 19, 19, 4, 13};
    const std::vector<int32_t> sitting = {18, 8, 19, 19, 8, 13, 6};
    CHECK(token_error_rate(kitten, sitting) == doctest::Approx(3.0 / 7.0).epsilon(1e-12));
    CHECK(token_error_rate({}, {1, 2}) == 1.0);          // two deletions
    CHECK(token_error_rate({1, 2, 3, 4}, {1}) == 3.0);   // over-length hypothesis
    CHECK(thrown_status([] { token_error_rate({1}, {}); }) == ECHAT_ERR_INVALID_ARGUMENT);
}

TEST_CASE("understanding metrics are bounded and deterministic") {
    const eval_fixture & fx = fixture();

    const und_metrics a = understanding_metrics(fx.m, fx.bench, micro_eval_config());
    CHECK(a.entries == 20);
    CHECK(a.ter >= 0.0);
    CHECK(a.think_complete >= 0);
    CHECK(a.think_complete <= a.entries);

    double asr_sum = 0.0, think_sum = 0.0;
    for (int32_t f = 0; f < CUE_FIELD_COUNT; ++f) {
        CHECK(a.asr_p_accuracy[(size_t) f] >= 0.0);
        CHECK(a.asr_p_accuracy[(size_t) f] <= 1.0);
        CHECK(a.think_accuracy[(size_t) f] >= 0.0);
        CHECK(a.think_accuracy[(size_t) f] <= 1.0);
        asr_sum += a.asr_p_accuracy[(size_t) f];
        think_sum += a.think_accuracy[(size_t) f];
    }
    CHECK(a.asr_p_mean == doctest::Approx(asr_sum / 4).epsilon(1e-12));
    CHECK(a.think_mean == doctest::Approx(think_sum / 4).epsilon(1e-12));

    const und_metrics b = understanding_metrics(fx.m, fx.bench, micro_eval_config());
    CHECK(a.ter == b.ter);
    CHECK(a.asr_p_accuracy == b.asr_p_accuracy);
    CHECK(a.think_accuracy == b.think_accuracy);
    CHECK(a.think_complete == b.think_complete);

    benchmark_data empty;
    CHECK(thrown_status([&] { understanding_metrics(fx.m, empty, micro_eval_config()); }) ==
          ECHAT_ERR_INVALID_CONFIG);
}
