#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "echat-common.h"
#include "echat-corpus.h"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

using namespace echat;

static std::string tmp_dir(const std::string & name) {
    auto dir = std::filesystem::temp_directory_path() / "echat-test-corpus" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

static corpus_config small_cfg(uint64_t seed = 11) {
    corpus_config c;
    c.seed            = seed;
    c.n_understanding = 60;
    c.n_tts           = 20;
    c.n_t2t           = 20;
    c.n_s2s           = 15;
    c.n_empathy       = 40;
    return c;
}

static cue_spec random_cues(rng & r, bool allow_event = true) {
    cue_spec c;
    c.emotion = (emotion_kind) r.uniform_int(EMOTION_COUNT);
    c.gender  = (gender_kind) r.uniform_int(GENDER_COUNT);
    c.age     = (age_kind) r.uniform_int(AGE_COUNT);
    c.event   = allow_event && r.coin(0.5) ? (event_kind) r.uniform_int(EVENT_ACTIVE_COUNT)
                                           : event_kind::none;
    return c;
}

static std::vector<int32_t> random_symbols(rng & r, int lo = 3, int hi = 10) {
    std::vector<int32_t> s;
    const int n = lo + (int) r.uniform_int((uint64_t) (hi - lo + 1));
    for (int i = 0; i < n; ++i) {
        s.push_back((int32_t) r.uniform_int(sym::content_count));
    }
    return s;
}

TEST_CASE("render is deterministic in (symbols, cues, seed)") {
    const corpus_generator g(small_cfg());
    rng r(5);
    const auto syms = random_symbols(r);
    const cue_spec cues{ emotion_kind::anger, gender_kind::female, age_kind::old,
                         event_kind::cough };
    const auto a = g.render_features(syms, cues, 42);
    const auto b = g.render_features(syms, cues, 42);
    CHECK(features_hash(a) == features_hash(b));

    const auto c = g.render_features(syms, cues, 43);
    CHECK(features_hash(a) != features_hash(c));

    auto syms2 = syms;
    syms2[0]   = (syms2[0] + 1) % sym::content_count;
    const auto d = g.render_features(syms2, cues, 42);
    CHECK(features_hash(a) != features_hash(d));
}

TEST_CASE("render frame counts follow the symbol/event geometry") {
    const auto cfg = small_cfg();
    const corpus_generator g(cfg);
    rng r(6);
    const auto syms = random_symbols(r, 5, 5);
    cue_spec cues;
    cues.event = event_kind::none;
    CHECK(g.render_features(syms, cues, 1).frames == 5 * cfg.frames_per_symbol);
    cues.event = event_kind::laugh;
    CHECK(g.render_features(syms, cues, 1).frames ==
          5 * cfg.frames_per_symbol + cfg.event_frames);
    CHECK(g.render_features(syms, cues, 1).channels == cfg.channels);
}

TEST_CASE("decode_cues inverts render") {
    const corpus_generator g(small_cfg());
    rng r(7);
    for (int trial = 0; trial < 300; ++trial) {
        const auto syms = random_symbols(r);
        const auto cues = random_cues(r);
        const auto m    = g.render_features(syms, cues, 1000 + (uint64_t) trial);
        const auto back = g.decode_cues(m);
        REQUIRE(back == cues);
    }
}

TEST_CASE("all-zero features decode to the first-index labels") {
    const corpus_generator g(small_cfg());
    const auto m    = feature_matrix::zeros(12, 80, 100.0f);
    const auto cues = g.decode_cues(m);
    CHECK(cues.emotion == emotion_kind::neutral);
    CHECK(cues.gender == gender_kind::male);
    CHECK(cues.age == age_kind::child);
    CHECK(cues.event == event_kind::none);

    // zero frames behaves the same
    const auto empty = feature_matrix::zeros(0, 80, 100.0f);
    CHECK(g.decode_cues(empty) == cues);
}

TEST_CASE("planted cues survive the quantize/decode cycle") {
    const corpus_generator g(small_cfg());
    rng r(8);

    // fit a codebook on renders from the same distribution
    std::vector<feature_matrix> fits;
    for (int i = 0; i < 150; ++i) {
        fits.push_back(g.render_features(random_symbols(r), random_cues(r), 5000 + (uint64_t) i));
    }
    std::vector<const feature_matrix *> ptrs;
    for (const auto & f : fits) {
        ptrs.push_back(&f);
    }
    codec_config cc;
    cc.codebook_size = 128;
    cc.seed          = 3;
    const auto codec = fit_codec(ptrs, cc);

    int ok = 0;
    const int trials = 200;
    for (int i = 0; i < trials; ++i) {
        const auto cues = random_cues(r);
        const auto m    = g.render_features(random_symbols(r), cues, 9000 + (uint64_t) i);
        const auto back = g.decode_cues(codec.decode(codec.quantize(m)));
        ok += back == cues;
    }
    // acceptance-level closure is checked on the full pipeline; here the
    // small fit must already be near-perfect
    CHECK((double) ok / trials >= 0.99);
}

TEST_CASE("generate_response follows the acknowledgement grammar") {
    const corpus_generator g(small_cfg());

    cue_labels all;
    all.emotion = emotion_kind::sad;
    all.gender  = gender_kind::male;
    all.age     = age_kind::adult;
    all.event   = event_kind::sigh;
    const auto r_all = g.generate_response(2, all);

    // acks in field order, then the scenario tag, then the fixed body
    CHECK(r_all[0] == sym::of_ack(cue_field::emotion));
    CHECK(r_all[1] == sym::of_emotion(emotion_kind::sad));
    CHECK(r_all[2] == sym::of_ack(cue_field::gender));
    CHECK(r_all[3] == sym::of_gender(gender_kind::male));
    CHECK(r_all[4] == sym::of_ack(cue_field::age));
    CHECK(r_all[5] == sym::of_age(age_kind::adult));
    CHECK(r_all[6] == sym::of_ack(cue_field::event));
    CHECK(r_all[7] == sym::of_event(event_kind::sigh));
    CHECK(r_all[8] == sym::of_tag(2));
    CHECK(r_all.size() == 12);

    // single field -> single ack pair
    cue_labels one;
    one.age = age_kind::old;
    const auto r_one = g.generate_response(2, one);
    CHECK(r_one[0] == sym::of_ack(cue_field::age));
    CHECK(r_one[1] == sym::of_age(age_kind::old));
    CHECK(r_one[2] == sym::of_tag(2));
    CHECK(r_one.size() == 6);

    // no labels -> tag + body only, deterministic per scenario
    const auto r_none  = g.generate_response(2, {});
    const auto r_none2 = g.generate_response(2, {});
    CHECK(r_none == r_none2);
    CHECK(r_none[0] == sym::of_tag(2));
    CHECK(r_none.size() == 4);
    // same body as the labeled variants
    CHECK(std::equal(r_none.begin(), r_none.end(), r_all.begin() + 8));

    CHECK_THROWS_AS(g.generate_response(99, {}), error);
}

TEST_CASE("corpus plan composition and quotas") {
    const auto cfg = small_cfg();
    const corpus_generator g(cfg);
    const auto plan = g.plan_corpus();

    std::map<sample_task, int> counts;
    for (const auto & s : plan) {
        counts[s.tag]++;
    }
    CHECK(counts[sample_task::understanding] == cfg.n_understanding);
    CHECK(counts[sample_task::tts] == cfg.n_tts);
    CHECK(counts[sample_task::t2t] == cfg.n_t2t);
    CHECK(counts[sample_task::s2s_plain] == cfg.n_s2s);
    CHECK(counts[sample_task::empathy] == cfg.n_empathy);

    const auto train_fill = g.filler_alphabet(false);
    const auto held_fill  = g.filler_alphabet(true);
    CHECK(train_fill == std::vector<int32_t>{ 16, 17, 18, 19 });
    CHECK(held_fill == std::vector<int32_t>{ 20, 21, 22, 23 });

    int single_emotion = 0;
    int multi          = 0;
    for (const auto & s : plan) {
        CHECK(s.scenario >= 0);
        CHECK(s.scenario < cfg.scenario_count);
        // prefix bigram identifies the scenario
        REQUIRE(s.query_symbols.size() >= 2);
        CHECK(s.query_symbols[0] == s.scenario * 2);
        CHECK(s.query_symbols[1] == s.scenario * 2 + 1);
        // fillers come from the training family
        for (size_t i = 2; i < s.query_symbols.size(); ++i) {
            CHECK(std::count(train_fill.begin(), train_fill.end(), s.query_symbols[i]) == 1);
        }

        const int n_labels = s.labels.emotion.has_value() + s.labels.gender.has_value() +
                             s.labels.age.has_value() + s.labels.event.has_value();
        if (s.tag == sample_task::understanding) {
            CHECK(n_labels == 1);
            CHECK(s.has_audio);
            single_emotion += s.labels.emotion.has_value();
            if (s.labels.event) {
                CHECK(*s.labels.event != event_kind::none);
            }
        } else if (s.tag == sample_task::empathy) {
            CHECK((n_labels == 1 || n_labels == 4));
            multi += n_labels == 4;
            // supervised labels always match the planted truth
            if (s.labels.emotion) CHECK(*s.labels.emotion == s.cues.emotion);
            if (s.labels.gender)  CHECK(*s.labels.gender == s.cues.gender);
            if (s.labels.age)     CHECK(*s.labels.age == s.cues.age);
            if (s.labels.event)   CHECK(*s.labels.event == s.cues.event);
            CHECK(s.response_emotion == response_emotion_for(s.labels.emotion));
        } else {
            CHECK(n_labels == 0);
        }
        if (s.tag == sample_task::tts || s.tag == sample_task::t2t) {
            CHECK(!s.has_audio);
        }
    }
    CHECK(single_emotion == (int) std::lround(cfg.n_understanding * cfg.emotion_share));
    CHECK(multi == (int) std::lround(cfg.n_empathy * cfg.multi_share));

    // identical config -> identical plan
    const auto plan2 = corpus_generator(cfg).plan_corpus();
    REQUIRE(plan2.size() == plan.size());
    for (size_t i = 0; i < plan.size(); ++i) {
        CHECK(plan[i].seed == plan2[i].seed);
        CHECK(plan[i].query_symbols == plan2[i].query_symbols);
        CHECK(plan[i].response_symbols == plan2[i].response_symbols);
        CHECK(plan[i].cues == plan2[i].cues);
    }
}

TEST_CASE("benchmark plan: tasks, realness quota, held-out fillers") {
    const auto cfg = small_cfg();
    const corpus_generator g(cfg);
    benchmark_config bc;
    bc.seed             = 77;
    bc.entries_per_task = 30;
    const auto plan = g.plan_benchmark(bc);
    REQUIRE((int) plan.size() == 30 * EVAL_TASK_COUNT);

    const auto train_fill = g.filler_alphabet(false);
    const auto held_fill  = g.filler_alphabet(true);
    std::map<eval_task, int> counts, real_counts;
    for (const auto & e : plan) {
        counts[e.task]++;
        real_counts[e.task] += e.real_surrogate;
        const auto & fam = e.real_surrogate ? held_fill : train_fill;
        for (size_t i = 2; i < e.query_symbols.size(); ++i) {
            CHECK(std::count(fam.begin(), fam.end(), e.query_symbols[i]) == 1);
        }
        const int n_sup = e.supervised.emotion.has_value() + e.supervised.gender.has_value() +
                          e.supervised.age.has_value() + e.supervised.event.has_value();
        if (e.task == eval_task::multi) {
            CHECK(n_sup == 4);
        } else {
            CHECK(n_sup == 1);
        }
        if (e.task == eval_task::event) {
            REQUIRE(e.supervised.event.has_value());
            CHECK(*e.supervised.event != event_kind::none);
        }
    }
    for (int t = 0; t < EVAL_TASK_COUNT; ++t) {
        CHECK(counts[(eval_task) t] == 30);
        CHECK(real_counts[(eval_task) t] == 10);
    }
}

TEST_CASE("build_corpus writes a loadable, reproducible corpus") {
    const auto cfg = small_cfg(21);
    codec_config cc;
    cc.codebook_size = 96;
    cc.seed          = 5;

    const auto dir_a = tmp_dir("corpus-a");
    const auto res_a = build_corpus(dir_a, cfg, cc);
    CHECK(res_a.sample_count == 155);
    CHECK(std::filesystem::exists(res_a.manifest_path));

    // identical config reproduces the content hash bit for bit
    const auto dir_b = tmp_dir("corpus-b");
    const auto res_b = build_corpus(dir_b, cfg, cc);
    CHECK(res_a.content_hash == res_b.content_hash);
    CHECK(res_a.codec.content_hash() == res_b.codec.content_hash());

    // a different seed changes it
    auto cfg2 = cfg;
    cfg2.seed = 22;
    const auto dir_c = tmp_dir("corpus-c");
    const auto res_c = build_corpus(dir_c, cfg2, cc);
    CHECK(res_a.content_hash != res_c.content_hash);

    // load round-trip
    const auto data = load_corpus(dir_a);
    CHECK(data.content_hash == res_a.content_hash);
    CHECK((int) data.samples.size() == 155);
    const auto plan = corpus_generator(cfg).plan_corpus();
    REQUIRE(plan.size() == data.samples.size());
    int with_speech = 0;
    for (size_t i = 0; i < plan.size(); ++i) {
        CHECK(data.samples[i].query_symbols == plan[i].query_symbols);
        CHECK(data.samples[i].labels == plan[i].labels);
        CHECK(data.samples[i].tag == plan[i].tag);
        if (data.samples[i].tag == sample_task::tts ||
            data.samples[i].tag == sample_task::s2s_plain ||
            data.samples[i].tag == sample_task::empathy) {
            CHECK(!data.samples[i].response_speech.empty());
            ++with_speech;
        }
        for (int32_t tok : data.samples[i].response_speech) {
            CHECK(tok >= 0);
            CHECK(tok < cc.codebook_size);
        }
    }
    CHECK(with_speech == cfg.n_tts + cfg.n_s2s + cfg.n_empathy);

    // features load and decode to their planted cues
    const auto und = data.split(sample_task::understanding);
    CHECK((int) und.size() == cfg.n_understanding);
    const corpus_generator g(cfg);
    for (size_t i = 0; i < 10; ++i) {
        const auto m = data.load_features(*und[i]);
        CHECK(g.decode_cues(m) == und[i]->cues);
    }

    // the stored codec matches the returned one
    const auto codec = read_codec(dir_a + "/codec.bin");
    CHECK(codec.content_hash() == res_a.codec.content_hash());
}

TEST_CASE("benchmark build refuses seed collisions and reuse") {
    const auto cfg = small_cfg(31);
    codec_config cc;
    cc.codebook_size = 64;
    const auto corpus_dir = tmp_dir("corpus-bench");
    const auto corpus_res = build_corpus(corpus_dir, cfg, cc);

    benchmark_config bc;
    bc.entries_per_task = 12;

    // seed collision with the training corpus
    bc.seed = cfg.seed;
    try {
        build_benchmark(tmp_dir("bench-bad"), bc, cfg, corpus_res.manifest_path);
        CHECK(false);
    } catch (const error & e) {
        CHECK(e.st == ECHAT_ERR_DISJOINTNESS);
    }

    // valid build
    bc.seed = 32;
    const auto bench_dir = tmp_dir("bench-ok");
    const auto bres = build_benchmark(bench_dir, bc, cfg, corpus_res.manifest_path);
    CHECK(bres.entry_count == 12 * EVAL_TASK_COUNT);

    const auto bench = load_benchmark(bench_dir);
    CHECK((int) bench.entries.size() == bres.entry_count);
    CHECK(bench.content_hash == bres.content_hash);

    const corpus_generator g(cfg);
    for (size_t i = 0; i < 5; ++i) {
        const auto m = bench.load_features(bench.entries[i]);
        CHECK(g.decode_cues(m) == bench.entries[i].cues);
    }

    // doctor the corpus manifest so it claims one of the benchmark recordings;
    // the audit must refuse
    {
        auto manifest = read_text_file(corpus_res.manifest_path);
        const auto bench_manifest = read_text_file(bres.manifest_path);
        // lift a feature hash out of the benchmark manifest
        const auto key = std::string("\"feature_hashes\": [");
        const auto pos = bench_manifest.find(key);
        REQUIRE(pos != std::string::npos);
        const auto q1 = bench_manifest.find('"', pos + key.size());
        const auto q2 = bench_manifest.find('"', q1 + 1);
        const auto stolen = bench_manifest.substr(q1, q2 - q1 + 1);

        const auto cpos = manifest.find(key);
        REQUIRE(cpos != std::string::npos);
        manifest.insert(cpos + key.size(), stolen + ",");
        const auto doctored = tmp_dir("corpus-doctored") + "/manifest.json";
        write_text_file(doctored, manifest);

        try {
            build_benchmark(tmp_dir("bench-overlap"), bc, cfg, doctored);
            CHECK(false);
        } catch (const error & e) {
            CHECK(e.st == ECHAT_ERR_DISJOINTNESS);
            CHECK(std::string(e.what()).find("training corpus") != std::string::npos);
        }
    }
}

TEST_CASE("corpus config validation") {
    auto bad = small_cfg();
    bad.scenario_count = 9;
    CHECK_THROWS_AS((void) corpus_generator{ bad }, error);
    bad = small_cfg();
    bad.channels = 40;
    CHECK_THROWS_AS((void) corpus_generator{ bad }, error);
    bad = small_cfg();
    bad.noise_amp = 1.0f; // must stay below symbol_amp
    CHECK_THROWS_AS((void) corpus_generator{ bad }, error);
    bad = small_cfg();
    bad.filler_min = 5;
    bad.filler_max = 4;
    CHECK_THROWS_AS((void) corpus_generator{ bad }, error);
    bad = small_cfg();
    bad.multi_share = 1.5f;
    CHECK_THROWS_AS((void) corpus_generator{ bad }, error);
}
