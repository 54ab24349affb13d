#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "echat-common.h"
#include "echat-corpus.h"
#include "echat-model.h"
#include "echat-train.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace echat;

static std::string tmp_dir(const std::string & name) {
    auto dir = std::filesystem::temp_directory_path() / "echat-test-train" / name;
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

// a model sized for fast train loops; taller position budget than the
// gradient-check profile so dialogue layouts fit
static model_config micro_model_config() {
    model_config cfg     = gradcheck_config();
    cfg.feature_channels = 80;  // the corpus band geometry is fixed
    cfg.max_positions    = 160;
    return cfg;
}

// a matching corpus: same channel count, codec codebook == speech vocab
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

static const corpus_data & micro_corpus() {
    static corpus_data data = [] {
        const auto dir = tmp_dir("micro-corpus");
        codec_config cc;
        cc.codebook_size = micro_model_config().speech_vocab;
        build_corpus(dir, micro_corpus_config(), cc);
        return load_corpus(dir);
    }();
    return data;
}

static const vocab_layout & test_vocab() {
    static vocab_layout v = build_vocab_layout(sym::count, 16);
    return v;
}

static dialogue_sample make_understanding_sample() {
    dialogue_sample s;
    s.tag           = sample_task::understanding;
    s.query_symbols = {0, 1, 2, 3, 4};
    s.has_audio     = true;
    s.cues          = {emotion_kind::happy, gender_kind::female, age_kind::old,
                       event_kind::laugh};
    s.labels.emotion = emotion_kind::happy;
    return s;
}

static dialogue_sample make_dialogue_sample(bool full_labels) {
    dialogue_sample s;
    s.tag           = sample_task::empathy;
    s.query_symbols = {0, 1, 2, 3};
    s.has_audio     = true;
    s.cues          = {emotion_kind::sad, gender_kind::male, age_kind::adult,
                       event_kind::sigh};
    if (full_labels) {
        s.labels = cue_labels::all_of(s.cues);
    } else {
        s.labels.emotion = emotion_kind::sad;
    }
    s.response_symbols = {10, 11, 12};
    s.response_speech  = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    s.response_emotion = emotion_kind::sorry;
    return s;
}

static dialogue_sample make_tts_sample() {
    dialogue_sample s;
    s.tag              = sample_task::tts;
    s.query_symbols    = {5, 6, 7, 8, 9, 10, 11};
    s.has_audio        = false;
    s.response_speech  = {3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3, 2, 3, 8, 4};
    return s;
}

static dialogue_sample make_t2t_sample() {
    dialogue_sample s;
    s.tag              = sample_task::t2t;
    s.query_symbols    = {0, 1};
    s.has_audio        = false;
    s.response_symbols = {2, 3, 4};
    return s;
}

// target-region view: the input tokens past the prompt
static std::vector<int32_t> target_region(const target_layout & lay) {
    size_t supervised_from = lay.input.size();
    // the prompt region is exactly the unmasked ignore-role prefix
    for (size_t i = 0; i < lay.roles.size(); ++i) {
        if (lay.roles[i] != role_kind::ignore) {
            supervised_from = i + 1;
            break;
        }
    }
    return std::vector<int32_t>(lay.input.begin() + (ptrdiff_t) supervised_from,
                                lay.input.end());
}

// ---------------------------------------------------------------------------
// names and role sets

TEST_CASE("stage and role names round-trip") {
    for (int32_t i = 0; i < TRAIN_STAGE_COUNT; ++i) {
        const auto k = (train_stage_kind) i;
        const auto r = train_stage_from_name(train_stage_name(k));
        REQUIRE(r.has_value());
        CHECK(*r == k);
    }
    CHECK(!train_stage_from_name("s4_magic").has_value());

    std::set<std::string> names;
    for (int32_t i = 0; i < ROLE_COUNT; ++i) {
        names.insert(role_kind_name((role_kind) i));
    }
    CHECK(names.size() == (size_t) ROLE_COUNT);
}

TEST_CASE("stage objectives cover the expected roles") {
    const uint32_t dialogue = role_bit(role_kind::response_text) | role_bit(role_kind::speech);
    const uint32_t understanding =
        role_bit(role_kind::asr_text) | role_bit(role_kind::paralinguistic_label);

    CHECK(stage_loss_roles(train_stage_kind::text_warmup) == dialogue);
    CHECK(stage_loss_roles(train_stage_kind::s1_align) == understanding);
    CHECK(stage_loss_roles(train_stage_kind::s1_asr_p) == understanding);
    CHECK(stage_loss_roles(train_stage_kind::s1_only_p) == understanding);
    CHECK(stage_loss_roles(train_stage_kind::s1_full_label) == understanding);
    CHECK(stage_loss_roles(train_stage_kind::s2_tts) == dialogue);
    CHECK(stage_loss_roles(train_stage_kind::s2_s2s) == dialogue);
    CHECK(stage_loss_roles(train_stage_kind::s3_think) ==
          (dialogue | role_bit(role_kind::think)));
    CHECK(stage_loss_roles(train_stage_kind::s3_distill) == dialogue);
}

// ---------------------------------------------------------------------------
// layouts

TEST_CASE("transcript-plus-one-label layout") {
    const vocab_layout & v = test_vocab();
    const dialogue_sample s = make_understanding_sample();

    // second introduced format of the transcript+single stage
    CHECK(s1_understand_mode(train_stage_kind::s1_asr_p, 1) ==
          understand_mode::transcript_single);
    const target_layout lay =
        build_stage_targets(train_stage_kind::s1_asr_p, s, 1, false, false, 20, v);

    // prompt: 14 template tokens + mode word + 5 soft slots; targets: 5
    // transcript symbols + 1 label
    CHECK(lay.soft_rows == 5);
    CHECK(lay.input.size() == 14 + 1 + 5 + 6);
    CHECK(lay.task == task_kind::understand);

    const size_t L = lay.tokens.size();
    REQUIRE(L == lay.input.size() - 1);
    for (size_t i = 0; i < L; ++i) {
        // alignment law: position i predicts input[i+1] (pad over soft slots)
        if (lay.input[i + 1] == -1) {
            CHECK(lay.tokens[i] == v.pad);
        } else {
            CHECK(lay.tokens[i] == lay.input[i + 1]);
        }
    }
    for (size_t i = 0; i + 6 < L; ++i) {
        CHECK(lay.roles[i] == role_kind::ignore);
        CHECK(lay.mask[i] == 0);
    }
    for (size_t i = L - 6; i < L - 1; ++i) {
        CHECK(lay.roles[i] == role_kind::asr_text);
        CHECK(lay.mask[i] == 1);
        CHECK(lay.tokens[i] == s.query_symbols[i - (L - 6)]);
    }
    CHECK(lay.roles[L - 1] == role_kind::paralinguistic_label);
    CHECK(lay.mask[L - 1] == 1);
    CHECK(lay.tokens[L - 1] == sym::of_emotion(emotion_kind::happy));

    CHECK_NOTHROW(validate_layout(lay, v));
}

TEST_CASE("understanding format schedule is cumulative") {
    using K = train_stage_kind;
    using M = understand_mode;
    CHECK(s1_understand_mode(K::s1_align, 0) == M::transcript);
    CHECK(s1_understand_mode(K::s1_align, 7) == M::transcript);
    CHECK(s1_understand_mode(K::s1_asr_p, 0) == M::transcript);
    CHECK(s1_understand_mode(K::s1_asr_p, 1) == M::transcript_single);
    CHECK(s1_understand_mode(K::s1_only_p, 2) == M::labels_only);
    CHECK(s1_understand_mode(K::s1_only_p, 3) == M::transcript);
    CHECK(s1_understand_mode(K::s1_full_label, 3) == M::full_label);
    CHECK(s1_understand_mode(K::s1_full_label, 4) == M::transcript);
    CHECK(thrown_status([] { s1_understand_mode(K::s2_tts, 0); }) ==
          ECHAT_ERR_INVALID_ARGUMENT);
}

TEST_CASE("labels-only layout plants all four fields in order") {
    const vocab_layout & v = test_vocab();
    const dialogue_sample s = make_understanding_sample();
    const target_layout lay =
        build_understanding_targets(s, understand_mode::labels_only, 20, v);

    const std::vector<int32_t> tail = target_region(lay);
    REQUIRE(tail.size() == 4);
    CHECK(tail[0] == sym::of_emotion(s.cues.emotion));
    CHECK(tail[1] == sym::of_gender(s.cues.gender));
    CHECK(tail[2] == sym::of_age(s.cues.age));
    CHECK(tail[3] == sym::of_event(s.cues.event));
    for (size_t i = lay.tokens.size() - 4; i < lay.tokens.size(); ++i) {
        CHECK(lay.roles[i] == role_kind::paralinguistic_label);
        CHECK(lay.mask[i] == 1);
    }
}

TEST_CASE("single-label format demands exactly one supervised field") {
    const vocab_layout & v = test_vocab();
    dialogue_sample s = make_understanding_sample();
    s.labels          = cue_labels::all_of(s.cues);
    CHECK(thrown_status([&] {
        build_understanding_targets(s, understand_mode::transcript_single, 20, v);
    }) == ECHAT_ERR_INVALID_ARGUMENT);
}

TEST_CASE("plain speech-synthesis layout supervises speech only") {
    const vocab_layout & v = test_vocab();
    const dialogue_sample s = make_tts_sample();
    const target_layout lay = build_tts_targets(s, false, v);

    const std::vector<int32_t> tail = target_region(lay);
    REQUIRE(tail.size() == s.response_speech.size() + 1);
    for (size_t i = 0; i < s.response_speech.size(); ++i) {
        CHECK(tail[i] == v.speech_token(s.response_speech[i]));
    }
    CHECK(tail.back() == v.speech_boundary);

    int64_t supervised = 0;
    for (size_t i = 0; i < lay.tokens.size(); ++i) {
        if (lay.mask[i]) {
            ++supervised;
            CHECK(lay.roles[i] == role_kind::speech);
        }
    }
    CHECK(supervised == (int64_t) tail.size());
}

TEST_CASE("interleaved layouts match the wire protocol") {
    const vocab_layout & v = test_vocab();

    const auto check_wire = [&](const target_layout & lay,
                                const std::vector<int32_t> & text_no_eot,
                                const std::vector<int32_t> & speech_idx) {
        std::vector<int32_t> text = text_no_eot;
        text.push_back(v.eot);
        std::vector<int32_t> sp;
        for (int32_t k : speech_idx) {
            sp.push_back(v.speech_token(k));
        }
        const std::vector<int32_t> wire = mux_interleaved(text, sp, v, interleave_pattern{});
        CHECK(target_region(lay) == wire);

        // roles follow the token kind, every wire position supervised
        const size_t off = lay.tokens.size() - wire.size();
        for (size_t i = 0; i < wire.size(); ++i) {
            const token_kind k = classify_token(v, wire[i]);
            const bool is_sp   = k == token_kind::speech || k == token_kind::speech_boundary;
            CHECK(lay.roles[off + i] == (is_sp ? role_kind::speech : role_kind::response_text));
            CHECK(lay.mask[off + i] == 1);
        }
    };

    const dialogue_sample tts = make_tts_sample();
    check_wire(build_tts_targets(tts, true, v), tts.query_symbols, tts.response_speech);

    const dialogue_sample dlg = make_dialogue_sample(true);
    check_wire(build_dialogue_targets(dlg, false, true, 16, v), dlg.response_symbols,
               dlg.response_speech);
}

TEST_CASE("reasoning span precedes the reply and names the labels") {
    const vocab_layout & v = test_vocab();
    const dialogue_sample s = make_dialogue_sample(true);
    const target_layout lay = build_dialogue_targets(s, true, false, 16, v);

    think_span span;
    span.transcript = s.query_symbols;
    span.labels     = s.labels;
    const std::vector<int32_t> tspan = format_think(span, v);

    const std::vector<int32_t> tail = target_region(lay);
    REQUIRE(tail.size() >
            tspan.size() + s.response_symbols.size() + 1 + s.response_speech.size());
    CHECK(std::equal(tspan.begin(), tspan.end(), tail.begin()));

    const size_t off = lay.tokens.size() - tail.size();
    for (size_t i = 0; i < tspan.size(); ++i) {
        CHECK(lay.roles[off + i] == role_kind::think);
    }
    // fully supervised labels: the whole span is unmasked
    for (size_t i = 0; i < tspan.size(); ++i) {
        CHECK(lay.mask[off + i] == 1);
    }
    CHECK(tail.back() == v.speech_boundary);
    CHECK(tail[tspan.size() + s.response_symbols.size()] == v.eot);
}

TEST_CASE("unknown-label placeholders are masked, and masking is idempotent") {
    const vocab_layout & v = test_vocab();
    const dialogue_sample s = make_dialogue_sample(false);  // emotion only
    target_layout lay = build_dialogue_targets(s, true, false, 16, v);

    int64_t unk_positions = 0;
    for (size_t i = 0; i < lay.tokens.size(); ++i) {
        if (lay.tokens[i] == v.unk_label) {
            ++unk_positions;
            CHECK(lay.mask[i] == 0);
        }
    }
    CHECK(unk_positions == 3);  // gender, age, event unknown

    const target_layout before = lay;
    apply_unk_mask(lay, v);
    CHECK(lay.input == before.input);
    CHECK(lay.tokens == before.tokens);
    CHECK(lay.roles == before.roles);
    CHECK(lay.mask == before.mask);
}

TEST_CASE("stage dispatch rejects out-of-stage tasks") {
    const vocab_layout & v = test_vocab();
    CHECK(thrown_status([&] {
        build_stage_targets(train_stage_kind::s1_align, make_tts_sample(), 0, false, false,
                            0, v);
    }) == ECHAT_ERR_CURRICULUM);
    CHECK(thrown_status([&] {
        build_stage_targets(train_stage_kind::text_warmup, make_dialogue_sample(true), 0,
                            false, false, 16, v);
    }) == ECHAT_ERR_CURRICULUM);
    CHECK(!stage_allows_task(train_stage_kind::s2_s2s, sample_task::empathy));
    CHECK(stage_allows_task(train_stage_kind::s3_distill, sample_task::empathy));
}

// ---------------------------------------------------------------------------
// loss

TEST_CASE("uniform logits cost ln(vocab) per active role") {
    const vocab_layout & v = test_vocab();
    const target_layout lay = build_t2t_targets(make_t2t_sample(), v);

    nn::mat<float> logits((int64_t) lay.tokens.size(), v.total_size);
    logits.setZero();

    const sample_loss sl =
        compute_loss(logits, lay, stage_loss_roles(train_stage_kind::text_warmup));
    CHECK(sl.count[(size_t) role_kind::response_text] == 4);  // reply + eot
    CHECK(sl.count[(size_t) role_kind::speech] == 0);
    CHECK(sl.total == doctest::Approx(std::log((double) v.total_size)).epsilon(1e-12));
}

TEST_CASE("loss agrees with an independent per-position computation") {
    const vocab_layout & v = test_vocab();
    const target_layout lay = build_dialogue_targets(make_dialogue_sample(true), true,
                                                     false, 16, v);
    rng r(77);
    nn::mat<float> logits((int64_t) lay.tokens.size(), v.total_size);
    for (int64_t i = 0; i < logits.rows(); ++i) {
        for (int64_t c = 0; c < logits.cols(); ++c) {
            logits(i, c) = (float) r.normal(0.0, 2.0);
        }
    }

    const uint32_t roles = stage_loss_roles(train_stage_kind::s3_think);
    const sample_loss sl = compute_loss(logits, lay, roles);

    // reference: ce = log sum exp(x_c - x_target), no max shift
    std::array<double, ROLE_COUNT>  sum{};
    std::array<int64_t, ROLE_COUNT> cnt{};
    for (size_t i = 0; i < lay.tokens.size(); ++i) {
        if (!lay.mask[i] || !role_active(roles, lay.roles[i])) {
            continue;
        }
        const double xt = logits((int64_t) i, lay.tokens[i]);
        double       se = 0.0;
        for (int64_t c = 0; c < logits.cols(); ++c) {
            se += std::exp((double) logits((int64_t) i, c) - xt);
        }
        sum[(size_t) lay.roles[i]] += std::log(se);
        cnt[(size_t) lay.roles[i]] += 1;
    }
    double total = 0.0;
    for (int32_t k = 0; k < ROLE_COUNT; ++k) {
        CHECK(sl.count[(size_t) k] == cnt[(size_t) k]);
        if (cnt[(size_t) k] > 0) {
            CHECK(sl.sum[(size_t) k] == doctest::Approx(sum[(size_t) k]).epsilon(1e-9));
            total += sum[(size_t) k] / (double) cnt[(size_t) k];
        }
    }
    CHECK(sl.total == doctest::Approx(total).epsilon(1e-9));
}

TEST_CASE("role means decompose the stage objective") {
    const vocab_layout & v = test_vocab();
    const target_layout lay = build_dialogue_targets(make_dialogue_sample(true), true,
                                                     false, 16, v);
    rng r(78);
    nn::mat<float> logits((int64_t) lay.tokens.size(), v.total_size);
    for (int64_t i = 0; i < logits.rows(); ++i) {
        for (int64_t c = 0; c < logits.cols(); ++c) {
            logits(i, c) = (float) r.normal(0.0, 1.5);
        }
    }

    const double with_think =
        compute_loss(logits, lay, stage_loss_roles(train_stage_kind::s3_think)).total;
    const double dialogue_only =
        compute_loss(logits, lay, stage_loss_roles(train_stage_kind::s2_s2s)).total;
    const double think_only =
        compute_loss(logits, lay, role_bit(role_kind::think)).total;

    CHECK(with_think == dialogue_only + think_only);
}

TEST_CASE("loss gradient matches finite differences") {
    const vocab_layout & v = test_vocab();
    const target_layout lay = build_t2t_targets(make_t2t_sample(), v);
    rng r(79);
    nn::mat<float> logits((int64_t) lay.tokens.size(), v.total_size);
    for (int64_t i = 0; i < logits.rows(); ++i) {
        for (int64_t c = 0; c < logits.cols(); ++c) {
            logits(i, c) = (float) r.normal(0.0, 1.0);
        }
    }
    const uint32_t roles = stage_loss_roles(train_stage_kind::text_warmup);
    const double   scale = 2.5;

    nn::mat<float> d;
    compute_loss_grad(logits, lay, roles, scale, d);

    for (int32_t probe = 0; probe < 16; ++probe) {
        const auto i = (int64_t) r.uniform_int((uint64_t) logits.rows());
        const auto c = (int64_t) r.uniform_int((uint64_t) logits.cols());
        const float h    = 1e-2f;
        const float keep = logits(i, c);
        logits(i, c) = keep + h;
        const double up = compute_loss(logits, lay, roles).total;
        logits(i, c) = keep - h;
        const double dn = compute_loss(logits, lay, roles).total;
        logits(i, c) = keep;

        const double fd = scale * (up - dn) / (2.0 * (double) h);
        const double an = d(i, c);
        if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) {
            continue;
        }
        CHECK(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}) < 2e-3);
    }
}

TEST_CASE("masked targets touch neither loss nor gradients") {
    const vocab_layout & v = test_vocab();
    const dialogue_sample s = make_dialogue_sample(false);
    const target_layout lay = build_dialogue_targets(s, true, false, 16, v);

    size_t masked = lay.tokens.size();
    for (size_t i = 0; i < lay.tokens.size(); ++i) {
        if (lay.tokens[i] == v.unk_label) {
            masked = i;
            break;
        }
    }
    REQUIRE(masked < lay.tokens.size());

    rng r(80);
    nn::mat<float> logits((int64_t) lay.tokens.size(), v.total_size);
    for (int64_t i = 0; i < logits.rows(); ++i) {
        for (int64_t c = 0; c < logits.cols(); ++c) {
            logits(i, c) = (float) r.normal(0.0, 1.0);
        }
    }
    const uint32_t roles = stage_loss_roles(train_stage_kind::s3_think);

    target_layout doctored = lay;
    doctored.tokens[masked] = sym::of_emotion(emotion_kind::anger);

    nn::mat<float> da, db;
    const sample_loss a = compute_loss_grad(logits, lay, roles, 1.0, da);
    const sample_loss b = compute_loss_grad(logits, doctored, roles, 1.0, db);

    CHECK(a.total == b.total);
    CHECK(std::memcmp(da.data(), db.data(),
                      sizeof(float) * (size_t) da.rows() * (size_t) da.cols()) == 0);
}

// ---------------------------------------------------------------------------
// optimizer

TEST_CASE("warmup schedule law") {
    optimizer_config cfg;
    cfg.lr           = 0.5;
    cfg.warmup_steps = 10;
    CHECK(warmup_lr(cfg, 1) == doctest::Approx(0.05));
    CHECK(warmup_lr(cfg, 5) == doctest::Approx(0.25));
    CHECK(warmup_lr(cfg, 10) == doctest::Approx(0.5));
    CHECK(warmup_lr(cfg, 1000) == doctest::Approx(0.5));
    cfg.warmup_steps = 0;
    CHECK(warmup_lr(cfg, 1) == doctest::Approx(0.5));
    CHECK(thrown_status([&] { warmup_lr(cfg, 0); }) == ECHAT_ERR_INVALID_ARGUMENT);
}

TEST_CASE("preset optimizers") {
    const optimizer_config d = desk_optimizer();
    CHECK(d.lr == doctest::Approx(3e-4));
    CHECK(d.accumulation == 4);
    const optimizer_config p = paper_optimizer();
    CHECK(p.lr == doctest::Approx(5e-6));
    CHECK(p.warmup_steps == 8000);
    CHECK(p.token_budget == 2800);
    CHECK(p.clip_norm == doctest::Approx(5.0));
    CHECK(p.weight_decay == doctest::Approx(0.01));
    CHECK(p.beta1 == doctest::Approx(0.9));
    CHECK(p.beta2 == doctest::Approx(0.999));
    CHECK(p.accumulation == 4);
}

TEST_CASE("one-weight update matches a scalar reference, with clipping") {
    model m;
    net_init(m, micro_model_config());
    model g;
    net_setup(g, micro_model_config());

    const auto pv = collect_params(m);
    const auto gv = collect_params(g);
    size_t target = pv.size();
    for (size_t i = 0; i < pv.size(); ++i) {
        if (pv[i].group == "decoder" && pv[i].size() > 8) {
            target = i;
            break;
        }
    }
    REQUIRE(target < pv.size());

    optimizer_config oc;
    oc.lr        = 0.1;
    oc.clip_norm = 5.0;

    adamw_state st;
    st.reset(m);

    const double g0 = 10.0;  // clipped to 5
    double pr = pv[target].data[3];
    double mr = 0.0, vr = 0.0;
    for (int64_t t = 1; t <= 3; ++t) {
        gv[target].data[3] = (float) g0;
        const double norm = adamw_step(m, g, st, oc, oc.lr, {"decoder"});
        CHECK(norm == doctest::Approx(g0).epsilon(1e-6));

        const double ge = g0 * (oc.clip_norm / g0);
        mr = oc.beta1 * mr + (1.0 - oc.beta1) * ge;
        vr = oc.beta2 * vr + (1.0 - oc.beta2) * ge * ge;
        const double mh = mr / (1.0 - std::pow(oc.beta1, (double) t));
        const double vh = vr / (1.0 - std::pow(oc.beta2, (double) t));
        pr -= oc.lr * (mh / (std::sqrt(vh) + oc.eps) + oc.weight_decay * pr);

        CHECK(pv[target].data[3] == doctest::Approx(pr).epsilon(1e-5));
        CHECK(st.step == t);
    }
}

TEST_CASE("pre-clip norm covers the trainable groups only") {
    model m;
    net_init(m, micro_model_config());
    model g;
    net_setup(g, micro_model_config());

    double expect_sq = 0.0;
    rng    r(81);
    for (const auto & view : collect_params(g)) {
        for (int64_t k = 0; k < view.size(); ++k) {
            view.data[k] = (float) r.normal(0.0, view.group == "encoder" ? 100.0 : 0.1);
            if (view.group == "decoder") {
                expect_sq += (double) view.data[k] * (double) view.data[k];
            }
        }
    }
    adamw_state st;
    st.reset(m);
    optimizer_config oc;
    const double norm = adamw_step(m, g, st, oc, 1e-3, {"decoder"});
    CHECK(norm == doctest::Approx(std::sqrt(expect_sq)).epsilon(1e-6));
}

TEST_CASE("frozen groups stay bit-identical") {
    model m;
    net_init(m, micro_model_config());
    model g;
    net_setup(g, micro_model_config());

    rng r(82);
    for (const auto & view : collect_params(g)) {
        for (int64_t k = 0; k < view.size(); ++k) {
            view.data[k] = (float) r.normal(0.0, 0.5);
        }
    }

    std::map<std::string, std::vector<float>> before;
    for (const auto & view : collect_params(m)) {
        auto & buf = before[view.name];
        buf.assign(view.data, view.data + view.size());
    }

    adamw_state st;
    st.reset(m);
    optimizer_config oc;
    adamw_step(m, g, st, oc, 1e-2, {"decoder"});

    bool decoder_moved = false;
    for (const auto & view : collect_params(m)) {
        const auto & buf = before[view.name];
        const bool same = std::memcmp(buf.data(), view.data,
                                      sizeof(float) * (size_t) view.size()) == 0;
        if (view.group == "decoder") {
            decoder_moved = decoder_moved || !same;
        } else {
            CHECK(same);
        }
    }
    CHECK(decoder_moved);
}

// ---------------------------------------------------------------------------
// stage configuration

TEST_CASE("stage configs enforce the freezing contract") {
    stage_config c;
    c.stage     = train_stage_kind::s1_align;
    c.mixture   = {{sample_task::understanding, 1.0}};
    c.trainable = {"decoder"};
    CHECK(thrown_status([&] { validate_stage_config(c); }) == ECHAT_ERR_CURRICULUM);
    c.trainable = {"encoder", "adapter"};
    CHECK_NOTHROW(validate_stage_config(c));

    c.stage = train_stage_kind::s2_tts;
    c.mixture = {{sample_task::tts, 1.0}};
    c.trainable = {"encoder", "adapter", "decoder"};
    CHECK(thrown_status([&] { validate_stage_config(c); }) == ECHAT_ERR_CURRICULUM);
    c.trainable = {"decoder"};
    CHECK_NOTHROW(validate_stage_config(c));

    c.mixture[sample_task::empathy] = 1.0;  // not reachable before s3
    CHECK(thrown_status([&] { validate_stage_config(c); }) == ECHAT_ERR_CURRICULUM);
    c.mixture.erase(sample_task::empathy);

    c.mixture[sample_task::tts] = 0.0;
    CHECK(thrown_status([&] { validate_stage_config(c); }) == ECHAT_ERR_INVALID_CONFIG);
    c.mixture[sample_task::tts] = 1.0;

    c.trainable = {};
    CHECK(thrown_status([&] { validate_stage_config(c); }) == ECHAT_ERR_INVALID_CONFIG);
    c.trainable = {"decoder", "mystery"};
    CHECK(thrown_status([&] { validate_stage_config(c); }) == ECHAT_ERR_INVALID_CONFIG);
    c.trainable = {"decoder"};

    c.opt.accumulation = 0;
    CHECK(thrown_status([&] { validate_stage_config(c); }) == ECHAT_ERR_INVALID_CONFIG);
    c.opt.accumulation = 8;
    c.opt.token_budget = 4;
    CHECK(thrown_status([&] { validate_stage_config(c); }) == ECHAT_ERR_INVALID_CONFIG);
}

TEST_CASE("default curriculum shape and ablations") {
    const optimizer_config opt = desk_optimizer();

    const auto full = default_curriculum(opt, curriculum_ablation::none, 5);
    REQUIRE(full.size() == 8);
    CHECK(full.front().stage == train_stage_kind::s1_align);
    CHECK(full.back().stage == train_stage_kind::s3_distill);
    std::set<uint64_t> seeds;
    for (size_t i = 0; i < full.size(); ++i) {
        CHECK_NOTHROW(validate_stage_config(full[i]));
        seeds.insert(full[i].seed);
        if (i > 0) {
            CHECK((int32_t) full[i].stage > (int32_t) full[i - 1].stage);
        }
    }
    CHECK(seeds.size() == full.size());

    // retention mixtures
    const auto & tts = full[4];
    CHECK(tts.stage == train_stage_kind::s2_tts);
    CHECK(tts.mixture.at(sample_task::understanding) == doctest::Approx(0.1));
    CHECK(tts.epochs == 2);
    const auto & s3 = full[6];
    CHECK(s3.stage == train_stage_kind::s3_think);
    CHECK(s3.think);
    CHECK(s3.mixture.at(sample_task::empathy) == doctest::Approx(1.0));
    CHECK(s3.mixture.at(sample_task::s2s_plain) == doctest::Approx(0.2));
    CHECK(s3.mixture.at(sample_task::understanding) == doctest::Approx(0.02));

    const auto lean = default_curriculum(opt, curriculum_ablation::skip_s1, 5);
    REQUIRE(lean.size() == 4);
    CHECK(lean.front().stage == train_stage_kind::s2_tts);

    const auto blunt = default_curriculum(opt, curriculum_ablation::no_think, 5);
    REQUIRE(blunt.size() == 8);
    CHECK(!blunt[6].think);

    const stage_config warm = default_warmup_config(opt, 5);
    CHECK(warm.stage == train_stage_kind::text_warmup);
    CHECK(warm.trainable == std::set<std::string>{"decoder"});
    CHECK(warm.mixture.count(sample_task::tts) == 1);
    CHECK(warm.mixture.count(sample_task::t2t) == 1);
    CHECK_NOTHROW(validate_stage_config(warm));
}

// ---------------------------------------------------------------------------
// epoch planning

static stage_config micro_stage(train_stage_kind k) {
    stage_config c;
    c.stage = k;
    c.seed  = 91;
    switch (k) {
        case train_stage_kind::s2_tts:
            c.mixture   = {{sample_task::tts, 1.0},
                           {sample_task::t2t, 1.0},
                           {sample_task::understanding, 0.1}};
            c.trainable = {"decoder"};
            break;
        case train_stage_kind::s2_s2s:
            c.mixture   = {{sample_task::s2s_plain, 1.0}, {sample_task::tts, 1.0}};
            c.trainable = {"encoder", "adapter", "decoder"};
            break;
        default:
            c.mixture   = {{sample_task::understanding, 1.0}};
            c.trainable = {"encoder", "adapter"};
            break;
    }
    return c;
}

TEST_CASE("epoch plans are deterministic with exact streaming quotas") {
    const corpus_data & data = micro_corpus();
    const stage_config cfg   = micro_stage(train_stage_kind::s2_tts);

    const auto plan1  = plan_stage_epoch(data, cfg, 1);
    const auto plan1b = plan_stage_epoch(data, cfg, 1);
    REQUIRE(plan1.size() == plan1b.size());
    for (size_t i = 0; i < plan1.size(); ++i) {
        CHECK(plan1[i].task == plan1b[i].task);
        CHECK(plan1[i].index == plan1b[i].index);
        CHECK(plan1[i].streaming == plan1b[i].streaming);
    }

    // mixture arithmetic: full tts + full t2t + 10% of understanding
    std::map<sample_task, int64_t> counts;
    for (const auto & it : plan1) {
        counts[it.task] += 1;
        CHECK(!it.streaming);  // epoch 1 is non-streaming
    }
    CHECK(counts[sample_task::tts] == 12);
    CHECK(counts[sample_task::t2t] == 10);
    CHECK(counts[sample_task::understanding] == 2);

    const auto plan2 = plan_stage_epoch(data, cfg, 2);
    int64_t streaming = 0;
    for (const auto & it : plan2) {
        if (it.streaming) {
            ++streaming;
            CHECK(it.task == sample_task::tts);  // only the tts split is eligible
        }
    }
    CHECK(streaming == 6);  // llround(0.5 * 12), exact

    // the two epochs visit the same splits in different orders
    bool same_order = plan1.size() == plan2.size();
    if (same_order) {
        for (size_t i = 0; i < plan1.size(); ++i) {
            same_order = same_order && plan1[i].task == plan2[i].task &&
                         plan1[i].index == plan2[i].index;
        }
    }
    CHECK(!same_order);

    // dialogue stages stream dialogue, not tts
    const auto plan_s2s = plan_stage_epoch(data, micro_stage(train_stage_kind::s2_s2s), 2);
    int64_t dlg_stream = 0;
    for (const auto & it : plan_s2s) {
        if (it.streaming) {
            ++dlg_stream;
            CHECK(it.task == sample_task::s2s_plain);
        }
    }
    CHECK(dlg_stream == 5);  // llround(0.5 * 10)
}

// ---------------------------------------------------------------------------
// stage runner

static stage_config s1_run_config() {
    stage_config c    = micro_stage(train_stage_kind::s1_align);
    c.opt.token_budget = 256;
    c.opt.accumulation = 2;
    c.opt.warmup_steps = 4;
    c.seed             = 17;
    return c;
}

TEST_CASE("stage runner: budget packing, metrics, determinism") {
    const corpus_data & data = micro_corpus();
    const stage_config cfg   = s1_run_config();

    model m0;
    net_init(m0, micro_model_config());

    model       m1  = m0;
    const auto  dir = tmp_dir("stage-run");
    const stage_result res = train_stage(m1, data, cfg, dir, "");

    CHECK(res.stage == train_stage_kind::s1_align);
    CHECK(res.samples == 24);
    CHECK(res.streaming_samples == 0);
    CHECK(res.steps >= 2);
    CHECK(path_exists(res.checkpoint_path));
    CHECK(path_exists(res.metrics_path));

    // checkpoint hash matches the file bytes
    const auto bytes = read_binary_file(res.checkpoint_path);
    CHECK(res.checkpoint_hash == hash_hex(hash_bytes(bytes.data(), bytes.size())));

    // replay the metrics records against the runner's laws
    std::ifstream in(res.metrics_path);
    std::string   line;
    int64_t       step = 0, samples = 0, tokens = 0;
    double        last_loss = 0.0, first_loss = 0.0;
    while (std::getline(in, line)) {
        const auto rec = nlohmann::json::parse(line);
        step += 1;
        CHECK(rec.at("step").get<int64_t>() == step);
        CHECK(rec.at("stage").get<std::string>() == "s1_align");
        CHECK(rec.at("tokens").get<int64_t>() <= cfg.opt.token_budget);
        CHECK(rec.at("samples").get<int64_t>() >= 1);
        CHECK(rec.at("lr").get<double>() ==
              doctest::Approx(warmup_lr(cfg.opt, step)).epsilon(1e-12));
        const double loss = rec.at("loss").get<double>();
        CHECK(std::isfinite(loss));
        const double gn  = rec.at("grad_norm").get<double>();
        const double gnc = rec.at("grad_norm_clipped").get<double>();
        CHECK(gnc <= cfg.opt.clip_norm + 1e-12);
        CHECK(gnc == doctest::Approx(std::min(gn, cfg.opt.clip_norm)));
        CHECK(rec.at("roles").contains("asr_text"));
        samples += rec.at("samples").get<int64_t>();
        tokens += rec.at("tokens").get<int64_t>();
        if (step == 1) {
            first_loss = loss;
        }
        last_loss = loss;
    }
    CHECK(step == res.steps);
    CHECK(samples == res.samples);
    CHECK(tokens == res.tokens);
    CHECK(res.first_loss == doctest::Approx(first_loss));
    CHECK(res.final_loss == doctest::Approx(last_loss));

    // the run is a pure function of (model, corpus, config)
    model      m2   = m0;
    const auto dir2 = tmp_dir("stage-run-b");
    const stage_result res2 = train_stage(m2, data, cfg, dir2, "");
    CHECK(res2.checkpoint_hash == res.checkpoint_hash);
    CHECK(read_text_file(res2.metrics_path) == read_text_file(res.metrics_path));

    // only the configured groups moved
    const auto before = collect_params(m0);
    const auto after  = collect_params(m1);
    bool       front_moved = false;
    for (size_t i = 0; i < before.size(); ++i) {
        const bool same = std::memcmp(before[i].data, after[i].data,
                                      sizeof(float) * (size_t) before[i].size()) == 0;
        if (before[i].group == "decoder") {
            CHECK(same);
        } else {
            front_moved = front_moved || !same;
        }
    }
    CHECK(front_moved);
}

TEST_CASE("stage runner rejects samples over the mini-batch budget") {
    const corpus_data & data = micro_corpus();
    stage_config cfg   = s1_run_config();
    cfg.opt.token_budget = 32;  // mini budget 16 < any understanding layout
    cfg.opt.accumulation = 2;

    model m;
    net_init(m, micro_model_config());
    CHECK(thrown_status([&] { train_stage(m, data, cfg, tmp_dir("stage-cap"), ""); }) ==
          ECHAT_ERR_CAPACITY);
}

TEST_CASE("numeric failures name the last good checkpoint") {
    const corpus_data & data = micro_corpus();
    const stage_config cfg   = s1_run_config();

    model m;
    net_init(m, micro_model_config());
    // poison one encoder weight so the forward pass goes non-finite
    for (const auto & view : collect_params(m)) {
        if (view.group == "encoder") {
            view.data[0] = std::numeric_limits<float>::quiet_NaN();
            break;
        }
    }
    try {
        train_stage(m, data, cfg, tmp_dir("stage-nan"), "runs/ckpt-s1_align.bin");
        FAIL("expected a numeric failure");
    } catch (const error & e) {
        CHECK(e.st == ECHAT_ERR_NUMERIC);
        CHECK(std::string(e.what()).find("last good checkpoint") != std::string::npos);
        CHECK(std::string(e.what()).find("runs/ckpt-s1_align.bin") != std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// curriculum runner

TEST_CASE("curriculum rejects out-of-order stages") {
    const corpus_data & data = micro_corpus();
    model m;
    net_init(m, micro_model_config());

    std::vector<stage_config> bad = {micro_stage(train_stage_kind::s2_tts),
                                     micro_stage(train_stage_kind::s1_align)};
    CHECK(thrown_status([&] { run_curriculum(m, data, bad, tmp_dir("cur-bad")); }) ==
          ECHAT_ERR_CURRICULUM);

    std::vector<stage_config> dup = {micro_stage(train_stage_kind::s1_align),
                                     micro_stage(train_stage_kind::s1_align)};
    CHECK(thrown_status([&] { run_curriculum(m, data, dup, tmp_dir("cur-dup")); }) ==
          ECHAT_ERR_CURRICULUM);

    CHECK(thrown_status([&] { run_curriculum(m, data, {}, tmp_dir("cur-empty")); }) ==
          ECHAT_ERR_CURRICULUM);
}

TEST_CASE("full micro curriculum: eight stages, checkpoints, manifest") {
    const corpus_data & data = micro_corpus();

    optimizer_config opt = desk_optimizer();
    opt.token_budget     = 512;
    opt.accumulation     = 2;
    opt.warmup_steps     = 8;

    auto stages = default_curriculum(opt, curriculum_ablation::none, 33);
    REQUIRE(stages.size() == 8);

    model m;
    net_init(m, micro_model_config());
    const auto dir = tmp_dir("cur-full");
    const curriculum_result res = run_curriculum(m, data, stages, dir);

    REQUIRE(res.stages.size() == 8);
    for (size_t i = 0; i < res.stages.size(); ++i) {
        CHECK(res.stages[i].stage == stages[i].stage);
        CHECK(res.stages[i].steps >= 1);
        CHECK(path_exists(res.stages[i].checkpoint_path));
        CHECK(path_exists(res.stages[i].metrics_path));
        CHECK(std::isfinite(res.stages[i].final_loss));
    }

    // streaming quotas per stage equal the planner's own arithmetic
    for (size_t i = 0; i < stages.size(); ++i) {
        int64_t expect = 0;
        for (int32_t e = 1; e <= stages[i].epochs; ++e) {
            for (const auto & it : plan_stage_epoch(data, stages[i], e)) {
                expect += it.streaming ? 1 : 0;
            }
        }
        CHECK(res.stages[i].streaming_samples == expect);
    }
    CHECK(res.stages[4].stage == train_stage_kind::s2_tts);
    CHECK(res.stages[4].streaming_samples == 6);  // half of 12 tts, epoch 2

    // the distillation stage answered every empathy query or fell back
    const stage_result & distill = res.stages.back();
    CHECK(distill.stage == train_stage_kind::s3_distill);
    CHECK(distill.distill_fallbacks >= 0);
    CHECK(distill.distill_fallbacks <= 2 * 12);

    REQUIRE(path_exists(res.manifest_path));
    const auto manifest = nlohmann::json::parse(read_text_file(res.manifest_path));
    CHECK(manifest.at("stage_count").get<int64_t>() == 8);
    CHECK(manifest.at("stages").size() == 8);
    CHECK(manifest.at("final_checkpoint").get<std::string>() ==
          res.stages.back().checkpoint_path);
    for (size_t i = 0; i < 8; ++i) {
        const auto & e = manifest.at("stages").at(i);
        CHECK(e.at("stage").get<std::string>() == train_stage_name(stages[i].stage));
        CHECK(e.at("checkpoint_hash").get<std::string>() ==
              res.stages[i].checkpoint_hash);
    }

    // every checkpoint loads back and the final one equals the live model
    const model reloaded = read_checkpoint(res.stages.back().checkpoint_path);
    const auto  live = collect_params(m);
    auto        back = collect_params(const_cast<model &>(reloaded));
    REQUIRE(live.size() == back.size());
    for (size_t i = 0; i < live.size(); ++i) {
        CHECK(std::memcmp(live[i].data, back[i].data,
                          sizeof(float) * (size_t) live[i].size()) == 0);
    }
}
