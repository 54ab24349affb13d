#include "echat-train.h"

#include "echat-common.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

using json = nlohmann::ordered_json;

namespace echat {

// ---------------------------------------------------------------------------
// names and tables

const char * role_kind_name(role_kind r) {
    switch (r) {
        case role_kind::ignore:               return "ignore";
        case role_kind::asr_text:             return "asr_text";
        case role_kind::paralinguistic_label: return "paralinguistic_label";
        case role_kind::response_text:        return "response_text";
        case role_kind::speech:               return "speech";
        case role_kind::think:                return "think";
    }
    return "?";
}

uint32_t role_bit(role_kind r) { return 1u << (uint32_t) r; }
bool     role_active(uint32_t set, role_kind r) { return (set & role_bit(r)) != 0; }

const char * train_stage_name(train_stage_kind s) {
    switch (s) {
        case train_stage_kind::text_warmup:   return "text_warmup";
        case train_stage_kind::s1_align:      return "s1_align";
        case train_stage_kind::s1_asr_p:      return "s1_asr_p";
        case train_stage_kind::s1_only_p:     return "s1_only_p";
        case train_stage_kind::s1_full_label: return "s1_full_label";
        case train_stage_kind::s2_tts:        return "s2_tts";
        case train_stage_kind::s2_s2s:        return "s2_s2s";
        case train_stage_kind::s3_think:      return "s3_think";
        case train_stage_kind::s3_distill:    return "s3_distill";
    }
    return "?";
}

std::optional<train_stage_kind> train_stage_from_name(std::string_view s) {
    for (int32_t i = 0; i < TRAIN_STAGE_COUNT; ++i) {
        if (s == train_stage_name((train_stage_kind) i)) {
            return (train_stage_kind) i;
        }
    }
    return std::nullopt;
}

uint32_t stage_loss_roles(train_stage_kind s) {
    const uint32_t dialogue = role_bit(role_kind::response_text) | role_bit(role_kind::speech);
    switch (s) {
        case train_stage_kind::text_warmup:
            return dialogue;
        case train_stage_kind::s1_align:
        case train_stage_kind::s1_asr_p:
        case train_stage_kind::s1_only_p:
        case train_stage_kind::s1_full_label:
            return role_bit(role_kind::asr_text) | role_bit(role_kind::paralinguistic_label);
        case train_stage_kind::s2_tts:
            // plain tts has speech targets only; the interleave scaffold adds
            // supervised text positions
            return dialogue;
        case train_stage_kind::s2_s2s:
        case train_stage_kind::s3_distill:
            return dialogue;
        case train_stage_kind::s3_think:
            return dialogue | role_bit(role_kind::think);
    }
    return 0;
}

bool stage_allows_task(train_stage_kind s, sample_task t) {
    switch (s) {
        case train_stage_kind::text_warmup:
            return t == sample_task::tts || t == sample_task::t2t;
        case train_stage_kind::s1_align:
        case train_stage_kind::s1_asr_p:
        case train_stage_kind::s1_only_p:
        case train_stage_kind::s1_full_label:
            return t == sample_task::understanding;
        case train_stage_kind::s2_tts:
            return t == sample_task::tts || t == sample_task::t2t ||
                   t == sample_task::understanding;
        case train_stage_kind::s2_s2s:
            return t != sample_task::empathy;
        case train_stage_kind::s3_think:
        case train_stage_kind::s3_distill:
            return true;
    }
    return false;
}

// samples that switch to the interleaved layout once streaming is introduced
static bool stage_streaming_eligible(train_stage_kind s, sample_task t) {
    switch (s) {
        case train_stage_kind::s2_tts:
            return t == sample_task::tts;
        case train_stage_kind::s2_s2s:
        case train_stage_kind::s3_think:
        case train_stage_kind::s3_distill:
            return t == sample_task::s2s_plain || t == sample_task::empathy;
        default:
            return false;
    }
}

// ---------------------------------------------------------------------------
// layout assembly

void apply_unk_mask(target_layout & lay, const vocab_layout & v) {
    for (size_t i = 0; i < lay.tokens.size(); ++i) {
        if (lay.tokens[i] == v.unk_label) {
            lay.mask[i] = 0;
        }
    }
}

void validate_layout(const target_layout & lay, const vocab_layout & v) {
    const size_t n = lay.input.size();
    check(n >= 2, ECHAT_ERR_INVALID_ARGUMENT, "layout: input needs at least two positions");
    check(lay.tokens.size() == n - 1 && lay.roles.size() == n - 1 && lay.mask.size() == n - 1,
          ECHAT_ERR_INVALID_ARGUMENT, "layout: tokens/roles/mask must have input length - 1");

    int32_t soft = 0;
    for (int32_t id : lay.input) {
        if (id == -1) {
            ++soft;
        } else {
            check(id >= 0 && id < v.total_size, ECHAT_ERR_DOMAIN,
                  "layout: input token outside the vocabulary");
        }
    }
    check(soft == lay.soft_rows, ECHAT_ERR_INVALID_ARGUMENT,
          "layout: soft_rows does not match the soft slots in input");

    for (size_t i = 0; i + 1 < n; ++i) {
        check(lay.tokens[i] >= 0 && lay.tokens[i] < v.total_size, ECHAT_ERR_DOMAIN,
              "layout: target token outside the vocabulary");
        check((int32_t) lay.roles[i] >= 0 && (int32_t) lay.roles[i] < ROLE_COUNT,
              ECHAT_ERR_DOMAIN, "layout: bad role");
        check(lay.mask[i] <= 1, ECHAT_ERR_DOMAIN, "layout: mask must be 0/1");
        if (lay.mask[i]) {
            check(lay.roles[i] != role_kind::ignore, ECHAT_ERR_INVALID_ARGUMENT,
                  "layout: supervised position with the ignore role");
            check(lay.tokens[i] != v.unk_label, ECHAT_ERR_INVALID_ARGUMENT,
                  "layout: unknown-label target left unmasked");
        }
    }
}

using target_seq = std::vector<std::pair<int32_t, role_kind>>;

static target_layout finish_layout(const prompt_spec & ps, const target_seq & targets,
                                   const vocab_layout & v) {
    check(!targets.empty(), ECHAT_ERR_INVALID_ARGUMENT, "layout: empty target region");

    target_layout lay;
    lay.task      = ps.task;
    lay.soft_rows = ps.speech_rows;
    lay.input     = format_prompt_tokens(ps, v);

    const size_t plen = lay.input.size();
    for (const auto & [tok, role] : targets) {
        lay.input.push_back(tok);
    }
    const size_t n = lay.input.size();
    lay.tokens.resize(n - 1);
    lay.roles.resize(n - 1);
    lay.mask.resize(n - 1);
    for (size_t i = 0; i + 1 < n; ++i) {
        if (i + 1 < plen) {
            const int32_t nxt = lay.input[i + 1];
            lay.tokens[i] = nxt < 0 ? v.pad : nxt;
            lay.roles[i]  = role_kind::ignore;
            lay.mask[i]   = 0;
        } else {
            const auto & [tok, role] = targets[i + 1 - plen];
            lay.tokens[i] = tok;
            lay.roles[i]  = role;
            lay.mask[i]   = 1;
        }
    }
    apply_unk_mask(lay, v);
    validate_layout(lay, v);
    return lay;
}

static int32_t planted_label_sym(const cue_spec & c, cue_field f) {
    switch (f) {
        case cue_field::emotion: return sym::of_emotion(c.emotion);
        case cue_field::gender:  return sym::of_gender(c.gender);
        case cue_field::age:     return sym::of_age(c.age);
        case cue_field::event:   return sym::of_event(c.event);
    }
    fail(ECHAT_ERR_DOMAIN, "bad cue field");
}

static int32_t supervised_label_sym(const cue_labels & l, cue_field f, const vocab_layout & v) {
    switch (f) {
        case cue_field::emotion: return l.emotion ? sym::of_emotion(*l.emotion) : v.unk_label;
        case cue_field::gender:  return l.gender ? sym::of_gender(*l.gender) : v.unk_label;
        case cue_field::age:     return l.age ? sym::of_age(*l.age) : v.unk_label;
        case cue_field::event:   return l.event ? sym::of_event(*l.event) : v.unk_label;
    }
    fail(ECHAT_ERR_DOMAIN, "bad cue field");
}

static std::vector<int32_t> speech_ids(const std::vector<int32_t> & indices,
                                       const vocab_layout & v) {
    std::vector<int32_t> out;
    out.reserve(indices.size());
    for (int32_t k : indices) {
        out.push_back(v.speech_token(k));
    }
    return out;
}

understand_mode s1_understand_mode(train_stage_kind s, int32_t split_index) {
    int32_t introduced = 0;
    switch (s) {
        case train_stage_kind::s1_align:      introduced = 1; break;
        case train_stage_kind::s1_asr_p:      introduced = 2; break;
        case train_stage_kind::s1_only_p:     introduced = 3; break;
        case train_stage_kind::s1_full_label: introduced = 4; break;
        default:
            fail(ECHAT_ERR_INVALID_ARGUMENT,
                 "understanding format schedule applies to the s1 stages only");
    }
    check(split_index >= 0, ECHAT_ERR_INVALID_ARGUMENT, "negative split index");
    return (understand_mode) (split_index % introduced);
}

target_layout build_understanding_targets(const dialogue_sample & s, understand_mode mode,
                                          int32_t audio_frames, const vocab_layout & v) {
    check(s.has_audio, ECHAT_ERR_INVALID_ARGUMENT,
          "understanding targets need a spoken query");
    check(audio_frames >= 1, ECHAT_ERR_INVALID_ARGUMENT, "understanding targets need audio frames");
    check(!s.query_symbols.empty(), ECHAT_ERR_INVALID_ARGUMENT, "sample has no query text");

    prompt_spec ps;
    ps.task        = task_kind::understand;
    ps.umode       = mode;
    ps.speech_rows = adapter_out_len(audio_frames);

    target_seq t;
    const auto add_transcript = [&] {
        for (int32_t q : s.query_symbols) {
            t.emplace_back(q, role_kind::asr_text);
        }
    };
    const auto add_all_planted = [&] {
        for (int32_t f = 0; f < 4; ++f) {
            t.emplace_back(planted_label_sym(s.cues, (cue_field) f),
                           role_kind::paralinguistic_label);
        }
    };

    switch (mode) {
        case understand_mode::transcript:
            add_transcript();
            break;
        case understand_mode::transcript_single: {
            int32_t fields = 0;
            cue_field f    = cue_field::emotion;
            for (int32_t i = 0; i < 4; ++i) {
                if (s.labels.has((cue_field) i)) {
                    ++fields;
                    f = (cue_field) i;
                }
            }
            check(fields == 1, ECHAT_ERR_INVALID_ARGUMENT,
                  "single-label format needs exactly one supervised field");
            add_transcript();
            t.emplace_back(supervised_label_sym(s.labels, f, v), role_kind::paralinguistic_label);
            break;
        }
        case understand_mode::labels_only:
            add_all_planted();
            break;
        case understand_mode::full_label:
            add_transcript();
            add_all_planted();
            break;
    }
    return finish_layout(ps, t, v);
}

target_layout build_tts_targets(const dialogue_sample & s, bool interleaved,
                                const vocab_layout & v) {
    check(!s.has_audio, ECHAT_ERR_INVALID_ARGUMENT, "tts targets need a text-input sample");
    check(!s.query_symbols.empty(), ECHAT_ERR_INVALID_ARGUMENT, "sample has no query text");
    check(!s.response_speech.empty(), ECHAT_ERR_INVALID_ARGUMENT, "sample has no speech tokens");

    prompt_spec ps;
    ps.task         = task_kind::tts;
    ps.text_payload = s.query_symbols;

    const std::vector<int32_t> sp = speech_ids(s.response_speech, v);

    target_seq t;
    if (!interleaved) {
        for (int32_t id : sp) {
            t.emplace_back(id, role_kind::speech);
        }
        t.emplace_back(v.speech_boundary, role_kind::speech);
    } else {
        // scaffold: the output interleaves the input text with its speech
        std::vector<int32_t> text = s.query_symbols;
        text.push_back(v.eot);
        for (int32_t id : mux_interleaved(text, sp, v, interleave_pattern{})) {
            const token_kind k = classify_token(v, id);
            t.emplace_back(id, k == token_kind::speech || k == token_kind::speech_boundary
                                   ? role_kind::speech
                                   : role_kind::response_text);
        }
    }
    return finish_layout(ps, t, v);
}

target_layout build_t2t_targets(const dialogue_sample & s, const vocab_layout & v) {
    check(!s.has_audio, ECHAT_ERR_INVALID_ARGUMENT, "t2t targets need a text-input sample");
    check(!s.query_symbols.empty(), ECHAT_ERR_INVALID_ARGUMENT, "sample has no query text");
    check(!s.response_symbols.empty(), ECHAT_ERR_INVALID_ARGUMENT, "sample has no reply text");

    prompt_spec ps;
    ps.task         = task_kind::t2t;
    ps.text_payload = s.query_symbols;

    target_seq t;
    for (int32_t id : s.response_symbols) {
        t.emplace_back(id, role_kind::response_text);
    }
    t.emplace_back(v.eot, role_kind::response_text);
    return finish_layout(ps, t, v);
}

target_layout build_dialogue_targets(const dialogue_sample & s, bool think, bool streaming,
                                     int32_t audio_frames, const vocab_layout & v) {
    check(s.has_audio, ECHAT_ERR_INVALID_ARGUMENT, "dialogue targets need a spoken query");
    check(audio_frames >= 1, ECHAT_ERR_INVALID_ARGUMENT, "dialogue targets need audio frames");
    check(!s.response_symbols.empty(), ECHAT_ERR_INVALID_ARGUMENT, "sample has no reply text");
    check(!s.response_speech.empty(), ECHAT_ERR_INVALID_ARGUMENT, "sample has no speech tokens");

    prompt_spec ps;
    ps.task = think ? (streaming ? task_kind::s2s_interleave_think : task_kind::s2s_think)
                    : (streaming ? task_kind::s2s_interleave : task_kind::s2s);
    ps.speech_rows = adapter_out_len(audio_frames);

    target_seq t;
    if (think) {
        // the reasoning span transcribes the query and names the cue labels;
        // unsupervised fields surface as the unknown placeholder and are
        // masked out by apply_unk_mask
        think_span span;
        span.transcript = s.query_symbols;
        span.labels     = s.labels;
        for (int32_t id : format_think(span, v)) {
            t.emplace_back(id, role_kind::think);
        }
    }

    const std::vector<int32_t> sp = speech_ids(s.response_speech, v);
    if (!streaming) {
        for (int32_t id : s.response_symbols) {
            t.emplace_back(id, role_kind::response_text);
        }
        t.emplace_back(v.eot, role_kind::response_text);
        for (int32_t id : sp) {
            t.emplace_back(id, role_kind::speech);
        }
        t.emplace_back(v.speech_boundary, role_kind::speech);
    } else {
        std::vector<int32_t> text = s.response_symbols;
        text.push_back(v.eot);
        for (int32_t id : mux_interleaved(text, sp, v, interleave_pattern{})) {
            const token_kind k = classify_token(v, id);
            t.emplace_back(id, k == token_kind::speech || k == token_kind::speech_boundary
                                   ? role_kind::speech
                                   : role_kind::response_text);
        }
    }
    return finish_layout(ps, t, v);
}

target_layout build_stage_targets(train_stage_kind stage, const dialogue_sample & s,
                                  int32_t split_index, bool streaming, bool think,
                                  int32_t audio_frames, const vocab_layout & v) {
    check(stage_allows_task(stage, s.tag), ECHAT_ERR_CURRICULUM,
          std::string("stage ") + train_stage_name(stage) + " cannot train on task " +
              sample_task_name(s.tag));
    switch (s.tag) {
        case sample_task::understanding: {
            const bool s1 = stage >= train_stage_kind::s1_align &&
                            stage <= train_stage_kind::s1_full_label;
            const understand_mode mode =
                s1 ? s1_understand_mode(stage, split_index) : understand_mode::full_label;
            return build_understanding_targets(s, mode, audio_frames, v);
        }
        case sample_task::tts:
            return build_tts_targets(s, streaming, v);
        case sample_task::t2t:
            return build_t2t_targets(s, v);
        case sample_task::s2s_plain:
        case sample_task::empathy: {
            const bool th = stage == train_stage_kind::s3_think && think;
            return build_dialogue_targets(s, th, streaming, audio_frames, v);
        }
    }
    fail(ECHAT_ERR_DOMAIN, "bad sample task");
}

// ---------------------------------------------------------------------------
// loss

static sample_loss loss_impl(const nn::mat<float> & logits, const target_layout & lay,
                             uint32_t roles, double scale, nn::mat<float> * d_logits) {
    const auto L = (int64_t) lay.tokens.size();
    check(logits.rows() >= L, ECHAT_ERR_INVALID_ARGUMENT,
          "loss: logits have fewer rows than the layout");
    const int64_t V = logits.cols();

    if (d_logits) {
        d_logits->resize(logits.rows(), V);
        d_logits->setZero();
    }

    sample_loss out;
    for (int64_t i = 0; i < L; ++i) {
        if (!lay.mask[(size_t) i]) {
            continue;
        }
        const role_kind r = lay.roles[(size_t) i];
        if (!role_active(roles, r)) {
            continue;
        }
        const int32_t tgt = lay.tokens[(size_t) i];
        check(tgt >= 0 && tgt < V, ECHAT_ERR_DOMAIN, "loss: target outside the logit range");

        double mx = -1e300;
        for (int64_t c = 0; c < V; ++c) {
            mx = std::max(mx, (double) logits(i, c));
        }
        double se = 0.0;
        for (int64_t c = 0; c < V; ++c) {
            se += std::exp((double) logits(i, c) - mx);
        }
        const double lse = mx + std::log(se);
        out.sum[(size_t) r] += lse - (double) logits(i, tgt);
        out.count[(size_t) r] += 1;
    }
    for (int32_t r = 0; r < ROLE_COUNT; ++r) {
        if (out.count[(size_t) r] > 0 && role_active(roles, (role_kind) r)) {
            out.total += out.sum[(size_t) r] / (double) out.count[(size_t) r];
        }
    }

    if (d_logits) {
        for (int64_t i = 0; i < L; ++i) {
            if (!lay.mask[(size_t) i]) {
                continue;
            }
            const role_kind r = lay.roles[(size_t) i];
            if (!role_active(roles, r) || out.count[(size_t) r] == 0) {
                continue;
            }
            const double w = scale / (double) out.count[(size_t) r];

            double mx = -1e300;
            for (int64_t c = 0; c < V; ++c) {
                mx = std::max(mx, (double) logits(i, c));
            }
            double se = 0.0;
            for (int64_t c = 0; c < V; ++c) {
                se += std::exp((double) logits(i, c) - mx);
            }
            for (int64_t c = 0; c < V; ++c) {
                const double p = std::exp((double) logits(i, c) - mx) / se;
                (*d_logits)(i, c) += (float) (w * p);
            }
            (*d_logits)(i, lay.tokens[(size_t) i]) -= (float) w;
        }
    }
    return out;
}

sample_loss compute_loss(const nn::mat<float> & logits, const target_layout & lay,
                         uint32_t roles) {
    return loss_impl(logits, lay, roles, 1.0, nullptr);
}

sample_loss compute_loss_grad(const nn::mat<float> & logits, const target_layout & lay,
                              uint32_t roles, double scale, nn::mat<float> & d_logits) {
    return loss_impl(logits, lay, roles, scale, &d_logits);
}

// ---------------------------------------------------------------------------
// optimizer

optimizer_config desk_optimizer() { return optimizer_config{}; }

optimizer_config paper_optimizer() {
    optimizer_config cfg;
    cfg.lr           = 5e-6;
    cfg.warmup_steps = 8000;
    cfg.token_budget = 2800;
    return cfg;
}

double warmup_lr(const optimizer_config & cfg, int64_t step) {
    check(step >= 1, ECHAT_ERR_INVALID_ARGUMENT, "optimizer steps are 1-based");
    if (cfg.warmup_steps <= 0) {
        return cfg.lr;
    }
    return cfg.lr * std::min(1.0, (double) step / (double) cfg.warmup_steps);
}

void adamw_state::reset(model & params) {
    const auto views = collect_params(params);
    m.assign(views.size(), {});
    v.assign(views.size(), {});
    for (size_t i = 0; i < views.size(); ++i) {
        m[i].assign((size_t) views[i].size(), 0.0f);
        v[i].assign((size_t) views[i].size(), 0.0f);
    }
    step = 0;
}

double adamw_step(model & params, model & grads, adamw_state & st,
                  const optimizer_config & cfg, double lr,
                  const std::set<std::string> & trainable) {
    const auto pv = collect_params(params);
    const auto gv = collect_params(grads);
    check(pv.size() == gv.size() && pv.size() == st.m.size(), ECHAT_ERR_STATE,
          "optimizer state does not match the model");

    double sq = 0.0;
    for (size_t a = 0; a < pv.size(); ++a) {
        if (!trainable.count(pv[a].group)) {
            continue;
        }
        for (int64_t k = 0; k < gv[a].size(); ++k) {
            const double g = gv[a].data[k];
            sq += g * g;
        }
    }
    const double norm  = std::sqrt(sq);
    const double gscale = norm > cfg.clip_norm && norm > 0.0 ? cfg.clip_norm / norm : 1.0;

    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, (double) st.step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, (double) st.step);

    for (size_t a = 0; a < pv.size(); ++a) {
        if (!trainable.count(pv[a].group)) {
            continue;
        }
        float * p  = pv[a].data;
        float * g  = gv[a].data;
        float * ma = st.m[a].data();
        float * va = st.v[a].data();
        for (int64_t k = 0; k < pv[a].size(); ++k) {
            const double gk = (double) g[k] * gscale;
            const double mk = cfg.beta1 * (double) ma[k] + (1.0 - cfg.beta1) * gk;
            const double vk = cfg.beta2 * (double) va[k] + (1.0 - cfg.beta2) * gk * gk;
            ma[k] = (float) mk;
            va[k] = (float) vk;
            const double mhat = mk / bc1;
            const double vhat = vk / bc2;
            p[k] = (float) ((double) p[k] -
                            lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                  cfg.weight_decay * (double) p[k]));
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// stage configuration

static const std::set<std::string> ALL_GROUPS = {"encoder", "adapter", "decoder"};

void validate_stage_config(const stage_config & cfg) {
    check(!cfg.mixture.empty(), ECHAT_ERR_INVALID_CONFIG, "stage mixture is empty");
    for (const auto & [task, w] : cfg.mixture) {
        check(w > 0.0 && w <= 1.0, ECHAT_ERR_INVALID_CONFIG,
              "mixture weights must be in (0, 1]");
        check(stage_allows_task(cfg.stage, task), ECHAT_ERR_CURRICULUM,
              std::string("stage ") + train_stage_name(cfg.stage) +
                  " cannot train on task " + sample_task_name(task));
    }
    check(!cfg.trainable.empty(), ECHAT_ERR_INVALID_CONFIG, "no trainable groups");
    for (const auto & g : cfg.trainable) {
        check(ALL_GROUPS.count(g) != 0, ECHAT_ERR_INVALID_CONFIG,
              "unknown parameter group: " + g);
    }

    // the progression's freezing contract
    const std::set<std::string> decoder_only = {"decoder"};
    const std::set<std::string> front_end    = {"encoder", "adapter"};
    switch (cfg.stage) {
        case train_stage_kind::text_warmup:
        case train_stage_kind::s2_tts:
            check(cfg.trainable == decoder_only, ECHAT_ERR_CURRICULUM,
                  std::string(train_stage_name(cfg.stage)) +
                      " trains the decoder only (speech front-end frozen)");
            break;
        case train_stage_kind::s1_align:
        case train_stage_kind::s1_asr_p:
        case train_stage_kind::s1_only_p:
        case train_stage_kind::s1_full_label:
            check(cfg.trainable == front_end, ECHAT_ERR_CURRICULUM,
                  "understanding stages train encoder+adapter with the decoder frozen");
            break;
        default:
            break;
    }

    check(cfg.epochs >= 1, ECHAT_ERR_INVALID_CONFIG, "epochs must be >= 1");
    check(cfg.streaming_fraction >= 0.0 && cfg.streaming_fraction <= 1.0,
          ECHAT_ERR_INVALID_CONFIG, "streaming_fraction must be in [0, 1]");

    const optimizer_config & o = cfg.opt;
    check(o.lr > 0.0 && o.clip_norm > 0.0 && o.eps > 0.0, ECHAT_ERR_INVALID_CONFIG,
          "lr, clip_norm and eps must be positive");
    check(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0,
          ECHAT_ERR_INVALID_CONFIG, "betas must be in [0, 1)");
    check(o.weight_decay >= 0.0, ECHAT_ERR_INVALID_CONFIG, "weight_decay must be >= 0");
    check(o.warmup_steps >= 0, ECHAT_ERR_INVALID_CONFIG, "warmup_steps must be >= 0");
    check(o.accumulation >= 1, ECHAT_ERR_INVALID_CONFIG, "accumulation must be >= 1");
    check(o.token_budget >= o.accumulation, ECHAT_ERR_INVALID_CONFIG,
          "token_budget must cover at least one token per mini-batch");
}

static uint64_t stage_seed(uint64_t run_seed, train_stage_kind k) {
    return rng::derive(run_seed, "stage", (uint64_t) k).u64();
}

stage_config default_warmup_config(const optimizer_config & opt, uint64_t run_seed) {
    stage_config c;
    c.stage     = train_stage_kind::text_warmup;
    c.mixture   = {{sample_task::tts, 1.0}, {sample_task::t2t, 1.0}};
    c.trainable = {"decoder"};
    c.epochs    = 1;
    c.opt       = opt;
    c.seed      = stage_seed(run_seed, c.stage);
    return c;
}

std::vector<stage_config> default_curriculum(const optimizer_config & opt,
                                             curriculum_ablation ablation,
                                             uint64_t run_seed) {
    const auto mk = [&](train_stage_kind k) {
        stage_config c;
        c.stage = k;
        c.opt   = opt;
        c.seed  = stage_seed(run_seed, k);
        return c;
    };

    std::vector<stage_config> out;

    if (ablation != curriculum_ablation::skip_s1) {
        for (auto k : {train_stage_kind::s1_align, train_stage_kind::s1_asr_p,
                       train_stage_kind::s1_only_p, train_stage_kind::s1_full_label}) {
            stage_config c = mk(k);
            c.mixture      = {{sample_task::understanding, 1.0}};
            c.trainable    = {"encoder", "adapter"};
            out.push_back(std::move(c));
        }
    }

    {
        stage_config c = mk(train_stage_kind::s2_tts);
        c.mixture      = {{sample_task::tts, 1.0},
                          {sample_task::t2t, 1.0},
                          {sample_task::understanding, 0.1}};
        c.trainable    = {"decoder"};
        c.epochs       = 2;  // the interleave scaffold arrives in epoch 2
        out.push_back(std::move(c));
    }
    {
        stage_config c = mk(train_stage_kind::s2_s2s);
        c.mixture      = {{sample_task::s2s_plain, 1.0},
                          {sample_task::tts, 1.0},
                          {sample_task::t2t, 1.0},
                          {sample_task::understanding, 0.1}};
        c.trainable    = ALL_GROUPS;
        c.epochs       = 2;  // streaming dialogue arrives in epoch 2
        out.push_back(std::move(c));
    }
    {
        // the empathy split leads; earlier task data is retained, scaled down
        // so the paralinguistic dialogue data dominates
        stage_config c = mk(train_stage_kind::s3_think);
        c.mixture      = {{sample_task::empathy, 1.0},
                          {sample_task::s2s_plain, 0.2},
                          {sample_task::tts, 0.2},
                          {sample_task::t2t, 0.2},
                          {sample_task::understanding, 0.02}};
        c.trainable    = ALL_GROUPS;
        c.epochs       = 2;
        c.think        = ablation != curriculum_ablation::no_think;
        out.push_back(std::move(c));
    }
    {
        stage_config c = mk(train_stage_kind::s3_distill);
        c.mixture      = {{sample_task::empathy, 1.0},
                          {sample_task::s2s_plain, 0.2},
                          {sample_task::tts, 0.2},
                          {sample_task::t2t, 0.2},
                          {sample_task::understanding, 0.02}};
        c.trainable    = ALL_GROUPS;
        c.epochs       = 2;
        // whether the teacher reasons before answering during distillation
        c.think        = ablation != curriculum_ablation::no_think;
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// epoch planning

std::vector<epoch_item> plan_stage_epoch(const corpus_data & data, const stage_config & cfg,
                                         int32_t epoch) {
    validate_stage_config(cfg);
    check(epoch >= 1, ECHAT_ERR_INVALID_ARGUMENT, "epochs are 1-based");

    std::vector<epoch_item> items;
    for (const auto & [task, w] : cfg.mixture) {
        const auto split = data.split(task);
        check(!split.empty(), ECHAT_ERR_CURRICULUM,
              std::string("stage mixture references an empty split: ") + sample_task_name(task));
        const auto n    = (int64_t) split.size();
        const auto take = w >= 1.0 ? n : std::min(n, (int64_t) std::llround(w * (double) n));
        if (take <= 0) {
            continue;
        }
        std::vector<int32_t> idx((size_t) n);
        for (int64_t i = 0; i < n; ++i) {
            idx[(size_t) i] = (int32_t) i;
        }
        if (take < n) {
            rng pr = rng::derive(cfg.seed, std::string("pick-") + sample_task_name(task),
                                 (uint64_t) epoch);
            pr.shuffle(idx);
            idx.resize((size_t) take);
        }
        for (int32_t i : idx) {
            items.push_back({task, i, false});
        }
    }
    check(!items.empty(), ECHAT_ERR_CURRICULUM, "stage mixture selected no samples");

    // exact streaming quota over the eligible items, from epoch 2 on
    if (epoch >= 2 && cfg.streaming_fraction > 0.0) {
        std::vector<size_t> eligible;
        for (size_t i = 0; i < items.size(); ++i) {
            if (stage_streaming_eligible(cfg.stage, items[i].task)) {
                eligible.push_back(i);
            }
        }
        const auto quota = (int64_t) std::llround(cfg.streaming_fraction *
                                                  (double) eligible.size());
        rng sr = rng::derive(cfg.seed, "streaming", (uint64_t) epoch);
        sr.shuffle(eligible);
        for (int64_t i = 0; i < quota; ++i) {
            items[eligible[(size_t) i]].streaming = true;
        }
    }

    rng orr = rng::derive(cfg.seed, "order", (uint64_t) epoch);
    orr.shuffle(items);
    return items;
}

// ---------------------------------------------------------------------------
// stage runner

static nn::mat<float> features_to_mat(const feature_matrix & f) {
    nn::mat<float> m(f.frames, f.channels);
    for (int32_t t = 0; t < f.frames; ++t) {
        for (int32_t c = 0; c < f.channels; ++c) {
            m(t, c) = f.at(t, c);
        }
    }
    return m;
}

// teacher responses for the self-distillation stage: the incoming model
// answers every empathy query; the targets then drop the reasoning span
static std::vector<dialogue_sample> distill_responses(const model & teacher,
                                                      const corpus_data & data,
                                                      const stage_config & cfg,
                                                      int64_t & fallbacks) {
    const auto split = data.split(sample_task::empathy);
    std::vector<dialogue_sample> out;
    out.reserve(split.size());

    for (size_t i = 0; i < split.size(); ++i) {
        const dialogue_sample & s = *split[i];
        const feature_matrix    fm = data.load_features(s);

        prompt_spec ps;
        ps.task = cfg.think ? task_kind::s2s_think : task_kind::s2s;

        generation_config gc;
        gc.think             = cfg.think;
        gc.max_text_tokens   = 48;
        gc.max_speech_tokens = 360;
        gc.seed              = rng::derive(cfg.seed, "distill", (uint64_t) i).u64();

        const generation_result r = generate(teacher, &fm, ps, gc);

        dialogue_sample d = s;
        bool            ok = r.stop == stop_reason::speech_boundary && !r.speech.empty();
        if (ok) {
            std::vector<int32_t> text;
            for (int32_t id : r.text) {
                if (id != teacher.vocab.eot) {
                    text.push_back(id);
                }
            }
            ok = !text.empty();
            if (ok) {
                d.response_symbols = std::move(text);
                d.response_speech.clear();
                for (int32_t id : r.speech) {
                    d.response_speech.push_back(teacher.vocab.speech_index(id));
                }
            }
        }
        if (!ok) {
            ++fallbacks;
            d = s;  // truncated teacher output; keep the scripted reply
        }
        out.push_back(std::move(d));
    }
    return out;
}

stage_result train_stage(model & m, const corpus_data & data, const stage_config & cfg,
                         const std::string & out_dir, const std::string & last_checkpoint) {
    validate_stage_config(cfg);
    ensure_dir(out_dir);

    const vocab_layout & v     = m.vocab;
    const uint32_t       roles = stage_loss_roles(cfg.stage);
    const char *         name  = train_stage_name(cfg.stage);

    const auto numeric_failure = [&](const std::string & what, int64_t step) {
        fail(ECHAT_ERR_NUMERIC,
             what + " at stage " + name + " step " + std::to_string(step) +
                 "; last good checkpoint: " +
                 (last_checkpoint.empty() ? "none" : last_checkpoint));
    };

    // distillation source
    std::vector<dialogue_sample> distilled;
    int64_t                      fallbacks = 0;
    if (cfg.stage == train_stage_kind::s3_distill &&
        cfg.mixture.count(sample_task::empathy) != 0) {
        const model teacher = m;
        distilled = distill_responses(teacher, data, cfg, fallbacks);
    }

    // split cache
    std::map<sample_task, std::vector<const dialogue_sample *>> splits;
    for (const auto & [task, w] : cfg.mixture) {
        splits[task] = data.split(task);
    }
    const auto resolve = [&](const epoch_item & it) -> const dialogue_sample & {
        if (!distilled.empty() && it.task == sample_task::empathy) {
            return distilled[(size_t) it.index];
        }
        return *splits[it.task][(size_t) it.index];
    };

    model grads;
    net_setup(grads, m.cfg);
    adamw_state ost;
    ost.reset(m);

    const std::string metrics_path = path_join(out_dir, std::string("metrics-") + name + ".jsonl");
    std::ofstream     metrics(metrics_path, std::ios::trunc);
    check(metrics.good(), ECHAT_ERR_IO, "cannot open metrics file: " + metrics_path);

    stage_result res;
    res.stage             = cfg.stage;
    res.distill_fallbacks = fallbacks;
    res.metrics_path      = metrics_path;

    const int32_t mini_budget = cfg.opt.token_budget / cfg.opt.accumulation;

    int64_t step         = 0;
    int64_t step_samples = 0;
    int64_t step_tokens  = 0;
    int32_t minis        = 0;
    int64_t mini_tokens  = 0;
    double  step_loss    = 0.0;
    std::array<double, ROLE_COUNT>  role_sum{};
    std::array<int64_t, ROLE_COUNT> role_count{};
    int32_t cur_epoch = 1;

    const auto flush_step = [&]() {
        if (step_samples == 0) {
            return;
        }
        // average the accumulated gradients over the step's samples
        for (const auto & g : collect_params(grads)) {
            const float inv = 1.0f / (float) step_samples;
            for (int64_t k = 0; k < g.size(); ++k) {
                g.data[k] *= inv;
            }
        }
        step += 1;
        const double lr   = warmup_lr(cfg.opt, step);
        const double norm = adamw_step(m, grads, ost, cfg.opt, lr, cfg.trainable);
        if (!std::isfinite(norm)) {
            numeric_failure("non-finite gradient norm", step);
        }

        const double mean_loss = step_loss / (double) step_samples;
        if (step == 1) {
            res.first_loss = mean_loss;
        }
        res.final_loss = mean_loss;

        json rec;
        rec["step"]  = step;
        rec["stage"] = name;
        rec["epoch"] = cur_epoch;
        rec["lr"]    = lr;
        rec["loss"]  = mean_loss;
        json jr = json::object();
        for (int32_t r = 0; r < ROLE_COUNT; ++r) {
            if (role_count[(size_t) r] > 0) {
                jr[role_kind_name((role_kind) r)] =
                    role_sum[(size_t) r] / (double) role_count[(size_t) r];
            }
        }
        rec["roles"]             = jr;
        rec["grad_norm"]         = norm;
        rec["grad_norm_clipped"] = std::min(norm, cfg.opt.clip_norm);
        rec["samples"]           = step_samples;
        rec["tokens"]            = step_tokens;
        metrics << rec.dump() << "\n";

        zero_all(grads);
        step_samples = 0;
        step_tokens  = 0;
        minis        = 0;
        mini_tokens  = 0;
        step_loss    = 0.0;
        role_sum.fill(0.0);
        role_count.fill(0);
    };

    for (int32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        cur_epoch = epoch;
        const std::vector<epoch_item> plan = plan_stage_epoch(data, cfg, epoch);

        for (const epoch_item & it : plan) {
            const dialogue_sample & s = resolve(it);

            feature_matrix fm;
            int32_t        frames = 0;
            if (s.has_audio) {
                fm     = data.load_features(s);
                frames = fm.frames;
            }
            const target_layout lay =
                build_stage_targets(cfg.stage, s, it.index, it.streaming, cfg.think, frames, v);

            const auto len = (int64_t) lay.input.size();
            check(len <= mini_budget, ECHAT_ERR_CAPACITY,
                  "sample of " + std::to_string(len) +
                      " tokens exceeds the per-mini-batch token budget of " +
                      std::to_string(mini_budget));
            if (mini_tokens + len > mini_budget) {
                ++minis;
                mini_tokens = 0;
                if (minis >= cfg.opt.accumulation) {
                    flush_step();
                }
            }
            mini_tokens += len;

            // forward
            lm_input<float>      in;
            in.tokens = lay.input;
            encoder_state<float> es;
            adapter_state<float> as;
            if (s.has_audio) {
                in.soft = net_adapt(m, net_encode(m, features_to_mat(fm), es), as);
            }
            lm_train_state<float> ls;
            const nn::mat<float>  logits = net_lm(m, in, ls);

            nn::mat<float>    dlogits;
            const sample_loss sl = compute_loss_grad(logits, lay, roles, 1.0, dlogits);
            if (!std::isfinite(sl.total)) {
                numeric_failure("non-finite loss", step + 1);
            }

            // backward
            const nn::mat<float> d_soft = net_lm_backward(m, ls, dlogits, grads);
            if (s.has_audio &&
                (cfg.trainable.count("encoder") || cfg.trainable.count("adapter"))) {
                const nn::mat<float> d_hidden = net_adapt_backward(m, as, d_soft, grads);
                net_encode_backward(m, es, d_hidden, grads);
            }

            step_loss += sl.total;
            for (int32_t r = 0; r < ROLE_COUNT; ++r) {
                role_sum[(size_t) r] += sl.sum[(size_t) r];
                role_count[(size_t) r] += sl.count[(size_t) r];
            }
            step_samples += 1;
            step_tokens += len;
            res.samples += 1;
            res.tokens += len;
            res.streaming_samples += it.streaming ? 1 : 0;
        }
        flush_step();  // steps never span epochs
    }
    flush_step();

    metrics.close();
    check(metrics.good(), ECHAT_ERR_IO, "failed writing metrics file: " + metrics_path);

    res.steps = step;

    const std::string ckpt = path_join(out_dir, std::string("ckpt-") + name + ".bin");
    write_checkpoint(ckpt, m);
    const std::vector<uint8_t> bytes = read_binary_file(ckpt);
    res.checkpoint_path = ckpt;
    res.checkpoint_hash = hash_hex(hash_bytes(bytes.data(), bytes.size()));
    return res;
}

// ---------------------------------------------------------------------------
// curriculum runner

curriculum_result run_curriculum(model & m, const corpus_data & data,
                                 const std::vector<stage_config> & stages,
                                 const std::string & out_dir) {
    check(!stages.empty(), ECHAT_ERR_CURRICULUM, "curriculum has no stages");
    for (size_t i = 0; i < stages.size(); ++i) {
        validate_stage_config(stages[i]);
        if (i > 0) {
            check((int32_t) stages[i].stage > (int32_t) stages[i - 1].stage,
                  ECHAT_ERR_CURRICULUM,
                  std::string("curriculum stages out of order: ") +
                      train_stage_name(stages[i].stage) + " after " +
                      train_stage_name(stages[i - 1].stage));
        }
    }
    ensure_dir(out_dir);

    curriculum_result res;
    std::string       last;
    for (const stage_config & cfg : stages) {
        stage_result r = train_stage(m, data, cfg, out_dir, last);
        last           = r.checkpoint_path;
        res.stages.push_back(std::move(r));
    }

    json j;
    j["stage_count"] = res.stages.size();
    json arr         = json::array();
    for (const stage_result & r : res.stages) {
        json e;
        e["stage"]             = train_stage_name(r.stage);
        e["steps"]             = r.steps;
        e["samples"]           = r.samples;
        e["tokens"]            = r.tokens;
        e["streaming_samples"] = r.streaming_samples;
        e["distill_fallbacks"] = r.distill_fallbacks;
        e["first_loss"]        = r.first_loss;
        e["final_loss"]        = r.final_loss;
        e["checkpoint"]        = r.checkpoint_path;
        e["checkpoint_hash"]   = r.checkpoint_hash;
        e["metrics"]           = r.metrics_path;
        arr.push_back(std::move(e));
    }
    j["stages"]           = std::move(arr);
    j["final_checkpoint"] = last;

    res.manifest_path = path_join(out_dir, "curriculum.json");
    write_text_file(res.manifest_path, j.dump(2) + "\n");
    return res;
}

} // namespace echat
