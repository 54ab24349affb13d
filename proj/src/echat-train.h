#pragma once

// supervised target layouts, stage losses, the AdamW + warmup + clip
// optimizer, token-budget batching, and the multi-stage curriculum runner.
//
// training follows a listen -> think -> speak progression:
//   text_warmup     decoder-only fluency on text-input tasks (init run)
//   s1_align..s1_full_label   speech understanding, cumulative output formats
//   s2_tts          speech generation (decoder only; interleaved scaffold
//                   for half the samples from epoch 2)
//   s2_s2s          spoken dialogue end to end (+ retained earlier tasks)
//   s3_think        dialogue with an explicit reasoning span before the reply
//   s3_distill      reasoning-free dialogue on responses produced by the
//                   s3_think model (self-distillation)

#include "echat-corpus.h"
#include "echat-infer.h"
#include "echat-model.h"

#include <map>
#include <set>

namespace echat {

// ---------------------------------------------------------------------------
// roles

enum class role_kind : int32_t {
    ignore = 0,        // prompt echo, soft slots, padding
    asr_text,          // query transcript in understanding outputs
    paralinguistic_label,
    response_text,     // reply text (incl. eot) and interleave text
    speech,            // speech tokens incl. the closing boundary
    think,             // reasoning span incl. its brackets
};
constexpr int32_t ROLE_COUNT = 6;
const char * role_kind_name(role_kind r);

// bitmask over role_kind; a stage's objective sums the mean cross-entropy of
// each active role that has at least one unmasked position
uint32_t role_bit(role_kind r);
bool     role_active(uint32_t set, role_kind r);

// ---------------------------------------------------------------------------
// stages

enum class train_stage_kind : int32_t {
    text_warmup = 0,
    s1_align,
    s1_asr_p,
    s1_only_p,
    s1_full_label,
    s2_tts,
    s2_s2s,
    s3_think,
    s3_distill,
};
constexpr int32_t TRAIN_STAGE_COUNT = 9;
const char *                    train_stage_name(train_stage_kind s);
std::optional<train_stage_kind> train_stage_from_name(std::string_view s);

// roles that enter the stage objective
uint32_t stage_loss_roles(train_stage_kind s);

// which corpus splits a stage may train on
bool stage_allows_task(train_stage_kind s, sample_task t);

// ---------------------------------------------------------------------------
// target layouts
//
// input feeds the LM (length n, -1 = soft slot); tokens/roles/mask have
// length n-1 and align with logits rows 0..n-2: position i is supervised to
// predict tokens[i] (= input[i+1]) when mask[i] is 1.

struct target_layout {
    std::vector<int32_t>   input;
    int32_t                soft_rows = 0;
    std::vector<int32_t>   tokens;
    std::vector<role_kind> roles;
    std::vector<uint8_t>   mask;
    task_kind              task = task_kind::s2s;  // prompt's task word
};

void validate_layout(const target_layout & lay, const vocab_layout & v);

// masks out every position whose target is the unknown-label placeholder;
// idempotent, and a no-op on layouts without such targets
void apply_unk_mask(target_layout & lay, const vocab_layout & v);

// understanding output formats, cumulative across the s1 sub-stages; the
// assignment cycles over the formats introduced so far, keyed by the sample's
// index within its split
understand_mode s1_understand_mode(train_stage_kind s, int32_t split_index);

// per-format builders.  audio_frames is the feature frame count for samples
// with audio (ignored otherwise).
target_layout build_understanding_targets(const dialogue_sample & s, understand_mode mode,
                                          int32_t audio_frames, const vocab_layout & v);
target_layout build_tts_targets(const dialogue_sample & s, bool interleaved,
                                const vocab_layout & v);
target_layout build_t2t_targets(const dialogue_sample & s, const vocab_layout & v);
target_layout build_dialogue_targets(const dialogue_sample & s, bool think, bool streaming,
                                     int32_t audio_frames, const vocab_layout & v);

// stage dispatch over the builders above (s1 formats via split_index)
target_layout build_stage_targets(train_stage_kind stage, const dialogue_sample & s,
                                  int32_t split_index, bool streaming, bool think,
                                  int32_t audio_frames, const vocab_layout & v);

// ---------------------------------------------------------------------------
// loss

struct sample_loss {
    double                          total = 0.0;  // sum of active role means
    std::array<double, ROLE_COUNT>  sum{};        // per-role summed CE
    std::array<int64_t, ROLE_COUNT> count{};      // per-role position counts
};

// cross-entropy of the layout under `logits` (rows >= layout length); only
// unmasked positions whose role is in `roles` contribute
sample_loss compute_loss(const nn::mat<float> & logits, const target_layout & lay,
                         uint32_t roles);

// same, also accumulating d(total)/d(logits) * scale into d_logits (resized
// and zeroed to match logits)
sample_loss compute_loss_grad(const nn::mat<float> & logits, const target_layout & lay,
                              uint32_t roles, double scale, nn::mat<float> & d_logits);

// ---------------------------------------------------------------------------
// optimizer

struct optimizer_config {
    double  lr           = 3e-4;
    double  beta1        = 0.9;
    double  beta2        = 0.999;
    double  eps          = 1e-8;
    double  weight_decay = 0.01;
    double  clip_norm    = 5.0;
    int32_t warmup_steps = 200;
    int32_t accumulation = 4;     // packed mini-batches per optimizer step
    int32_t token_budget = 4096;  // max LM tokens per accumulated step
};

optimizer_config desk_optimizer();
optimizer_config paper_optimizer();

// linear warmup to the base rate, constant afterwards; step is 1-based
double warmup_lr(const optimizer_config & cfg, int64_t step);

struct adamw_state {
    std::vector<std::vector<float>> m, v;  // one pair per parameter array
    int64_t                         step = 0;

    void reset(model & params);
};

// one decoupled-weight-decay Adam update on the trainable groups from the
// accumulated gradients; clips by global norm first.  returns the pre-clip
// norm (post-clip norm = min(pre, clip_norm)).
double adamw_step(model & params, model & grads, adamw_state & st,
                  const optimizer_config & cfg, double lr,
                  const std::set<std::string> & trainable);

// ---------------------------------------------------------------------------
// stage configuration

struct stage_config {
    train_stage_kind              stage = train_stage_kind::s1_align;
    std::map<sample_task, double> mixture;           // split -> inclusion weight (0,1]
    std::set<std::string>         trainable;         // param groups
    int32_t                       epochs = 1;
    double                        streaming_fraction = 0.5;  // epochs >= 2
    bool                          think = true;      // s3_think: emit reasoning spans
    optimizer_config              opt;
    uint64_t                      seed = 1;
};

void validate_stage_config(const stage_config & cfg);

enum class curriculum_ablation : int32_t {
    none,
    no_think,  // s3 stages train without reasoning spans
    skip_s1,   // drop the four understanding stages
};

stage_config default_warmup_config(const optimizer_config & opt, uint64_t run_seed);

// the main curriculum (8 stages; 4 without s1); the warmup init run is
// composed separately by the caller
std::vector<stage_config> default_curriculum(const optimizer_config & opt,
                                             curriculum_ablation ablation,
                                             uint64_t run_seed);

// ---------------------------------------------------------------------------
// epoch planning (deterministic; exposed for the quota tests)

struct epoch_item {
    sample_task task      = sample_task::understanding;
    int32_t     index     = 0;      // index within the task's split
    bool        streaming = false;
};

// mixture draw + order shuffle + exact streaming quota for this (stage,
// epoch); epoch is 1-based
std::vector<epoch_item> plan_stage_epoch(const corpus_data & data, const stage_config & cfg,
                                         int32_t epoch);

// ---------------------------------------------------------------------------
// stage + curriculum runners

struct stage_result {
    train_stage_kind stage = train_stage_kind::s1_align;
    int64_t          steps             = 0;
    int64_t          samples           = 0;
    int64_t          tokens            = 0;
    int64_t          streaming_samples = 0;
    int64_t          distill_fallbacks = 0;  // s3_distill: teacher truncations
    double           first_loss = 0.0;
    double           final_loss = 0.0;   // last optimizer step's mean loss
    std::string      checkpoint_path;
    std::string      metrics_path;
    std::string      checkpoint_hash;
};

// trains one stage in place.  writes <out_dir>/ckpt-<stage>.bin and
// <out_dir>/metrics-<stage>.jsonl (one JSON record per optimizer step).
// last_checkpoint names the most recent good checkpoint for error reports.
stage_result train_stage(model & m, const corpus_data & data, const stage_config & cfg,
                         const std::string & out_dir,
                         const std::string & last_checkpoint = "");

struct curriculum_result {
    std::vector<stage_result> stages;
    std::string               manifest_path;
};

// validates stage order (strictly increasing, no duplicates), runs each stage,
// and writes <out_dir>/curriculum.json
curriculum_result run_curriculum(model & m, const corpus_data & data,
                                 const std::vector<stage_config> & stages,
                                 const std::string & out_dir);

} // namespace echat
