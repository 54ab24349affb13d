#include "echat-run.h"

#include "echat-common.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <memory>

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace echat {

// ---------------------------------------------------------------------------
// path + hash plumbing

std::string resolve_path(const std::string & out_dir, const std::string & p) {
    if (p.empty() || fs::path(p).is_absolute()) {
        return p;
    }
    return path_join(out_dir, p);
}

static std::string file_hash(const std::string & path) {
    const auto buf = read_binary_file(path);
    return hash_hex(hash_bytes(buf.data(), buf.size()));
}

// manifest key: relative to the out dir when inside it
static std::string out_relative(const std::string & out_dir, const std::string & path) {
    std::error_code ec;
    const fs::path  rel = fs::proximate(path, out_dir, ec);
    if (ec || rel.empty() || rel.native().starts_with("..")) {
        return path;
    }
    return rel.generic_string();
}

// ---------------------------------------------------------------------------
// run manifests

namespace {

struct manifest_builder {
    json                                  j;
    std::map<std::string, std::string>    outputs;
    std::string                           out_dir;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    manifest_builder(const std::string & command, const echat_config & cfg,
                     const std::string & out_dir_)
        : out_dir(out_dir_) {
        j["command"]     = command;
        j["version"]     = ECHAT_VERSION_STRING;
        j["config_hash"] = hash_hex(config_hash(cfg));
        j["seed"]        = cfg.seed;
        j["config"]      = json::parse(config_to_json(cfg));
        j["inputs"]      = json::object();
        j["details"]     = json::object();
    }

    void input(const std::string & name, const std::string & hash) { j["inputs"][name] = hash; }
    void input_file(const std::string & name, const std::string & path) {
        input(name, file_hash(path));
    }

    void output_file(const std::string & path) {
        outputs[out_relative(out_dir, path)] = file_hash(path);
    }

    // every regular file under dir, keyed in sorted order
    void output_tree(const std::string & dir) {
        std::vector<std::string> files;
        for (const auto & e : fs::recursive_directory_iterator(dir)) {
            if (e.is_regular_file()) {
                files.push_back(e.path().string());
            }
        }
        std::sort(files.begin(), files.end());
        for (const std::string & f : files) {
            output_file(f);
        }
    }

    json & details() { return j["details"]; }

    run_result write(const std::string & command) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        j["wall_seconds"] = wall;
        json out          = json::object();
        for (const auto & [k, v] : outputs) {
            out[k] = v;
        }
        j["outputs"] = std::move(out);

        run_result res;
        res.outputs       = outputs;
        res.manifest_path = path_join(out_dir, "manifest-" + command + ".json");
        ensure_dir(out_dir);
        write_text_file(res.manifest_path, j.dump(2) + "\n");
        return res;
    }
};

} // namespace

// a directory data-gen may rebuild: missing, empty, or a previous build of
// the same artifact kind (guards against clobbering unrelated trees)
static void prepare_build_dir(const std::string & dir, const char * format) {
    if (!path_exists(dir)) {
        return;
    }
    if (fs::is_directory(dir) && fs::directory_iterator(dir) == fs::directory_iterator()) {
        return;
    }
    const std::string manifest = path_join(dir, "manifest.json");
    bool              ours     = false;
    if (path_exists(manifest)) {
        try {
            ours = json::parse(read_text_file(manifest)).value("format", "") == format;
        } catch (const std::exception &) {
            ours = false;
        }
    }
    check(ours, ECHAT_ERR_INVALID_ARGUMENT,
          "refusing to rebuild " + dir + ": not a previously generated artifact directory");
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// data-gen

run_result run_data_gen(const echat_config & cfg, const std::string & out_dir) {
    validate_config(cfg);
    const std::string corpus_dir = resolve_path(out_dir, cfg.paths.corpus);
    const std::string bench_dir  = resolve_path(out_dir, cfg.paths.benchmark);

    manifest_builder mb("data-gen", cfg, out_dir);

    prepare_build_dir(corpus_dir, "echat-corpus 1");
    prepare_build_dir(bench_dir, "echat-benchmark 1");

    const corpus_build_result    cb = build_corpus(corpus_dir, cfg.corpus, cfg.codec);
    const benchmark_build_result bb =
        build_benchmark(bench_dir, cfg.benchmark, cfg.corpus, cb.manifest_path);

    mb.output_tree(corpus_dir);
    mb.output_tree(bench_dir);
    mb.details()["corpus_hash"]    = hash_hex(cb.content_hash);
    mb.details()["benchmark_hash"] = hash_hex(bb.content_hash);
    mb.details()["sample_count"]   = cb.sample_count;
    mb.details()["entry_count"]    = bb.entry_count;
    mb.details()["codec_hash"]     = hash_hex(cb.codec.content_hash());
    return mb.write("data-gen");
}

// ---------------------------------------------------------------------------
// fit-codec

run_result run_fit_codec(const echat_config & cfg, const std::string & corpus_dir_arg,
                         const std::string & out_dir) {
    validate_config(cfg);
    const std::string corpus_dir =
        corpus_dir_arg.empty() ? resolve_path(out_dir, cfg.paths.corpus)
                               : resolve_path(out_dir, corpus_dir_arg);

    const corpus_data data = load_corpus(corpus_dir);

    std::vector<feature_matrix>         mats;
    std::vector<const feature_matrix *> views;
    for (const dialogue_sample & s : data.samples) {
        if (s.has_audio) {
            mats.push_back(data.load_features(s));
        }
    }
    views.reserve(mats.size());
    for (const feature_matrix & m : mats) {
        views.push_back(&m);
    }

    codec_fit_stats    stats;
    const speech_codec codec = fit_codec(views, cfg.codec, &stats);

    manifest_builder mb("fit-codec", cfg, out_dir);
    mb.input("corpus", hash_hex(data.content_hash));

    ensure_dir(out_dir);
    const std::string codec_path = path_join(out_dir, "codec-refit.bin");
    write_codec(codec_path, codec);
    mb.output_file(codec_path);

    mb.details()["codebook_size"] = codec.codebook_size;
    mb.details()["frames_used"]   = stats.frames_used;
    mb.details()["iterations"]    = stats.iterations;
    mb.details()["final_inertia"] = stats.inertia.empty() ? 0.0 : stats.inertia.back();
    mb.details()["codec_hash"]    = hash_hex(codec.content_hash());
    return mb.write("fit-codec");
}

// ---------------------------------------------------------------------------
// train

static std::vector<stage_config> configured_curriculum(const echat_config & cfg) {
    std::vector<stage_config> stages;
    if (cfg.train.warmup) {
        stages.push_back(default_warmup_config(cfg.optimizer, cfg.seed));
    }
    const auto main = default_curriculum(cfg.optimizer, cfg.train.ablation, cfg.seed);
    stages.insert(stages.end(), main.begin(), main.end());
    return stages;
}

run_result run_train(const echat_config & cfg, const std::string & corpus_dir_arg,
                     const std::string & stage, const std::string & init_checkpoint,
                     const std::string & out_dir) {
    validate_config(cfg);
    const std::string corpus_dir =
        corpus_dir_arg.empty() ? resolve_path(out_dir, cfg.paths.corpus)
                               : resolve_path(out_dir, corpus_dir_arg);
    const std::string train_dir = resolve_path(out_dir, cfg.paths.train);

    const corpus_data data = load_corpus(corpus_dir);

    manifest_builder mb("train", cfg, out_dir);
    mb.input("corpus", hash_hex(data.content_hash));

    model m;
    if (!init_checkpoint.empty()) {
        const std::string ckpt = resolve_path(out_dir, init_checkpoint);
        m                      = read_checkpoint(ckpt);
        check(m.cfg == cfg.model, ECHAT_ERR_INVALID_CONFIG,
              "init checkpoint model config differs from the configured model: " + ckpt);
        mb.input_file("init_checkpoint", ckpt);
    } else {
        net_init(m, cfg.model);
    }

    std::vector<stage_config> stages = configured_curriculum(cfg);
    if (!stage.empty()) {
        const auto kind = train_stage_from_name(stage);
        check(kind.has_value(), ECHAT_ERR_INVALID_ARGUMENT, "unknown stage name: " + stage);
        const auto it = std::find_if(stages.begin(), stages.end(),
                                     [&](const stage_config & s) { return s.stage == *kind; });
        check(it != stages.end(), ECHAT_ERR_INVALID_ARGUMENT,
              "stage " + stage + " is not part of the configured curriculum");
        stages = {*it};
    }

    const curriculum_result res = run_curriculum(m, data, stages, train_dir);

    mb.output_tree(train_dir);

    json stage_arr = json::array();
    for (size_t i = 0; i < res.stages.size(); ++i) {
        const stage_result & r  = res.stages[i];
        const stage_config & sc = stages[i];
        json                 e;
        e["stage"]  = train_stage_name(r.stage);
        e["epochs"] = sc.epochs;
        json trainable = json::array(), frozen = json::array();
        for (const char * g : {"encoder", "adapter", "decoder"}) {
            (sc.trainable.count(g) ? trainable : frozen).push_back(g);
        }
        e["trainable"]         = std::move(trainable);
        e["frozen"]            = std::move(frozen);
        e["steps"]             = r.steps;
        e["samples"]           = r.samples;
        e["streaming_samples"] = r.streaming_samples;
        e["distill_fallbacks"] = r.distill_fallbacks;
        e["final_loss"]        = r.final_loss;
        e["checkpoint"]        = out_relative(out_dir, r.checkpoint_path);
        e["checkpoint_hash"]   = r.checkpoint_hash;
        stage_arr.push_back(std::move(e));
    }
    mb.details()["stages"] = std::move(stage_arr);
    mb.details()["final_checkpoint"] =
        res.stages.empty() ? "" : out_relative(out_dir, res.stages.back().checkpoint_path);
    return mb.write("train");
}

// ---------------------------------------------------------------------------
// eval

static std::string default_checkpoint(const echat_config & cfg, const std::string & out_dir) {
    const std::string manifest = path_join(resolve_path(out_dir, cfg.paths.train),
                                           "curriculum.json");
    check(path_exists(manifest), ECHAT_ERR_INVALID_ARGUMENT,
          "no checkpoint given and no curriculum manifest at " + manifest);
    try {
        return json::parse(read_text_file(manifest)).at("final_checkpoint").get<std::string>();
    } catch (const std::exception & e) {
        fail(ECHAT_ERR_FORMAT, manifest + ": bad curriculum manifest: " + e.what());
    }
}

run_result run_eval(const echat_config & cfg, const std::string & checkpoint_arg,
                    const std::string & benchmark_dir_arg, judge_choice jc,
                    const std::string & out_dir) {
    validate_config(cfg);
    const std::string bench_dir =
        benchmark_dir_arg.empty() ? resolve_path(out_dir, cfg.paths.benchmark)
                                  : resolve_path(out_dir, benchmark_dir_arg);
    const std::string ckpt_path = checkpoint_arg.empty()
                                      ? default_checkpoint(cfg, out_dir)
                                      : resolve_path(out_dir, checkpoint_arg);
    const std::string eval_dir  = resolve_path(out_dir, cfg.paths.eval);
    const std::string codec_path =
        path_join(resolve_path(out_dir, cfg.paths.corpus), "codec.bin");

    const benchmark_data bench = load_benchmark(bench_dir);
    const model          m     = read_checkpoint(ckpt_path);
    const speech_codec   codec = read_codec(codec_path);
    check(codec.codebook_size == m.cfg.speech_vocab, ECHAT_ERR_INVALID_CONFIG,
          "codec codebook does not match the checkpoint's speech vocabulary");

    manifest_builder mb("eval", cfg, out_dir);
    mb.input("benchmark", hash_hex(bench.content_hash));
    mb.input_file("checkpoint", ckpt_path);
    mb.input("codec", hash_hex(codec.content_hash()));

    rule_judge                    rule;
    std::unique_ptr<remote_judge> remote;
    judge *                       j = &rule;
    if (jc == judge_choice::remote) {
        remote_judge_config rc;
        const char *        env = std::getenv("ECHAT_JUDGE_URL");
        rc.endpoint             = env && *env ? env : cfg.judge.endpoint;
        check(!rc.endpoint.empty(), ECHAT_ERR_INVALID_CONFIG,
              "remote judge needs judge.endpoint or ECHAT_JUDGE_URL");
        rc.timeout_ms = cfg.judge.timeout_ms;
        rc.retries    = cfg.judge.retries;
        rc.backoff_ms = cfg.judge.backoff_ms;
        remote        = std::make_unique<remote_judge>(rc);
        j             = remote.get();
    }

    eval_config ec;
    ec.streaming         = cfg.eval.streaming;
    ec.max_text_tokens   = cfg.eval.max_text_tokens;
    ec.max_speech_tokens = cfg.eval.max_speech_tokens;
    ec.seed              = cfg.seed;
    ec.decode_cfg        = cfg.corpus;
    ec.checkpoint_hash   = file_hash(ckpt_path);
    ec.fail_threshold    = cfg.eval.fail_threshold;

    const eval_report rep = run_echat_eval(m, codec, bench, *j, ec);
    const und_metrics und = understanding_metrics(m, bench, ec);

    ensure_dir(eval_dir);
    const std::string report_json = path_join(eval_dir, "report.json");
    const std::string report_txt  = path_join(eval_dir, "report.txt");
    const std::string und_json    = path_join(eval_dir, "understanding.json");
    write_text_file(report_json, report_to_json(rep));
    write_text_file(report_txt, render_report_table(rep));

    json uj;
    uj["entries"] = und.entries;
    uj["transcript_token_error_rate"] = und.ter;
    json asr = json::object(), think = json::object();
    for (int32_t f = 0; f < CUE_FIELD_COUNT; ++f) {
        asr[cue_field_name((cue_field) f)]   = und.asr_p_accuracy[(size_t) f];
        think[cue_field_name((cue_field) f)] = und.think_accuracy[(size_t) f];
    }
    uj["label_accuracy"]       = std::move(asr);
    uj["think_accuracy"]       = std::move(think);
    uj["label_accuracy_mean"]  = und.asr_p_mean;
    uj["think_accuracy_mean"]  = und.think_mean;
    uj["think_complete"]       = und.think_complete;
    write_text_file(und_json, uj.dump(2) + "\n");

    mb.output_file(report_json);
    mb.output_file(report_txt);
    mb.output_file(und_json);

    mb.details()["judge"]       = rep.judge_kind;
    mb.details()["report_hash"] = rep.report_hash;
    mb.details()["valid"]       = rep.valid;
    mb.details()["total"]       = rep.total;
    mb.details()["scored"]      = rep.scored;
    mb.details()["failed"]      = rep.failed;
    if (remote) {
        mb.details()["transport_retries"] = remote->transport_retries;
    }

    run_result res  = mb.write("eval");
    res.report_hash = rep.report_hash;
    res.valid       = rep.valid;
    if (!rep.valid) {
        fail(ECHAT_ERR_RUN_INVALID,
             "eval: " + std::to_string(rep.failed) + " of " + std::to_string(rep.total) +
                 " entries failed judging, above the configured threshold; run marked invalid "
                 "(report written to " + report_json + ")");
    }
    return res;
}

// ---------------------------------------------------------------------------
// chat

static bool chat_task_thinks(task_kind t) {
    return t == task_kind::s2s_think || t == task_kind::s2s_interleave_think;
}

static bool chat_task_streams(task_kind t) {
    return t == task_kind::s2s_interleave || t == task_kind::s2s_interleave_think;
}

static bool chat_task_takes_audio(task_kind t) {
    return t != task_kind::t2t && t != task_kind::tts;
}

run_result run_chat(const echat_config & cfg, const std::string & checkpoint_arg,
                    const std::string & features_path, const std::string & task_arg,
                    const std::string & text_query, const std::string & out_dir) {
    validate_config(cfg);
    const std::string ckpt_path = checkpoint_arg.empty()
                                      ? default_checkpoint(cfg, out_dir)
                                      : resolve_path(out_dir, checkpoint_arg);
    const std::string chat_dir  = resolve_path(out_dir, cfg.paths.chat);
    const std::string codec_path =
        path_join(resolve_path(out_dir, cfg.paths.corpus), "codec.bin");

    task_kind task = cfg.chat.task;
    if (!task_arg.empty()) {
        const auto parsed = task_kind_from_name(task_arg);
        check(parsed.has_value(), ECHAT_ERR_INVALID_ARGUMENT, "unknown task: " + task_arg);
        task = *parsed;
    }

    const model        m     = read_checkpoint(ckpt_path);
    const speech_codec codec = read_codec(codec_path);

    manifest_builder mb("chat", cfg, out_dir);
    mb.input_file("checkpoint", ckpt_path);
    mb.input("codec", hash_hex(codec.content_hash()));

    prompt_spec ps;
    ps.task = task;
    if (task == task_kind::understand) {
        ps.umode = understand_mode::full_label;  // the complete diagnostic view
    }

    feature_matrix         fm;
    const feature_matrix * audio = nullptr;
    if (chat_task_takes_audio(task)) {
        check(!features_path.empty(), ECHAT_ERR_INVALID_ARGUMENT,
              std::string("task ") + task_kind_name(task) + " needs a feature file");
        const std::string fpath = resolve_path(out_dir, features_path);
        fm    = read_features(fpath);
        audio = &fm;
        mb.input_file("features", fpath + ".f32");
    } else {
        check(!text_query.empty(), ECHAT_ERR_INVALID_ARGUMENT,
              std::string("task ") + task_kind_name(task) + " needs a text query");
        ps.text_payload = symbols_from_string(text_query);
        mb.input("query", hash_hex(hash_string(text_query)));
    }

    generation_config gc;
    gc.streaming         = chat_task_streams(task);
    gc.think             = chat_task_thinks(task);
    gc.max_text_tokens   = cfg.chat.max_text_tokens;
    gc.max_speech_tokens = cfg.chat.max_speech_tokens;
    gc.sampling          = cfg.chat.sampling;
    gc.top_k             = cfg.chat.top_k;
    gc.temperature       = cfg.chat.temperature;
    gc.seed              = cfg.seed;

    const generation_result  gr = generate(m, audio, ps, gc);
    const assembled_response ar = assemble_response(gr, codec, m.vocab);

    ensure_dir(chat_dir);

    // structured text result
    std::string text;
    text += std::string("task: ") + task_kind_name(task) + "\n";
    text += std::string("stop: ") + stop_reason_name(gr.stop) + "\n";
    if (gr.think) {
        text += "think_transcript: " + symbols_to_string(gr.think->transcript) + "\n";
        const cue_labels & l = gr.think->labels;
        text += "think_labels:";
        text += std::string(" ") + (l.emotion ? emotion_name(*l.emotion) : "-");
        text += std::string(" ") + (l.gender ? gender_name(*l.gender) : "-");
        text += std::string(" ") + (l.age ? age_name(*l.age) : "-");
        text += std::string(" ") + (l.event ? event_name(*l.event) : "-");
        text += "\n";
    }
    text += "text: " + symbols_to_string(ar.text_symbols) + "\n";
    text += "speech_tokens: " + std::to_string(gr.speech.size()) + "\n";
    text += "feature_frames: " + std::to_string(ar.features.frames) + "\n";
    const std::string response_txt = path_join(chat_dir, "response.txt");
    write_text_file(response_txt, text);
    mb.output_file(response_txt);

    // newline-delimited token files
    const auto write_tokens = [&](const std::string & path, const std::vector<int32_t> & ids) {
        std::string body;
        for (int32_t id : ids) {
            body += std::to_string(id) + "\n";
        }
        write_text_file(path, body);
        mb.output_file(path);
    };
    write_tokens(path_join(chat_dir, "response-text.tokens"), ar.text_symbols);
    write_tokens(path_join(chat_dir, "response-speech.tokens"), gr.speech);

    if (ar.features.frames > 0) {
        const std::string fbase = path_join(chat_dir, "response-features");
        write_features(fbase, ar.features);
        mb.output_file(fbase + ".f32");
        mb.output_file(fbase + ".hdr");
    }

    mb.details()["task"]          = task_kind_name(task);
    mb.details()["stop"]          = stop_reason_name(gr.stop);
    mb.details()["text_tokens"]   = ar.text_symbols.size();
    mb.details()["speech_tokens"] = gr.speech.size();
    mb.details()["think"]         = gr.think.has_value();
    return mb.write("chat");
}

// ---------------------------------------------------------------------------
// inspect

static std::string inspect_json_manifest(const json & doc, const std::string & path) {
    std::string out;
    const std::string format = doc.value("format", "");
    if (format == "echat-corpus 1") {
        out += "corpus manifest: " + path + "\n";
        out += "content_hash: " + doc.value("content_hash", std::string("?")) + "\n";
        out += "codec_hash: " + doc.value("codec_hash", std::string("?")) + "\n";
        if (doc.contains("splits")) {
            for (const auto & s : doc.at("splits")) {
                out += "split " + s.value("name", std::string("?")) + ": " +
                       std::to_string(s.value("count", 0)) + " samples\n";
            }
        }
        return out;
    }
    if (format == "echat-benchmark 1") {
        out += "benchmark manifest: " + path + "\n";
        out += "content_hash: " + doc.value("content_hash", std::string("?")) + "\n";
        out += "entries: " + std::to_string(doc.value("entry_count", 0)) + "\n";
        return out;
    }
    if (doc.contains("command") && doc.contains("config_hash")) {
        out += "run manifest: " + path + "\n";
        out += "command: " + doc.value("command", std::string("?")) + "\n";
        out += "version: " + doc.value("version", std::string("?")) + "\n";
        out += "config_hash: " + doc.value("config_hash", std::string("?")) + "\n";
        out += "outputs: " + std::to_string(doc.value("outputs", json::object()).size()) +
               " files\n";
        return out;
    }
    if (doc.contains("stage_count") && doc.contains("final_checkpoint")) {
        out += "curriculum manifest: " + path + "\n";
        out += "stages: " + std::to_string(doc.value("stage_count", 0)) + "\n";
        out += "final_checkpoint: " + doc.value("final_checkpoint", std::string("?")) + "\n";
        return out;
    }
    // plain config document: echo the canonical materialized form
    const echat_config cfg = config_from_json(doc.dump(), preset_config(preset_kind::desk));
    out += "config document: " + path + "\n";
    out += "config_hash: " + hash_hex(config_hash(cfg)) + "\n";
    out += config_to_json(cfg);
    return out;
}

std::string inspect_artifact(const std::string & path_arg) {
    std::string path = path_arg;
    check(path_exists(path), ECHAT_ERR_IO, "no such file: " + path);
    if (fs::is_directory(path)) {
        const std::string manifest = path_join(path, "manifest.json");
        check(path_exists(manifest), ECHAT_ERR_INVALID_ARGUMENT,
              path + ": directory has no manifest.json to describe");
        path = manifest;
    }

    // feature pairs are addressed by either half or the shared base
    const auto ends_with = [&](const char * suffix) {
        const std::string_view sv(path);
        const std::string_view s(suffix);
        return sv.size() >= s.size() && sv.substr(sv.size() - s.size()) == s;
    };
    if (ends_with(".f32") || ends_with(".hdr")) {
        const std::string    base = path.substr(0, path.size() - 4);
        const feature_matrix m    = read_features(base);
        std::string          out;
        out += "feature file: " + base + "(.f32/.hdr)\n";
        out += "frames: " + std::to_string(m.frames) + "\n";
        out += "channels: " + std::to_string(m.channels) + "\n";
        out += "frame_rate: " + std::to_string(m.frame_rate) + "\n";
        return out;
    }

    const auto   buf = read_binary_file(path);
    const std::string_view view(reinterpret_cast<const char *>(buf.data()), buf.size());

    if (view.starts_with("echat-checkpoint 1\n")) {
        model       m = read_checkpoint(path);
        std::string out;
        out += "checkpoint: " + path + "\n";
        out += "params: " + std::to_string(param_count(m)) + "\n";
        out += "content_hash: " + file_hash(path) + "\n";
        out += "model config:\n";
        out += "  channels " + std::to_string(m.cfg.feature_channels) +
               ", enc " + std::to_string(m.cfg.enc_layers) + "x" + std::to_string(m.cfg.enc_dim) +
               ", adapter " + std::to_string(m.cfg.adapter_tf_layers) + "x" +
               std::to_string(m.cfg.adapter_dim) +
               ", lm " + std::to_string(m.cfg.lm_layers) + "x" + std::to_string(m.cfg.lm_dim) +
               "\n";
        out += "  max_positions " + std::to_string(m.cfg.max_positions) +
               ", speech_vocab " + std::to_string(m.cfg.speech_vocab) + "\n";
        return out;
    }
    if (view.starts_with("echat-codec 1\n")) {
        const speech_codec c = read_codec(path);
        std::string        out;
        out += "codec: " + path + "\n";
        out += "codebook_size: " + std::to_string(c.codebook_size) + "\n";
        out += "channels: " + std::to_string(c.channels) + "\n";
        out += "smoothing_width: " + std::to_string(c.smoothing_width) + "\n";
        out += "content_hash: " + hash_hex(c.content_hash()) + "\n";
        return out;
    }

    // token file: nothing but integers and whitespace
    {
        bool token_like = !view.empty();
        for (char ch : view) {
            if (!(ch == '\n' || ch == '\r' || ch == '-' || (ch >= '0' && ch <= '9'))) {
                token_like = false;
                break;
            }
        }
        if (token_like) {
            size_t lines = 0;
            for (char ch : view) {
                lines += ch == '\n';
            }
            return "token file: " + path + "\ntokens: " + std::to_string(lines) + "\n";
        }
    }

    try {
        const json doc = json::parse(view);
        return inspect_json_manifest(doc, path);
    } catch (const error &) {
        throw;
    } catch (const std::exception &) {
        fail(ECHAT_ERR_FORMAT, path + ": unrecognized artifact");
    }
}

} // namespace echat
