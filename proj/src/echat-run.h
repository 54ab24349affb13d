#pragma once

// subcommand orchestration: each run_* ties modules into one reproducible
// step, resolves artifact paths against the out dir, and writes exactly one
// run manifest (manifest-<command>.json) listing the config echo, input
// hashes, and every output file the run created.

#include "echat-config.h"

#include <map>
#include <string>

namespace echat {

#define ECHAT_VERSION_STRING "0.1.0"

// `p` taken as-is when absolute, otherwise joined onto out_dir
std::string resolve_path(const std::string & out_dir, const std::string & p);

struct run_result {
    std::string manifest_path;
    // out-relative path (absolute when outside out_dir) -> content hash
    std::map<std::string, std::string> outputs;

    // eval extras
    std::string report_hash;
    bool        valid = true;
};

// corpus + benchmark + codec under paths.corpus / paths.benchmark
run_result run_data_gen(const echat_config & cfg, const std::string & out_dir);

// standalone codec refit from a corpus directory's audio features;
// empty corpus_dir = paths.corpus
run_result run_fit_codec(const echat_config & cfg, const std::string & corpus_dir,
                         const std::string & out_dir);

// full curriculum (stage = "") or a single named stage; init_checkpoint seeds
// the model state (must match the configured model exactly)
run_result run_train(const echat_config & cfg, const std::string & corpus_dir,
                     const std::string & stage, const std::string & init_checkpoint,
                     const std::string & out_dir);

// benchmark scoring + understanding metrics; empty checkpoint = the final
// checkpoint named by paths.train/curriculum.json.  throws run_invalid after
// writing all outputs when the failure fraction exceeds the threshold.
run_result run_eval(const echat_config & cfg, const std::string & checkpoint,
                    const std::string & benchmark_dir, judge_choice jc,
                    const std::string & out_dir);

// one inference turn; task = "" uses chat.task.  features_path feeds
// speech-input tasks, text_query (symbol string) feeds text-input tasks.
run_result run_chat(const echat_config & cfg, const std::string & checkpoint,
                    const std::string & features_path, const std::string & task,
                    const std::string & text_query, const std::string & out_dir);

// human-readable description of a checkpoint, codec, manifest, feature file,
// token file, or config document
std::string inspect_artifact(const std::string & path);

} // namespace echat
