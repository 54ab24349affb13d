// echat command line: thin shell over the C API in include/echat.h.
//
// exit codes: 0 success, 1 user error, 2 internal error, 3 invalid run
// (outputs written but the validity gate failed).

#include "echat.h"

#include <CLI11.hpp>

#include <cstdio>
#include <string>

static int exit_code_for(echat_status st) {
    switch (st) {
        case ECHAT_OK:
            return 0;
        case ECHAT_ERR_RUN_INVALID:
            return 3;
        case ECHAT_ERR_NUMERIC:
        case ECHAT_ERR_INTERNAL:
            return 2;
        default:
            return 1;
    }
}

int main(int argc, char ** argv) {
    CLI::App app{"empathetic speech-to-speech dialogue testbed"};
    app.require_subcommand(1);

    std::string config_path;
    std::string preset = "desk";
    std::string out_dir = ".";
    int64_t     seed    = -1;

    app.add_option("--config", config_path, "JSON config file (overrides the preset)");
    app.add_option("--preset", preset, "configuration preset")
        ->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--out", out_dir, "directory for run outputs");
    app.add_option("--seed", seed, "master seed (overrides the config value)");

    // data-gen
    auto * cmd_data_gen =
        app.add_subcommand("data-gen", "generate the synthetic corpus + benchmark");

    // fit-codec
    std::string fc_corpus;
    auto * cmd_fit_codec =
        app.add_subcommand("fit-codec", "refit the speech-token codec from a corpus");
    cmd_fit_codec->add_option("--corpus", fc_corpus, "corpus directory (default: from config)");

    // train
    std::string tr_corpus, tr_stage, tr_init;
    auto * cmd_train = app.add_subcommand("train", "run the staged training curriculum");
    cmd_train->add_option("--corpus", tr_corpus, "corpus directory (default: from config)");
    cmd_train->add_option("--stage", tr_stage,
                          "single stage to run (default: the full curriculum)");
    cmd_train->add_option("--init-checkpoint", tr_init, "checkpoint to seed the model from");

    // eval
    std::string ev_checkpoint, ev_benchmark, ev_judge = "rule";
    auto * cmd_eval = app.add_subcommand("eval", "score a checkpoint on the benchmark");
    cmd_eval->add_option("--checkpoint", ev_checkpoint,
                         "checkpoint to score (default: last trained)");
    cmd_eval->add_option("--benchmark", ev_benchmark,
                         "benchmark directory (default: from config)");
    cmd_eval->add_option("--judge", ev_judge, "judge backend")
        ->check(CLI::IsMember({"rule", "remote"}));

    // chat
    std::string ch_checkpoint, ch_features, ch_task, ch_query;
    auto * cmd_chat = app.add_subcommand("chat", "generate one dialogue turn");
    cmd_chat->add_option("--checkpoint", ch_checkpoint,
                         "checkpoint to run (default: last trained)");
    cmd_chat->add_option("--features", ch_features, "query feature file (speech-input tasks)");
    cmd_chat->add_option("--task", ch_task, "task name (default: from config)");
    cmd_chat->add_option("--query", ch_query, "query symbol string (text-input tasks)");

    // inspect
    std::string in_path;
    auto * cmd_inspect = app.add_subcommand("inspect", "describe an artifact");
    cmd_inspect->add_option("path", in_path, "artifact to describe")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);  // help text on stdout, exit 0
    } catch (const CLI::ParseError & e) {
        fprintf(stderr, "echat: %s\n", e.what());
        fprintf(stderr, "%s", app.help().c_str());
        return 1;
    }

    echat_session_params params = {};
    params.config_path          = config_path.empty() ? nullptr : config_path.c_str();
    params.preset               = preset.c_str();
    params.out_dir              = out_dir.c_str();
    params.seed                 = seed;

    echat_session *    s  = nullptr;
    const echat_status os = echat_session_open(&params, &s);
    if (os != ECHAT_OK) {
        fprintf(stderr, "echat: %s: %s\n", echat_status_name(os), echat_last_error(s));
        echat_session_close(s);
        return exit_code_for(os);
    }

    const auto opt = [](const std::string & v) { return v.empty() ? nullptr : v.c_str(); };

    echat_status st = ECHAT_OK;
    if (cmd_data_gen->parsed()) {
        st = echat_run_data_gen(s);
    } else if (cmd_fit_codec->parsed()) {
        st = echat_run_fit_codec(s, opt(fc_corpus));
    } else if (cmd_train->parsed()) {
        st = echat_run_train(s, opt(tr_corpus), opt(tr_stage), opt(tr_init));
    } else if (cmd_eval->parsed()) {
        st = echat_run_eval(s, opt(ev_checkpoint), opt(ev_benchmark), ev_judge.c_str());
    } else if (cmd_chat->parsed()) {
        st = echat_run_chat(s, opt(ch_checkpoint), opt(ch_features), opt(ch_task),
                            opt(ch_query));
    } else if (cmd_inspect->parsed()) {
        char * text = nullptr;
        st          = echat_inspect(s, in_path.c_str(), &text);
        if (st == ECHAT_OK && text) {
            fputs(text, stdout);
        }
        echat_string_free(text);
    }

    if (st != ECHAT_OK) {
        fprintf(stderr, "echat: %s: %s\n", echat_status_name(st), echat_last_error(s));
    }
    echat_session_close(s);
    return exit_code_for(st);
}
