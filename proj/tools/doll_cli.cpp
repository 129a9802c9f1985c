#include "doll/pipeline.hpp"

#include "doll/formats.hpp"

#include <omp.h>

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

namespace {

struct CommonOpts {
    std::string config_path;
    std::string run_dir_root;
    std::vector<std::string> overrides;  // key=value
    bool force = false;
    int jobs = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "config file (key=value lines)");
    cmd->add_option("--run-dir", opts.run_dir_root, "output root (default $DOLL_RUN_DIR or ./runs)");
    cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set pipeline.tau=0.2");
    cmd->add_flag("--force", opts.force, "redo even when outputs are up to date");
    cmd->add_option("-j,--jobs", opts.jobs, "cap worker threads");
}

doll::RunContext make_context(const CommonOpts& opts) {
    std::map<std::string, std::string> kv;
    if (!opts.config_path.empty()) kv = doll::parse_config_file(opts.config_path);
    for (const std::string& ov : opts.overrides) {
        const auto pair = doll::parse_config_text(ov);
        for (const auto& [k, v] : pair) kv[k] = v;
    }
    doll::RunContext ctx;
    ctx.cfg = doll::config_from_kv(kv);
    if (opts.jobs > 0) ctx.cfg.jobs = opts.jobs;
    if (ctx.cfg.jobs > 0) omp_set_num_threads(ctx.cfg.jobs);
    const std::string root = opts.run_dir_root.empty() ? doll::default_run_root()
                                                       : opts.run_dir_root;
    ctx.run_dir = root + "/" + ctx.cfg.run_id;
    ctx.force = opts.force;
    return ctx;
}

void note_result(bool did_work, const std::string& what) {
    if (did_work)
        std::cout << what << ": done\n";
    else
        std::cout << what << ": up to date (use --force to redo)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"explanation-derived pseudo-label segmentation pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string eval_checkpoint;
    std::vector<std::string> report_ids;
    std::string aggregation_flag, init_flag, freeze_flag;
    int shots_flag = -1;

    CLI::App* gen_data = app.add_subcommand("gen-data", "generate the synthetic corpora");
    add_common(gen_data, opts);

    CLI::App* train_clf = app.add_subcommand("train-classifiers", "train the weak ensemble");
    add_common(train_clf, opts);

    CLI::App* boost = app.add_subcommand("boost-weights", "compute ensemble boosting weights");
    add_common(boost, opts);

    CLI::App* gen_doll = app.add_subcommand("gen-doll", "distill explanations into mask files");
    add_common(gen_doll, opts);
    gen_doll->add_option("--aggregation", aggregation_flag, "boosted|averaged");

    CLI::App* pretrain = app.add_subcommand("pretrain", "end-to-end pre-training on the masks");
    add_common(pretrain, opts);
    pretrain->add_option("--aggregation", aggregation_flag, "boosted|averaged");

    CLI::App* finetune = app.add_subcommand("finetune", "fine-tune on a downstream task");
    add_common(finetune, opts);
    finetune->add_option("--init", init_flag, "doll|scratch|classifier-backbone");
    finetune->add_option("--freeze-backbone", freeze_flag, "on|off");
    finetune->add_option("--shots", shots_flag, "few-shot labeled image count (0 = all)");
    finetune->add_option("--aggregation", aggregation_flag, "boosted|averaged");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval_cmd, opts);
    eval_cmd->add_option("checkpoint", eval_checkpoint, "checkpoint path")->required();

    CLI::App* report = app.add_subcommand("report", "comparison tables and convergence plots");
    add_common(report, opts);
    report->add_option("runs", report_ids, "run ids to compare")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        doll::RunContext ctx = make_context(opts);
        if (!aggregation_flag.empty())
            ctx.cfg.aggregation = doll::aggregation_from_name(aggregation_flag);
        if (!init_flag.empty()) ctx.cfg.finetune_init = init_flag;
        if (!freeze_flag.empty())
            ctx.cfg.finetune.freeze_backbone = freeze_flag == "on" || freeze_flag == "true";
        if (shots_flag >= 0) ctx.cfg.shots = shots_flag;
        ctx.cfg.validate();

        if (gen_data->parsed()) note_result(doll::cmd_gen_data(ctx), "gen-data");
        else if (train_clf->parsed())
            note_result(doll::cmd_train_classifiers(ctx), "train-classifiers");
        else if (boost->parsed()) note_result(doll::cmd_boost_weights(ctx), "boost-weights");
        else if (gen_doll->parsed()) note_result(doll::cmd_gen_doll(ctx), "gen-doll");
        else if (pretrain->parsed()) note_result(doll::cmd_pretrain(ctx), "pretrain");
        else if (finetune->parsed()) note_result(doll::cmd_finetune(ctx), "finetune");
        else if (eval_cmd->parsed()) {
            const doll::MetricsReport rep = doll::cmd_eval(ctx, eval_checkpoint);
            std::cout << doll::report_to_json(rep) << "\n";
        } else if (report->parsed()) {
            const std::string root =
                opts.run_dir_root.empty() ? doll::default_run_root() : opts.run_dir_root;
            doll::cmd_report(ctx, root, report_ids);
        }
    } catch (const doll::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const doll::MissingArtifact& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 3;
    } catch (const doll::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const doll::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
