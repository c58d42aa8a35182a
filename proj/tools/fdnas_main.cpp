// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner: gen -> search -> cluster-search -> derive -> finetune ->
// eval -> report, all driven by one JSON config and a root seed.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fdnas/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* c = cmd->add_option("--config", args.config_path, "experiment config (JSON)");
    if (config_required) c->required();
    cmd->add_option("--out", args.out_dir, "run directory")->required();
    cmd->add_option("--seed", args.seed, "override config seed");
    cmd->add_option("--workers", args.workers, "override worker count");
}

fdnas::ExperimentConfig resolve(const CommonArgs& args) {
    fdnas::ExperimentConfig cfg = args.config_path.empty()
                                      ? fdnas::ExperimentConfig{}
                                      : fdnas::ExperimentConfig::load(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (args.workers) cfg.workers = *args.workers;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated direct architecture search simulator"};
    app.require_subcommand(1);

    CommonArgs gen_args, search_args, cluster_args, derive_args, finetune_args, eval_args;
    int search_rounds = -1, cluster_rounds = -1, finetune_rounds = -1;
    std::string resume_path, ckpt_path, cluster_ckpt, arch_path, finetune_arch, eval_arch,
        eval_ckpt, report_csv;
    std::vector<std::string> report_dirs;

    auto* gen = app.add_subcommand("gen", "generate dataset, partition and latency tables");
    add_common(gen, gen_args);

    auto* search = app.add_subcommand("search", "federated supernet search");
    add_common(search, search_args);
    search->add_option("--rounds", search_rounds, "rounds to run in this invocation");
    search->add_option("--resume", resume_path, "continue from a supernet checkpoint");

    auto* cluster = app.add_subcommand("cluster-search", "per-cluster supernet adaptation");
    add_common(cluster, cluster_args);
    cluster->add_option("--checkpoint", cluster_ckpt, "supernet checkpoint to adapt")->required();
    cluster->add_option("--rounds", cluster_rounds, "rounds per cluster");

    auto* derive = app.add_subcommand("derive", "derive the normal net from a checkpoint");
    add_common(derive, derive_args);
    derive->add_option("--checkpoint", ckpt_path, "supernet checkpoint")->required();

    auto* finetune = app.add_subcommand("finetune", "FedAvg training of a derived net");
    add_common(finetune, finetune_args);
    finetune->add_option("--arch", finetune_arch, "architecture JSON")->required();
    finetune->add_option("--rounds", finetune_rounds, "fine-tuning rounds");

    auto* eval = app.add_subcommand("eval", "evaluate a fine-tuned derived net");
    add_common(eval, eval_args);
    eval->add_option("--arch", eval_arch, "architecture JSON")->required();
    eval->add_option("--checkpoint", eval_ckpt, "compact checkpoint")->required();

    auto* report = app.add_subcommand("report", "summarize runs into one CSV");
    report->add_option("--out", report_csv, "output CSV path")->required();
    report->add_option("runs", report_dirs, "run directories")->required();

    CLI11_PARSE(app, argc, argv);

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        if (gen->parsed()) {
            auto cfg = resolve(gen_args);
            fdnas::cmd_gen(cfg, cfg.out_dir);
        } else if (search->parsed()) {
            auto cfg = resolve(search_args);
            fdnas::cmd_search(cfg, cfg.out_dir, search_rounds, resume_path);
        } else if (cluster->parsed()) {
            auto cfg = resolve(cluster_args);
            fdnas::cmd_cluster_search(cfg, cfg.out_dir, cluster_ckpt, cluster_rounds);
        } else if (derive->parsed()) {
            auto cfg = resolve(derive_args);
            fdnas::cmd_derive(cfg, cfg.out_dir, ckpt_path);
        } else if (finetune->parsed()) {
            auto cfg = resolve(finetune_args);
            fdnas::cmd_finetune(cfg, cfg.out_dir, finetune_arch, finetune_rounds);
        } else if (eval->parsed()) {
            auto cfg = resolve(eval_args);
            fdnas::cmd_eval(cfg, cfg.out_dir, eval_arch, eval_ckpt);
        } else if (report->parsed()) {
            fdnas::cmd_report(report_dirs, report_csv);
        }
    } catch (const std::exception& e) {
        nlohmann::ordered_json err;
        err["error"] = e.what();
        err["command"] = cmd;
        std::cerr << err.dump() << std::endl;
        return 1;
    }
    return 0;
}
