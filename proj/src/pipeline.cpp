// SPDX-License-Identifier: Apache-2.0
#include "fdnas/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace fs = std::filesystem;

namespace fdnas {

namespace {

Dataset build_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind == "raw") {
        return load_raw_images(cfg.dataset.images_path, cfg.dataset.labels_path);
    }
    return gen_synthetic(cfg.dataset.num_classes, cfg.dataset.per_class, cfg.dataset.channels,
                         cfg.dataset.height, cfg.dataset.width, cfg.dataset.difficulty, cfg.seed);
}

std::set<std::string> required_profiles(const ExperimentConfig& cfg) {
    std::set<std::string> out(cfg.latency.profiles.begin(), cfg.latency.profiles.end());
    out.insert(cfg.latency.profile);
    for (const auto& [tag, v] : cfg.cluster.per_cluster) out.insert(v.second);
    return out;
}

UpdateOpts update_opts_from(const ExperimentConfig& cfg, const LatencyTable* table) {
    UpdateOpts u;
    u.epochs = cfg.federated.local_epochs;
    u.lr_w = cfg.optimizer.lr0;
    u.momentum = cfg.optimizer.momentum;
    u.weight_decay = cfg.optimizer.weight_decay;
    u.alpha_lr = cfg.optimizer.alpha_lr;
    u.beta1 = cfg.optimizer.beta1;
    u.beta2 = cfg.optimizer.beta2;
    u.adam_eps = cfg.optimizer.adam_eps;
    u.lambda1 = cfg.loss.lambda1;
    u.lambda2 = cfg.loss.lambda2;
    u.table = table;
    u.batch_size = cfg.federated.batch_size;
    u.val_batch_size = cfg.federated.val_batch_size;
    u.interleave =
        cfg.federated.interleave == "per_batch" ? Interleave::per_batch : Interleave::per_epoch;
    return u;
}

void write_jsonl_line(std::ofstream& os, const nlohmann::ordered_json& j) {
    os << j.dump() << '\n';
    os.flush();
}

void write_timing(const std::string& dir, const std::string& key, double seconds) {
    nlohmann::ordered_json j;
    const std::string path = dir + "/timing.json";
    if (fs::exists(path)) {
        std::ifstream is(path);
        try {
            j = nlohmann::ordered_json::parse(is);
        } catch (...) {
            j = nlohmann::ordered_json::object();
        }
    }
    j[key] = seconds;
    std::ofstream os(path);
    os << j.dump(2) << '\n';
}

void check_space(const CheckpointMeta& meta, const SearchSpaceConfig& space,
                 const std::string& what) {
    if (meta.space_hash != space.hash()) {
        throw std::invalid_argument(what + ": checkpoint search space " +
                                    std::to_string(meta.space_hash) +
                                    " does not match configured space " +
                                    std::to_string(space.hash()));
    }
}

}  // namespace

nlohmann::ordered_json round_report_json(const RoundReport& rep) {
    nlohmann::ordered_json j;
    j["round"] = rep.round;
    j["participants"] = rep.participants;
    j["failed"] = rep.failed;
    j["sizes"] = rep.sizes;
    j["train_losses"] = rep.train_losses;
    j["val_losses"] = rep.val_losses;
    j["val_reg_losses"] = rep.val_reg_losses;
    j["mean_train_loss"] = rep.mean_train_loss;
    j["mean_val_loss"] = rep.mean_val_loss;
    j["mean_val_reg_loss"] = rep.mean_val_reg_loss;
    j["mean_total_loss"] = rep.mean_total_loss;
    j["expected_latency_ms"] = rep.expected_latency_ms;
    // wall time goes into timing.json; these lines stay byte-reproducible
    return j;
}

void cmd_gen(const ExperimentConfig& cfg, const std::string& dir) {
    fs::create_directories(dir);
    write_resolved_config(cfg, dir);

    Dataset ds = build_dataset(cfg);
    save_dataset_cache(ds, dir + "/dataset.bin");
    // From here on everything reads the cache so raw/synthetic pipelines agree.
    ds = load_dataset_cache(dir + "/dataset.bin");

    auto parts = partition(ds, cfg.partition_spec(), cfg.federated.devices, cfg.seed);
    for (auto& p : parts) {
        p = split_train_val_test(p, cfg.partition.val_fraction, cfg.partition.test_fraction,
                                 cfg.seed);
    }
    save_partition_manifest(parts, cfg.seed, dir + "/partition.json");

    for (const auto& tag : required_profiles(cfg)) {
        const auto table = synth_latency_table(HardwareProfile::preset(tag), cfg.search_space);
        save_latency_table(table, dir + "/latency_" + tag + ".csv");
    }
}

Artifacts load_artifacts(const ExperimentConfig& cfg, const std::string& dir) {
    Artifacts a;
    a.dataset = load_dataset_cache(dir + "/dataset.bin");
    a.parts = load_partition_manifest(dir + "/partition.json");
    require(static_cast<int>(a.parts.size()) == cfg.federated.devices,
            "artifacts: partition has " + std::to_string(a.parts.size()) + " devices, config " +
                std::to_string(cfg.federated.devices));
    for (const auto& tag : required_profiles(cfg)) {
        a.tables[tag] = load_latency_table(dir + "/latency_" + tag + ".csv", cfg.search_space);
    }
    return a;
}

void cmd_search(const ExperimentConfig& cfg, const std::string& dir, int rounds_override,
                const std::string& resume_path) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(dir);
    write_resolved_config(cfg, dir);
    Artifacts a = load_artifacts(cfg, dir);

    Rng root(cfg.seed);
    auto devices =
        make_devices(a.parts, cfg.search_space, cfg.cluster.hardware_tags, root.derive("init"));
    auto dptrs = device_ptrs(devices);

    ServerState server;
    bool resumed = false;
    if (!resume_path.empty()) {
        auto [meta, params] = load_checkpoint(resume_path);
        check_space(meta, cfg.search_space, "search --resume");
        server.global = std::move(params);
        server.round = meta.round;
        resumed = true;
    } else {
        SuperNet seed_net(cfg.search_space, root.derive("init"));
        server.global = seed_net.snapshot_params();
    }

    const int to_run = rounds_override >= 0 ? rounds_override : cfg.federated.rounds;
    FedSearchOpts opts;
    opts.total_rounds = std::max(1, cfg.federated.rounds);
    opts.target_round = server.round + to_run;
    opts.lr0 = cfg.optimizer.lr0;
    opts.online = cfg.online_policy();
    opts.update = update_opts_from(cfg, &a.tables.at(cfg.latency.profile));
    opts.workers = cfg.workers;
    opts.root = root.derive("search");

    std::ofstream jsonl(dir + "/rounds.jsonl", resumed ? std::ios::app : std::ios::trunc);
    require(jsonl.good(), "cannot open rounds.jsonl in '" + dir + "'");
    opts.on_round = [&](const RoundReport& rep) { write_jsonl_line(jsonl, round_report_json(rep)); };

    run_fdnas(server, dptrs, a.dataset, opts);

    CheckpointMeta meta;
    meta.kind = "supernet";
    meta.seed = cfg.seed;
    meta.round = server.round;
    meta.space_hash = cfg.search_space.hash();
    save_checkpoint(dir + "/supernet.ckpt", meta, server.global);
    write_timing(dir, "search_wall_s",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

void cmd_cluster_search(const ExperimentConfig& cfg, const std::string& dir,
                        const std::string& checkpoint_path, int rounds_override) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(dir);
    write_resolved_config(cfg, dir);
    Artifacts a = load_artifacts(cfg, dir);

    auto [meta, init_global] = load_checkpoint(checkpoint_path);
    check_space(meta, cfg.search_space, "cluster-search");

    Rng root(cfg.seed);
    auto devices =
        make_devices(a.parts, cfg.search_space, cfg.cluster.hardware_tags, root.derive("init"));
    const ClusterKey key =
        cfg.cluster.key == "data" ? ClusterKey::data_tag : ClusterKey::hardware_tag;
    ClusterPlan plan = cluster_by_tag(devices, key);

    std::map<std::string, ClusterOpts> per_cluster;
    for (const auto& [tag, ids] : plan.clusters) {
        ClusterOpts co;
        auto it = cfg.cluster.per_cluster.find(tag);
        co.lambda2 = it != cfg.cluster.per_cluster.end() ? it->second.first : cfg.loss.lambda2;
        const std::string profile =
            it != cfg.cluster.per_cluster.end() ? it->second.second : cfg.latency.profile;
        require(a.tables.count(profile) > 0,
                "cluster-search: no latency table for profile '" + profile + "'");
        co.table = &a.tables.at(profile);
        per_cluster[tag] = co;
    }

    FedSearchOpts base;
    base.lr0 = cfg.optimizer.lr0;
    base.online = cfg.online_policy();
    base.update = update_opts_from(cfg, nullptr);
    base.workers = cfg.workers;
    base.root = root.derive("search");

    const int rounds = rounds_override >= 0 ? rounds_override : cfg.cluster.rounds;
    auto results = run_cfdnas(init_global, plan, devices, a.dataset, base, per_cluster, rounds);

    for (const auto& [tag, server] : results) {
        const std::string cdir = dir + "/cluster_" + tag;
        fs::create_directories(cdir);
        CheckpointMeta cmeta;
        cmeta.kind = "supernet";
        cmeta.seed = cfg.seed;
        cmeta.round = server.round;
        cmeta.space_hash = cfg.search_space.hash();
        save_checkpoint(cdir + "/supernet.ckpt", cmeta, server.global);

        std::ofstream jsonl(cdir + "/rounds.jsonl", std::ios::trunc);
        for (const auto& rep : server.history) write_jsonl_line(jsonl, round_report_json(rep));

        SuperNet net(cfg.search_space, Rng(0));
        net.load_params(server.global);
        auto arch = derive_normal_net(net, file_hash_hex(cdir + "/supernet.ckpt"));
        save_arch(arch, cdir + "/arch.json");
    }
    write_timing(dir, "cluster_search_wall_s",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

void cmd_derive(const ExperimentConfig& cfg, const std::string& dir,
                const std::string& checkpoint_path) {
    fs::create_directories(dir);
    write_resolved_config(cfg, dir);
    auto [meta, params] = load_checkpoint(checkpoint_path);
    check_space(meta, cfg.search_space, "derive");
    SuperNet net(cfg.search_space, Rng(0));
    net.load_params(params);
    auto arch = derive_normal_net(net, file_hash_hex(checkpoint_path));
    save_arch(arch, dir + "/arch.json");
}

void cmd_finetune(const ExperimentConfig& cfg, const std::string& dir,
                  const std::string& arch_path, int rounds_override) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(dir);
    write_resolved_config(cfg, dir);
    Artifacts a = load_artifacts(cfg, dir);
    DerivedArchitecture arch = load_arch(arch_path);
    if (arch.space.hash() != cfg.search_space.hash()) {
        throw std::invalid_argument("finetune: architecture space does not match config space");
    }

    FinetuneOpts fo;
    fo.rounds = rounds_override >= 0 ? rounds_override : cfg.finetune.rounds;
    fo.epochs = cfg.finetune.local_epochs;
    fo.lr0 = cfg.finetune.lr0;
    fo.momentum = cfg.optimizer.momentum;
    fo.weight_decay = cfg.optimizer.weight_decay;
    fo.batch_size = cfg.finetune.batch_size;
    fo.online = cfg.online_policy();
    fo.workers = cfg.workers;
    fo.root = Rng(cfg.seed).derive("finetune");

    std::ofstream jsonl(dir + "/finetune_rounds.jsonl", std::ios::trunc);
    fo.on_round = [&](const RoundReport& rep) { write_jsonl_line(jsonl, round_report_json(rep)); };

    auto result = finetune_fedavg(arch, a.parts, a.dataset, fo);

    CheckpointMeta meta;
    meta.kind = "compact";
    meta.seed = cfg.seed;
    meta.round = fo.rounds;
    meta.space_hash = cfg.search_space.hash();
    save_checkpoint(dir + "/compact.ckpt", meta, result.global);
    write_timing(dir, "finetune_wall_s",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& dir, const std::string& arch_path,
              const std::string& compact_ckpt_path) {
    fs::create_directories(dir);
    write_resolved_config(cfg, dir);
    Artifacts a = load_artifacts(cfg, dir);
    DerivedArchitecture arch = load_arch(arch_path);
    if (arch.space.hash() != cfg.search_space.hash()) {
        throw std::invalid_argument("eval: architecture space does not match config space");
    }
    auto [meta, params] = load_checkpoint(compact_ckpt_path);
    require(meta.kind == "compact", "eval: expected a compact checkpoint");
    check_space(meta, cfg.search_space, "eval");

    EvalOpts eo;
    eo.local_epochs = cfg.eval.local_epochs;
    eo.lr = cfg.eval.lr;
    eo.batch_size = cfg.eval.batch_size;
    eo.root = Rng(cfg.seed).derive("eval");

    const double acc_fed =
        evaluate(arch, params, a.parts, a.dataset, EvalMode::federated_averaged, eo);
    const double acc_local = evaluate(arch, params, a.parts, a.dataset, EvalMode::mean_local, eo);

    CompactNet net(arch, Rng(0));
    nlohmann::ordered_json j;
    j["run_id"] = fs::path(dir).filename().string();
    j["seed"] = cfg.seed;
    j["acc_federated_averaged"] = acc_fed;
    j["acc_mean_local"] = acc_local;
    j["params"] = net.param_count();
    j["params_m"] = static_cast<double>(net.param_count()) / 1e6;
    j["flops_macs"] = net.flops();
    j["flops_m"] = static_cast<double>(net.flops()) / 1e6;
    nlohmann::ordered_json lat = nlohmann::ordered_json::object();
    for (const auto& [tag, table] : a.tables) lat[tag] = derived_latency(arch, table);
    j["expected_latency_ms"] = std::move(lat);
    std::ofstream os(dir + "/metrics.json");
    require(os.good(), "cannot write metrics.json into '" + dir + "'");
    os << j.dump(2) << '\n';
}

void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_csv) {
    require(!run_dirs.empty(), "report: no run directories given");
    std::vector<nlohmann::json> metrics;
    std::vector<double> walls;
    std::set<std::string> profiles;
    for (const auto& dir : run_dirs) {
        std::ifstream is(dir + "/metrics.json");
        if (!is.good()) throw std::runtime_error("report: missing metrics.json in '" + dir + "'");
        nlohmann::json m = nlohmann::json::parse(is);
        for (const auto& [tag, v] : m.at("expected_latency_ms").items()) profiles.insert(tag);
        metrics.push_back(std::move(m));

        double wall = 0.0;
        std::ifstream ts(dir + "/timing.json");
        if (ts.good()) {
            try {
                wall = nlohmann::json::parse(ts).value("search_wall_s", 0.0);
            } catch (...) {
            }
        }
        walls.push_back(wall);
    }

    std::ofstream os(out_csv);
    require(os.good(), "cannot open '" + out_csv + "' for writing");
    os << "run_id,seed,acc_fedavg,acc_local_mean,params_m,flops_m";
    for (const auto& p : profiles) os << ",lat_" << p << "_ms";
    os << ",search_wall_s\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        const auto& m = metrics[i];
        os << m.at("run_id").get<std::string>() << ',' << m.at("seed").get<std::uint64_t>() << ','
           << num(m.at("acc_federated_averaged").get<double>()) << ','
           << num(m.at("acc_mean_local").get<double>()) << ','
           << num(m.at("params_m").get<double>()) << ',' << num(m.at("flops_m").get<double>());
        for (const auto& p : profiles) {
            const auto& lat = m.at("expected_latency_ms");
            os << ',' << (lat.contains(p) ? num(lat.at(p).get<double>()) : std::string());
        }
        os << ',' << num(walls[i]) << '\n';
    }
}

}  // namespace fdnas
