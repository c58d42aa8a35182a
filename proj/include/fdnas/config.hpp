// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fdnas/data.hpp"
#include "fdnas/federation.hpp"
#include "fdnas/supernet.hpp"

namespace fdnas {

// Fully-resolved experiment description. Every default is materialized so the
// echoed JSON is diffable across runs.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";
    int workers = 1;

    struct DatasetCfg {
        std::string kind = "synthetic";  // synthetic | raw
        int num_classes = 10;
        int per_class = 40;
        int channels = 1;
        int height = 10;
        int width = 10;
        double difficulty = 0.15;
        std::string images_path;
        std::string labels_path;
    } dataset;

    struct PartitionCfg {
        std::string kind = "label_shards";  // label_shards | dirichlet | iid
        std::vector<PartitionSpec::Group> groups;
        double concentration = 0.5;
        std::vector<std::string> tags;
        double val_fraction = 0.1;
        double test_fraction = 0.1;
    } partition;

    SearchSpaceConfig search_space;

    struct FederatedCfg {
        int devices = 10;
        int rounds = 30;
        int local_epochs = 5;
        int batch_size = 32;
        int val_batch_size = 64;
        std::string online_policy = "all";  // all | fraction | fixed
        double online_fraction = 1.0;
        int online_m = 0;
        std::string interleave = "per_epoch";  // per_epoch | per_batch
    } federated;

    struct OptimizerCfg {
        double lr0 = 0.05;
        double momentum = 0.9;
        double weight_decay = 3e-4;
        double alpha_lr = 0.01;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double adam_eps = 1e-8;
    } optimizer;

    struct LossCfg {
        double lambda1 = 1.5e-4;  // reported; gradient realized via weight decay
        double lambda2 = 0.0;
    } loss;

    struct LatencyCfg {
        std::string profile = "gpu";  // search-phase table
        std::vector<std::string> profiles = {"gpu", "cpu", "phone"};
    } latency;

    struct ClusterCfg {
        std::string key = "hardware";  // hardware | data
        std::vector<std::string> hardware_tags;
        int rounds = 10;
        // tag -> (lambda2, profile)
        std::map<std::string, std::pair<double, std::string>> per_cluster;
    } cluster;

    struct FinetuneCfg {
        int rounds = 50;
        int local_epochs = 5;
        double lr0 = 0.05;
        int batch_size = 32;
    } finetune;

    struct EvalCfg {
        int local_epochs = 5;
        double lr = 0.01;
        int batch_size = 32;
    } eval;

    PartitionSpec partition_spec() const;
    OnlinePolicy online_policy() const;
    nlohmann::ordered_json to_json() const;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    // Validates cross-field consistency and referenced files.
    void validate() const;
};

void write_resolved_config(const ExperimentConfig& cfg, const std::string& dir);

}  // namespace fdnas
