// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "fdnas/config.hpp"
#include "fdnas/checkpoint.hpp"

namespace fdnas {

// Generated experiment inputs, as stored in a run directory.
struct Artifacts {
    Dataset dataset;
    std::vector<DevicePartition> parts;
    std::map<std::string, LatencyTable> tables;  // keyed by profile tag
};

// gen: dataset cache + partition manifest + synthetic latency tables.
void cmd_gen(const ExperimentConfig& cfg, const std::string& dir);

Artifacts load_artifacts(const ExperimentConfig& cfg, const std::string& dir);

// search: federated supernet search; writes supernet.ckpt + rounds.jsonl.
// rounds_override >= 0 limits the rounds executed by this invocation;
// resume_path continues from a stored checkpoint.
void cmd_search(const ExperimentConfig& cfg, const std::string& dir, int rounds_override = -1,
                const std::string& resume_path = "");

// cluster-search: per-tag adaptation from a supernet checkpoint.
void cmd_cluster_search(const ExperimentConfig& cfg, const std::string& dir,
                        const std::string& checkpoint_path, int rounds_override = -1);

// derive: argmax architecture from a checkpoint -> arch.json.
void cmd_derive(const ExperimentConfig& cfg, const std::string& dir,
                const std::string& checkpoint_path);

// finetune: FedAvg from scratch on the derived net -> compact.ckpt.
void cmd_finetune(const ExperimentConfig& cfg, const std::string& dir,
                  const std::string& arch_path, int rounds_override = -1);

// eval: metrics.json with both accuracy modes, parameter count, multiply-adds
// and expected latency per profile.
void cmd_eval(const ExperimentConfig& cfg, const std::string& dir, const std::string& arch_path,
              const std::string& compact_ckpt_path);

// report: one CSV row per run directory.
void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_csv);

nlohmann::ordered_json round_report_json(const RoundReport& rep);

}  // namespace fdnas
