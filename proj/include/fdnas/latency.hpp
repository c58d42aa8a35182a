// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fdnas/supernet.hpp"

namespace fdnas {

// Inference-time lookup for every (layer, candidate) edge of a search space,
// in milliseconds. Immutable after load; shared freely across device updates.
struct LatencyTable {
    std::string hardware_tag;
    int batch_size = 1;
    std::map<std::pair<int, std::string>, double> entries;

    double at(int layer, const std::string& candidate) const;
    bool has(int layer, const std::string& candidate) const;
    // Per-candidate latencies for one layer, in candidate order.
    std::vector<double> layer_costs(const MixedLayer& layer) const;
    // Throws listing every missing (layer, candidate) key.
    void validate(const SearchSpaceConfig& space) const;
};

struct HardwareProfile {
    std::string tag = "custom";
    double throughput = 1.0e6;  // multiply-adds per millisecond
    double overhead_ms = 0.01;  // fixed per-op cost

    static HardwareProfile preset(const std::string& tag);
};

// Multiply-add count of one candidate at the given input spatial size.
std::int64_t flops_of_candidate(const OperationCandidate& candidate, int in_h, int in_w);

// entry = MACs / throughput + overhead, deterministic in the profile.
LatencyTable synth_latency_table(const HardwareProfile& profile, const SearchSpaceConfig& space);

// Eq-style expected latency: dot(p, F).
double expected_layer_latency(std::span<const double> probs, std::span<const double> costs_ms);

// Expected latency of the whole supernet under its current probabilities.
double expected_net_latency(const SuperNet& net, const LatencyTable& table);

// Latency of a derived (discrete) architecture: sum of chosen entries.
double derived_latency(const DerivedArchitecture& arch, const LatencyTable& table);

// ce + lambda1 * sum ||w||^2 + lambda2 * sum(layer latencies). The lambda1
// term is applied through optimizer weight decay during training; this
// reports all three terms for logging.
double total_loss(double ce, const std::vector<const Parameter*>& weights,
                  std::span<const double> layer_latencies, double lambda1, double lambda2);

// CSV `layer,candidate,ms` plus a <path>.meta.json sidecar with the tag and
// batch size. Round-trips bit-exact.
void save_latency_table(const LatencyTable& table, const std::string& path);
LatencyTable load_latency_table(const std::string& path);
// Load and check completeness against a space in one step.
LatencyTable load_latency_table(const std::string& path, const SearchSpaceConfig& space);

}  // namespace fdnas
