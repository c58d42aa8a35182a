// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fdnas/data.hpp"
#include "fdnas/latency.hpp"
#include "fdnas/supernet.hpp"

namespace fdnas {

// One simulated device: its data slice, hardware tag, and a private supernet
// replica. The replica is confined to one device update at a time; distinct
// devices may update concurrently.
struct DeviceState {
    int device_id = 0;
    DevicePartition part;
    std::string hardware_tag;
    std::shared_ptr<SuperNet> net;
    // Randomness key; defaults to the device id. Tests may alias streams to
    // make devices behave identically.
    std::uint64_t stream_id = 0;
};

std::vector<DeviceState> make_devices(const std::vector<DevicePartition>& parts,
                                      const SearchSpaceConfig& space,
                                      const std::vector<std::string>& hardware_tags, Rng init);

enum class Interleave { per_epoch, per_batch };

struct UpdateOpts {
    int epochs = 5;
    int epoch_base = 0;  // global epoch index of this call's first epoch
    double lr_w = 0.05;
    double momentum = 0.9;
    double weight_decay = 3e-4;
    double alpha_lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    // Reporting weight for the ||w||^2 term; its gradient is realized through
    // the coupled weight decay above.
    double lambda1 = 1.5e-4;
    double lambda2 = 0.0;
    const LatencyTable* table = nullptr;
    int batch_size = 32;
    int val_batch_size = 64;
    bool arch_steps = true;
    Interleave interleave = Interleave::per_epoch;
    Rng phase_root{0};  // phase-scoped stream root (search phase, cluster, ...)
};

struct DeviceUpdateResult {
    int device_id = 0;
    std::int64_t n_train = 0;
    ParamMap params;
    double train_loss = 0.0;    // mean weight-step cross-entropy
    double val_loss = 0.0;      // mean arch-step cross-entropy
    double val_reg_loss = 0.0;  // val_loss + lambda2 * expected latency
    double total_loss = 0.0;    // val_loss + lambda1 ||w||^2 + lambda2 latency
    int weight_steps = 0;
    int arch_steps = 0;
};

// ProxylessNAS-style local update: per epoch, SGD-momentum weight steps over
// the training batches under sampled single-path gates, then Adam two-path
// architecture steps over the validation batches (per_epoch interleaving;
// per_batch alternates within the epoch). Optimizer buffers start fresh each
// call. Throws on empty loaders or non-finite loss.
DeviceUpdateResult device_update(DeviceState& dev, const ParamMap& global, const Dataset& ds,
                                 const UpdateOpts& opts);

struct Update {
    int device_id = 0;
    std::int64_t n = 0;
    ParamMap params;
};

// Size-weighted parameter mean over the participants, applied identically to
// weights, alphas, and batch-norm running statistics. Permutation-invariant
// (inputs are ordered by device id) and exact on identical updates.
ParamMap aggregate(std::vector<Update> updates);

struct OnlinePolicy {
    enum class Kind { all, fraction, fixed };
    Kind kind = Kind::all;
    double fraction = 1.0;
    int m = 0;

    static OnlinePolicy all() { return {}; }
};

// Uniform sample without replacement; result sorted by device id.
// Non-participants keep stale local state and stay out of the normalizer.
std::vector<int> sample_online(int num_devices, const OnlinePolicy& policy, Rng rng);

struct RoundReport {
    int round = 0;
    std::vector<int> participants;
    std::vector<int> failed;  // devices whose update aborted this round
    std::vector<std::int64_t> sizes;
    std::vector<double> train_losses;
    std::vector<double> val_losses;
    std::vector<double> val_reg_losses;
    std::vector<double> total_losses;
    double mean_train_loss = 0.0;
    double mean_val_loss = 0.0;
    double mean_val_reg_loss = 0.0;
    double mean_total_loss = 0.0;
    double expected_latency_ms = 0.0;
    double wall_s = 0.0;  // excluded from serialized metrics
};

struct ServerState {
    ParamMap global;
    int round = 0;
    std::vector<RoundReport> history;
};

struct FedSearchOpts {
    int total_rounds = 30;   // cosine schedule horizon
    int target_round = 30;   // run until server.round == target_round
    double lr0 = 0.05;
    OnlinePolicy online;
    UpdateOpts update;
    int workers = 1;
    Rng root{0};
    std::function<void(const RoundReport&)> on_round;
};

// Federated bilevel search: rounds of {sample online devices -> parallel
// device updates -> size-weighted aggregation}, reported per round. Operates
// on the given device subset (full set or one cluster).
void run_fdnas(ServerState& server, std::vector<DeviceState*>& devices, const Dataset& ds,
               const FedSearchOpts& opts);

inline std::vector<DeviceState*> device_ptrs(std::vector<DeviceState>& devices) {
    std::vector<DeviceState*> out;
    out.reserve(devices.size());
    for (auto& d : devices) out.push_back(&d);
    return out;
}

struct ClusterPlan {
    // tag -> device ids, disjoint
    std::map<std::string, std::vector<int>> clusters;
};

enum class ClusterKey { data_tag, hardware_tag };

ClusterPlan cluster_by_tag(const std::vector<DeviceState>& devices, ClusterKey key);

struct ClusterOpts {
    double lambda2 = 0.0;
    const LatencyTable* table = nullptr;
};

// Per-cluster adaptation: each cluster independently re-runs the federated
// search from the given checkpoint with its own latency pressure. Optimizer
// states are not carried over. Empty clusters are skipped.
std::map<std::string, ServerState> run_cfdnas(
    const ParamMap& init_global, const ClusterPlan& plan, std::vector<DeviceState>& devices,
    const Dataset& ds, const FedSearchOpts& base,
    const std::map<std::string, ClusterOpts>& per_cluster, int rounds_per_cluster);

struct FinetuneOpts {
    int rounds = 50;
    int epochs = 5;
    double lr0 = 0.05;
    double momentum = 0.9;
    double weight_decay = 3e-4;
    int batch_size = 32;
    OnlinePolicy online;
    int workers = 1;
    Rng root{0};
    std::function<void(const RoundReport&)> on_round;
};

struct FinetuneResult {
    ParamMap global;
    std::vector<RoundReport> history;
};

// Plain FedAvg on a compact derived net, weights re-initialized from scratch.
FinetuneResult finetune_fedavg(const DerivedArchitecture& arch,
                               const std::vector<DevicePartition>& parts, const Dataset& ds,
                               const FinetuneOpts& opts);

enum class EvalMode { federated_averaged, mean_local };

struct EvalOpts {
    int local_epochs = 5;  // mean_local fine-tuning budget
    double lr = 0.01;
    double momentum = 0.9;
    int batch_size = 32;
    Rng root{0};
};

// federated_averaged: global net accuracy on the union of device test sets.
// mean_local: each device fine-tunes local_epochs from the global net on its
// training data, tests locally; unweighted mean of the accuracies.
double evaluate(const DerivedArchitecture& arch, const ParamMap& global_params,
                const std::vector<DevicePartition>& parts, const Dataset& ds, EvalMode mode,
                const EvalOpts& opts);

// Test helper: accuracy of an arbitrary logits function on the pooled test
// sets.
double evaluate_fn(const std::function<Tensor(const Tensor&)>& logits_fn,
                   const std::vector<DevicePartition>& parts, const Dataset& ds);

// Expected latency of the global alphas under a table (no net instance).
double expected_latency_of_params(const ParamMap& params, const SearchSpaceConfig& space,
                                  const LatencyTable& table);

}  // namespace fdnas
