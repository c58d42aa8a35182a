// SPDX-License-Identifier: Apache-2.0
#include "fdnas/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "fdnas/optim.hpp"

namespace fdnas {

namespace {

template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            fn(i);
        }
    };
    const int nt = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), n));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(nt));
    for (int t = 0; t < nt; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
}

std::vector<std::vector<std::int64_t>> make_batches(std::vector<std::int64_t> indices,
                                                    int batch_size, Rng rng) {
    rng.shuffle(indices);
    std::vector<std::vector<std::int64_t>> batches;
    for (std::size_t i = 0; i < indices.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(indices.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                             indices.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

double weighted_mean(const std::vector<double>& values, const std::vector<std::int64_t>& sizes) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        num += values[i] * static_cast<double>(sizes[i]);
        den += static_cast<double>(sizes[i]);
    }
    return den > 0.0 ? num / den : 0.0;
}

}  // namespace

std::vector<DeviceState> make_devices(const std::vector<DevicePartition>& parts,
                                      const SearchSpaceConfig& space,
                                      const std::vector<std::string>& hardware_tags, Rng init) {
    std::vector<DeviceState> devices;
    for (const auto& p : parts) {
        DeviceState d;
        d.device_id = p.device_id;
        d.part = p;
        d.hardware_tag = static_cast<std::size_t>(p.device_id) < hardware_tags.size()
                             ? hardware_tags[static_cast<std::size_t>(p.device_id)]
                             : "";
        d.net = std::make_shared<SuperNet>(space, init);
        d.stream_id = static_cast<std::uint64_t>(p.device_id);
        devices.push_back(std::move(d));
    }
    return devices;
}

namespace {

struct StepAccum {
    double loss_sum = 0.0;
    int steps = 0;
};

void weight_step_once(SuperNet& net, const Dataset& ds, std::span<const std::int64_t> batch,
                      OptimizerState& sgd, Rng& step_rng, bool update_stats, StepAccum& acc) {
    auto [x, labels] = make_batch(ds, batch);
    net.drop_all_grads();
    Tape tape;
    std::vector<GateSample> gates;
    ForwardOpts fo;
    fo.update_running_stats = update_stats;
    Tensor logits = net.forward_train(x, StepMode::weight_step, step_rng, tape, gates, fo);
    Tensor loss = softmax_cross_entropy(logits, labels, &tape);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw std::runtime_error("non-finite training loss");
    auto wp = net.weight_params();
    Gradients grads = backward(tape, loss, wp);
    std::vector<Parameter*> touched;
    for (Parameter* p : wp) {
        if (grads.reached.count(p->id)) touched.push_back(p);
    }
    sgd_momentum_step(touched, grads, sgd);
    acc.loss_sum += lv;
    acc.steps += 1;
}

void arch_step_once(SuperNet& net, const Dataset& ds, std::span<const std::int64_t> batch,
                    OptimizerState& adam, Rng& step_rng, const UpdateOpts& opts, bool update_stats,
                    StepAccum& acc) {
    auto [x, labels] = make_batch(ds, batch);
    net.drop_all_grads();
    Tape tape;
    std::vector<GateSample> gates;
    ForwardOpts fo;
    fo.update_running_stats = update_stats;
    Tensor logits = net.forward_train(x, StepMode::arch_step, step_rng, tape, gates, fo);
    Tensor loss = softmax_cross_entropy(logits, labels, &tape);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw std::runtime_error("non-finite validation loss");
    std::vector<Parameter*> none;
    backward(tape, loss, none);  // fills the gate gradient sinks
    for (int li = 0; li < net.num_layers(); ++li) {
        auto& gs = gates[static_cast<std::size_t>(li)];
        std::array<double, 2> dl_db = *gs.dl_db;
        if (opts.table != nullptr && opts.lambda2 > 0.0) {
            auto& layer = net.layer(li);
            dl_db[0] += opts.lambda2 *
                        opts.table->at(li, layer.candidate(gs.pair.i).name());
            dl_db[1] += opts.lambda2 *
                        opts.table->at(li, layer.candidate(gs.pair.j).name());
        }
        pair_arch_step(net.layer(li), dl_db, gs, adam);
    }
    acc.loss_sum += lv;
    acc.steps += 1;
}

}  // namespace

DeviceUpdateResult device_update(DeviceState& dev, const ParamMap& global, const Dataset& ds,
                                 const UpdateOpts& opts) {
    require(opts.epochs >= 1, "device_update: epochs must be >= 1");
    require(!dev.part.train.empty(), "device_update: empty train loader on device " +
                                         std::to_string(dev.device_id));
    if (opts.arch_steps) {
        require(!dev.part.val.empty(), "device_update: empty validation loader on device " +
                                           std::to_string(dev.device_id));
    }
    SuperNet& net = *dev.net;
    net.load_params(global);

    OptimizerState sgd = OptimizerState::sgd(opts.lr_w, opts.momentum, opts.weight_decay);
    OptimizerState adam = OptimizerState::adam(opts.alpha_lr, opts.beta1, opts.beta2,
                                               opts.adam_eps);

    Rng dev_root = opts.phase_root.derive("device", dev.stream_id);
    StepAccum train_acc, val_acc;
    // With every learning rate at zero the update contract is a strict no-op
    // on the returned parameters, so batch-norm statistics stay frozen too.
    const bool update_stats = opts.lr_w != 0.0 || opts.alpha_lr != 0.0;

    for (int e = 0; e < opts.epochs; ++e) {
        const std::uint64_t global_epoch = static_cast<std::uint64_t>(opts.epoch_base + e);
        Rng er = dev_root.derive("epoch", global_epoch);
        auto train_batches = make_batches(dev.part.train, opts.batch_size, er.derive("wshuffle"));
        std::vector<std::vector<std::int64_t>> val_batches;
        if (opts.arch_steps) {
            val_batches = make_batches(dev.part.val, opts.val_batch_size, er.derive("ashuffle"));
        }

        if (opts.interleave == Interleave::per_epoch) {
            for (std::size_t b = 0; b < train_batches.size(); ++b) {
                Rng sr = er.derive("wstep", b);
                weight_step_once(net, ds, train_batches[b], sgd, sr, update_stats, train_acc);
            }
            for (std::size_t b = 0; b < val_batches.size(); ++b) {
                Rng sr = er.derive("astep", b);
                arch_step_once(net, ds, val_batches[b], adam, sr, opts, update_stats, val_acc);
            }
        } else {
            const std::size_t nsteps = std::max(train_batches.size(), val_batches.size());
            for (std::size_t b = 0; b < nsteps; ++b) {
                if (b < train_batches.size()) {
                    Rng sr = er.derive("wstep", b);
                    weight_step_once(net, ds, train_batches[b], sgd, sr, update_stats, train_acc);
                }
                if (b < val_batches.size()) {
                    Rng sr = er.derive("astep", b);
                    arch_step_once(net, ds, val_batches[b], adam, sr, opts, update_stats, val_acc);
                }
            }
        }
    }

    DeviceUpdateResult res;
    res.device_id = dev.device_id;
    res.n_train = static_cast<std::int64_t>(dev.part.train.size());
    res.params = net.snapshot_params();
    res.weight_steps = train_acc.steps;
    res.arch_steps = val_acc.steps;
    res.train_loss = train_acc.steps > 0 ? train_acc.loss_sum / train_acc.steps : 0.0;
    res.val_loss = val_acc.steps > 0 ? val_acc.loss_sum / val_acc.steps : 0.0;
    res.val_reg_loss = res.val_loss;
    std::vector<double> layer_lat;
    if (opts.table != nullptr) {
        for (int li = 0; li < net.num_layers(); ++li) {
            const auto& layer = net.layer(li);
            layer_lat.push_back(expected_layer_latency(layer.probs(),
                                                       opts.table->layer_costs(layer)));
        }
        double lat = 0.0;
        for (double l : layer_lat) lat += l;
        res.val_reg_loss += opts.lambda2 * lat;
    }
    std::vector<const Parameter*> weights;
    for (Parameter* p : net.weight_params()) weights.push_back(p);
    res.total_loss = total_loss(res.val_loss, weights, layer_lat, opts.lambda1,
                                opts.table ? opts.lambda2 : 0.0);
    return res;
}

ParamMap aggregate(std::vector<Update> updates) {
    require(!updates.empty(), "aggregate: no updates");
    std::sort(updates.begin(), updates.end(),
              [](const Update& a, const Update& b) { return a.device_id < b.device_id; });
    for (std::size_t i = 1; i < updates.size(); ++i) {
        require(updates[i].device_id != updates[i - 1].device_id,
                "aggregate: duplicate device id " + std::to_string(updates[i].device_id));
    }

    std::int64_t total = 0;
    for (const auto& u : updates) {
        require(u.n > 0, "aggregate: non-positive sample count");
        total += u.n;
    }

    const ParamMap& anchor = updates.front().params;
    for (std::size_t i = 1; i < updates.size(); ++i) {
        const ParamMap& other = updates[i].params;
        if (other.size() != anchor.size()) {
            std::string diff;
            for (const auto& [id, v] : anchor)
                if (!other.count(id)) diff += " -" + id;
            for (const auto& [id, v] : other)
                if (!anchor.count(id)) diff += " +" + id;
            throw std::invalid_argument("aggregate: parameter id sets differ:" + diff);
        }
    }

    // Anchored evaluation of the size-weighted mean: exact for identical
    // updates and for a single participant.
    ParamMap out = anchor;
    for (std::size_t i = 1; i < updates.size(); ++i) {
        const double w = static_cast<double>(updates[i].n) / static_cast<double>(total);
        for (auto& [id, acc] : out) {
            auto it = updates[i].params.find(id);
            if (it == updates[i].params.end()) {
                throw std::invalid_argument("aggregate: parameter id sets differ: +" + id);
            }
            const auto& v = it->second;
            require(v.size() == acc.size(), "aggregate: size mismatch for '" + id + "'");
            const auto& a = anchor.at(id);
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += w * (v[k] - a[k]);
        }
    }
    return out;
}

std::vector<int> sample_online(int num_devices, const OnlinePolicy& policy, Rng rng) {
    require(num_devices >= 1, "sample_online: no devices");
    int m = num_devices;
    if (policy.kind == OnlinePolicy::Kind::fraction) {
        m = static_cast<int>(std::llround(policy.fraction * num_devices));
        m = std::clamp(m, 1, num_devices);
    } else if (policy.kind == OnlinePolicy::Kind::fixed) {
        require(policy.m >= 1 && policy.m <= num_devices,
                "sample_online: m=" + std::to_string(policy.m) + " outside [1, " +
                    std::to_string(num_devices) + "]");
        m = policy.m;
    }
    std::vector<int> pool(static_cast<std::size_t>(num_devices));
    for (int i = 0; i < num_devices; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < m; ++i) {
        const auto j = i + static_cast<int>(rng.next_below(
                               static_cast<std::uint64_t>(num_devices - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(m));
    std::sort(pool.begin(), pool.end());
    return pool;
}

void run_fdnas(ServerState& server, std::vector<DeviceState*>& devices, const Dataset& ds,
               const FedSearchOpts& opts) {
    require(!devices.empty(), "run_fdnas: no devices");
    require(opts.target_round >= server.round, "run_fdnas: target round behind server round");
    require(opts.total_rounds >= 1, "run_fdnas: total_rounds must be >= 1");
    const int K = static_cast<int>(devices.size());

    for (int t = server.round; t < opts.target_round; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr =
            cosine_lr(std::min<std::int64_t>(t, opts.total_rounds), opts.total_rounds, opts.lr0);
        auto picks = sample_online(K, opts.online, opts.root.derive("online",
                                                                    static_cast<std::uint64_t>(t)));

        std::vector<DeviceUpdateResult> results(picks.size());
        std::vector<std::string> errors(picks.size());
        parallel_for(picks.size(), opts.workers, [&](std::size_t i) {
            DeviceState& dev = *devices[static_cast<std::size_t>(picks[i])];
            UpdateOpts uo = opts.update;
            uo.lr_w = lr;
            uo.epoch_base = t * opts.update.epochs;
            uo.phase_root = opts.root;
            try {
                results[i] = device_update(dev, server.global, ds, uo);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        });

        RoundReport rep;
        rep.round = t;
        std::vector<Update> updates;
        for (std::size_t i = 0; i < picks.size(); ++i) {
            DeviceState& dev = *devices[static_cast<std::size_t>(picks[i])];
            if (!errors[i].empty()) {
                rep.failed.push_back(dev.device_id);
                continue;
            }
            rep.participants.push_back(dev.device_id);
            rep.sizes.push_back(results[i].n_train);
            rep.train_losses.push_back(results[i].train_loss);
            rep.val_losses.push_back(results[i].val_loss);
            rep.val_reg_losses.push_back(results[i].val_reg_loss);
            rep.total_losses.push_back(results[i].total_loss);
            updates.push_back({dev.device_id, results[i].n_train, std::move(results[i].params)});
        }
        if (updates.empty()) {
            throw std::runtime_error("run_fdnas: all devices failed in round " +
                                     std::to_string(t) + " (" + errors.front() + ")");
        }
        server.global = aggregate(std::move(updates));

        rep.mean_train_loss = weighted_mean(rep.train_losses, rep.sizes);
        rep.mean_val_loss = weighted_mean(rep.val_losses, rep.sizes);
        rep.mean_val_reg_loss = weighted_mean(rep.val_reg_losses, rep.sizes);
        rep.mean_total_loss = weighted_mean(rep.total_losses, rep.sizes);
        if (opts.update.table != nullptr) {
            rep.expected_latency_ms = expected_latency_of_params(
                server.global, devices.front()->net->config(), *opts.update.table);
        }
        rep.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        server.history.push_back(rep);
        server.round = t + 1;
        if (opts.on_round) opts.on_round(server.history.back());
    }
}

ClusterPlan cluster_by_tag(const std::vector<DeviceState>& devices, ClusterKey key) {
    ClusterPlan plan;
    for (const auto& d : devices) {
        const std::string& tag = key == ClusterKey::data_tag ? d.part.tag : d.hardware_tag;
        if (tag.empty()) {
            throw std::invalid_argument("cluster_by_tag: device " + std::to_string(d.device_id) +
                                        " has no tag");
        }
        plan.clusters[tag].push_back(d.device_id);
    }
    for (auto& [tag, ids] : plan.clusters) std::sort(ids.begin(), ids.end());
    return plan;
}

std::map<std::string, ServerState> run_cfdnas(
    const ParamMap& init_global, const ClusterPlan& plan, std::vector<DeviceState>& devices,
    const Dataset& ds, const FedSearchOpts& base,
    const std::map<std::string, ClusterOpts>& per_cluster, int rounds_per_cluster) {
    std::map<std::string, ServerState> out;
    for (const auto& [tag, ids] : plan.clusters) {
        if (ids.empty()) continue;  // nothing to adapt
        std::vector<DeviceState*> members;
        for (int id : ids) {
            auto it = std::find_if(devices.begin(), devices.end(),
                                   [id](const DeviceState& d) { return d.device_id == id; });
            require(it != devices.end(), "run_cfdnas: unknown device " + std::to_string(id));
            members.push_back(&*it);
        }
        ServerState server;
        server.global = init_global;
        FedSearchOpts o = base;
        o.total_rounds = std::max(1, rounds_per_cluster);
        o.target_round = rounds_per_cluster;
        o.root = base.root.derive("cluster").derive(tag);
        auto pc = per_cluster.find(tag);
        if (pc != per_cluster.end()) {
            o.update.lambda2 = pc->second.lambda2;
            o.update.table = pc->second.table;
        }
        if (rounds_per_cluster > 0) run_fdnas(server, members, ds, o);
        out.emplace(tag, std::move(server));
    }
    return out;
}

// --------------------------------------------------------------------------
// compact-net fine-tuning and evaluation

namespace {

void compact_weight_epochs(CompactNet& net, const DevicePartition& part, const Dataset& ds,
                           int epochs, int epoch_base, double lr, double momentum, double wd,
                           int batch_size, Rng dev_root, StepAccum& acc) {
    OptimizerState sgd = OptimizerState::sgd(lr, momentum, wd);
    const bool update_stats = lr != 0.0;
    for (int e = 0; e < epochs; ++e) {
        Rng er = dev_root.derive("epoch", static_cast<std::uint64_t>(epoch_base + e));
        auto batches = make_batches(part.train, batch_size, er.derive("shuffle"));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            auto [x, labels] = make_batch(ds, batches[b]);
            net.drop_all_grads();
            Tape tape;
            ForwardOpts fo;
            fo.update_running_stats = update_stats;
            Tensor logits = net.forward(x, fo, &tape);
            Tensor loss = softmax_cross_entropy(logits, labels, &tape);
            const double lv = loss.item();
            if (!std::isfinite(lv)) throw std::runtime_error("non-finite fine-tune loss");
            auto wp = net.weight_params();
            Gradients grads = backward(tape, loss, wp);
            std::vector<Parameter*> touched;
            for (Parameter* p : wp) {
                if (grads.reached.count(p->id)) touched.push_back(p);
            }
            sgd_momentum_step(touched, grads, sgd);
            acc.loss_sum += lv;
            acc.steps += 1;
        }
    }
}

}  // namespace

FinetuneResult finetune_fedavg(const DerivedArchitecture& arch,
                               const std::vector<DevicePartition>& parts, const Dataset& ds,
                               const FinetuneOpts& opts) {
    require(!parts.empty(), "finetune_fedavg: no devices");
    require(opts.rounds >= 0, "finetune_fedavg: negative rounds");

    CompactNet seed_net(arch, opts.root.derive("finetune_init"));
    FinetuneResult out;
    out.global = seed_net.snapshot_params();

    std::vector<std::unique_ptr<CompactNet>> replicas;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        replicas.push_back(std::make_unique<CompactNet>(arch, Rng(0)));
    }
    const int K = static_cast<int>(parts.size());

    for (int t = 0; t < opts.rounds; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cosine_lr(t, std::max(1, opts.rounds), opts.lr0);
        auto picks = sample_online(K, opts.online,
                                   opts.root.derive("online", static_cast<std::uint64_t>(t)));

        std::vector<Update> results(picks.size());
        std::vector<double> losses(picks.size(), 0.0);
        std::vector<std::string> errors(picks.size());
        parallel_for(picks.size(), opts.workers, [&](std::size_t i) {
            const int id = picks[i];
            const auto& part = parts[static_cast<std::size_t>(id)];
            CompactNet& net = *replicas[static_cast<std::size_t>(id)];
            try {
                net.load_params(out.global);
                StepAccum acc;
                compact_weight_epochs(net, part, ds, opts.epochs, t * opts.epochs, lr,
                                      opts.momentum, opts.weight_decay, opts.batch_size,
                                      opts.root.derive("device",
                                                       static_cast<std::uint64_t>(id)),
                                      acc);
                results[i] = {id, static_cast<std::int64_t>(part.train.size()),
                              net.snapshot_params()};
                losses[i] = acc.steps > 0 ? acc.loss_sum / acc.steps : 0.0;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        });

        RoundReport rep;
        rep.round = t;
        std::vector<Update> updates;
        for (std::size_t i = 0; i < picks.size(); ++i) {
            if (!errors[i].empty()) {
                rep.failed.push_back(picks[i]);
                continue;
            }
            rep.participants.push_back(picks[i]);
            rep.sizes.push_back(results[i].n);
            rep.train_losses.push_back(losses[i]);
            updates.push_back(std::move(results[i]));
        }
        if (updates.empty()) {
            throw std::runtime_error("finetune_fedavg: all devices failed in round " +
                                     std::to_string(t));
        }
        out.global = aggregate(std::move(updates));
        rep.mean_train_loss = weighted_mean(rep.train_losses, rep.sizes);
        rep.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.history.push_back(rep);
        if (opts.on_round) opts.on_round(out.history.back());
    }
    return out;
}

namespace {

double accuracy_on(CompactNet& net, const Dataset& ds, std::span<const std::int64_t> indices) {
    require(!indices.empty(), "evaluate: empty test set");
    std::int64_t hits = 0;
    const std::size_t chunk = 128;
    for (std::size_t i = 0; i < indices.size(); i += chunk) {
        const std::size_t end = std::min(indices.size(), i + chunk);
        auto [x, labels] = make_batch(ds, indices.subspan(i, end - i));
        Tensor logits = net.forward_eval(x);
        hits += static_cast<std::int64_t>(
            std::llround(accuracy(logits, labels) * static_cast<double>(labels.size())));
    }
    return static_cast<double>(hits) / static_cast<double>(indices.size());
}

}  // namespace

double evaluate(const DerivedArchitecture& arch, const ParamMap& global_params,
                const std::vector<DevicePartition>& parts, const Dataset& ds, EvalMode mode,
                const EvalOpts& opts) {
    if (mode == EvalMode::federated_averaged) {
        std::vector<std::int64_t> pooled;
        for (const auto& p : parts) pooled.insert(pooled.end(), p.test.begin(), p.test.end());
        std::sort(pooled.begin(), pooled.end());
        CompactNet net(arch, Rng(0));
        net.load_params(global_params);
        return accuracy_on(net, ds, pooled);
    }
    // mean_local: fine-tune from the global net per device, test locally.
    double sum = 0.0;
    int counted = 0;
    for (const auto& p : parts) {
        require(!p.test.empty(), "evaluate: device " + std::to_string(p.device_id) +
                                     " has an empty test set");
        CompactNet net(arch, Rng(0));
        net.load_params(global_params);
        if (opts.local_epochs > 0 && !p.train.empty()) {
            StepAccum acc;
            compact_weight_epochs(net, p, ds, opts.local_epochs, 0, opts.lr, opts.momentum, 0.0,
                                  opts.batch_size,
                                  opts.root.derive("eval_local",
                                                   static_cast<std::uint64_t>(p.device_id)),
                                  acc);
        }
        sum += accuracy_on(net, ds, p.test);
        counted += 1;
    }
    return counted > 0 ? sum / counted : 0.0;
}

double evaluate_fn(const std::function<Tensor(const Tensor&)>& logits_fn,
                   const std::vector<DevicePartition>& parts, const Dataset& ds) {
    std::vector<std::int64_t> pooled;
    for (const auto& p : parts) pooled.insert(pooled.end(), p.test.begin(), p.test.end());
    std::sort(pooled.begin(), pooled.end());
    require(!pooled.empty(), "evaluate_fn: empty pooled test set");
    std::int64_t hits = 0;
    const std::size_t chunk = 128;
    for (std::size_t i = 0; i < pooled.size(); i += chunk) {
        const std::size_t end = std::min(pooled.size(), i + chunk);
        auto [x, labels] =
            make_batch(ds, std::span<const std::int64_t>(pooled).subspan(i, end - i));
        Tensor logits = logits_fn(x);
        hits += static_cast<std::int64_t>(
            std::llround(accuracy(logits, labels) * static_cast<double>(labels.size())));
    }
    return static_cast<double>(hits) / static_cast<double>(pooled.size());
}

double expected_latency_of_params(const ParamMap& params, const SearchSpaceConfig& space,
                                  const LatencyTable& table) {
    double acc = 0.0;
    for (int li = 0; li < space.layers; ++li) {
        auto it = params.find("layer" + std::to_string(li) + ".alpha");
        require(it != params.end(), "expected_latency_of_params: missing alpha for layer " +
                                        std::to_string(li));
        const auto p = compute_probs(it->second);
        const auto names = space.layer_candidates(li);
        require(names.size() == p.size(), "expected_latency_of_params: candidate count mismatch");
        std::vector<double> costs;
        costs.reserve(names.size());
        for (const auto& n : names) costs.push_back(table.at(li, n));
        acc += expected_layer_latency(p, costs);
    }
    return acc;
}

}  // namespace fdnas
