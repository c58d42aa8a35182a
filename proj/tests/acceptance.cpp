// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one selectable case per criterion, each printing a
// [PASS]/[FAIL] line. Run `acceptance` for everything or `acceptance N...`
// for specific criteria.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fdnas/checkpoint.hpp"
#include "fdnas/federation.hpp"
#include "fdnas/pipeline.hpp"
#include "oracle_helpers.hpp"

namespace fs = std::filesystem;
using namespace fdnas;
using fdnas::testing::max_rel_err;

namespace {

// ---------------------------------------------------------------- helpers

std::string fdnas_bin() {
    const char* p = std::getenv("FDNAS_BIN");
    if (p) return p;
    if (fs::exists("./fdnas")) return "./fdnas";
    return "fdnas";
}

int run_cmd(const std::string& args) {
    const std::string cmd = fdnas_bin() + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) return "<missing:" + path + ">";
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

bool files_equal(const std::string& a, const std::string& b) {
    const std::string ca = slurp(a), cb = slurp(b);
    return ca == cb && ca.rfind("<missing:", 0) != 0;
}

bool maps_equal(const ParamMap& a, const ParamMap& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [id, va] : a) {
        auto it = b.find(id);
        if (it == b.end() || it->second.size() != va.size()) return false;
        for (std::size_t i = 0; i < va.size(); ++i) {
            if (va[i] != it->second[i]) return false;
        }
    }
    return true;
}

struct World {
    Dataset ds;
    std::vector<DevicePartition> parts;
    std::vector<DeviceState> devices;
    SearchSpaceConfig space;
};

World make_world(const SearchSpaceConfig& space, const PartitionSpec& pspec, int num_devices,
                 int per_class, double difficulty, std::uint64_t seed, double val_frac = 0.1,
                 double test_frac = 0.1, const std::vector<std::string>& hw = {}) {
    World w;
    w.space = space;
    w.ds = gen_synthetic(space.num_classes, per_class, space.image_channels, space.image_h,
                         space.image_w, difficulty, seed);
    w.parts = partition(w.ds, pspec, num_devices, seed);
    for (auto& p : w.parts) p = split_train_val_test(p, val_frac, test_frac, seed);
    w.devices = make_devices(w.parts, space, hw, Rng(seed).derive("init"));
    return w;
}

PartitionSpec paper_shards(int num_classes, int num_devices) {
    PartitionSpec spec;
    spec.kind = PartitionSpec::Kind::label_shards;
    PartitionSpec::Group g0, g1, g2;
    for (int c = 0; c < num_classes; ++c) {
        (c < 3 ? g0 : c < 6 ? g1 : g2).classes.push_back(c);
    }
    for (int d = 0; d < num_devices; ++d) {
        (d < 3 ? g0 : d < 6 ? g1 : g2).devices.push_back(d);
    }
    spec.groups = {g0, g1, g2};
    return spec;
}

// ------------------------------------------------------------ criterion 1

bool criterion1_gradient_oracle() {
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        SearchSpaceConfig space;
        space.layers = 1 + static_cast<int>(seed % 2);
        space.image_channels = 1;
        space.image_h = 8;
        space.image_w = 8;
        space.stem_channels = 2;
        space.num_classes = 3;
        space.downsample_layers = {};
        space.candidates = {"mbconv_e1_k3", "identity", "zero"};  // N = 3

        SuperNet net(space, Rng(seed + 1000));
        Rng rng(seed + 2000);
        for (int li = 0; li < space.layers; ++li) {
            auto a = net.layer(li).alpha().value.data();
            for (auto& v : a) v = rng.uniform() - 0.5;
        }
        Tensor x({3, 1, 8, 8});
        for (auto& v : x.data()) v = 0.5 + 0.25 * rng.normal();
        std::vector<std::int64_t> labels;
        for (int b = 0; b < 3; ++b)
            labels.push_back(static_cast<std::int64_t>(rng.next_below(3)));

        ForwardOpts fo;
        fo.update_running_stats = false;

        net.drop_all_grads();
        Tape tape;
        std::vector<MixedLayerInfo> info;
        Tensor logits = net.forward_mixed(x, tape, info, fo);
        Tensor loss = softmax_cross_entropy(logits, labels, &tape);
        auto wparams = net.weight_params();
        Gradients grads = backward(tape, loss, wparams);

        // alpha gradients against finite differences of the mixed loss
        auto alphas = net.alpha_params();
        auto atheta = fdnas::testing::flatten_params(alphas);
        auto mixed_loss = [&]() {
            Tape t;
            std::vector<MixedLayerInfo> mi;
            Tensor lg = net.forward_mixed(x, t, mi, fo);
            const double v = softmax_cross_entropy(lg, labels, nullptr).item();
            t.clear();
            return v;
        };
        auto fa = [&](std::span<const double> theta) {
            fdnas::testing::unflatten_params(theta, alphas);
            const double v = mixed_loss();
            fdnas::testing::unflatten_params(atheta, alphas);
            return v;
        };
        auto fd_alpha = finite_diff_grad(fa, atheta, 1e-5);
        std::vector<double> analytic_alpha;
        for (int li = 0; li < space.layers; ++li) {
            std::vector<double> dl_dp;
            for (const auto& s : info[static_cast<std::size_t>(li)].dl_dp) dl_dp.push_back(*s);
            auto g = arch_gradient(dl_dp, info[static_cast<std::size_t>(li)].probs);
            analytic_alpha.insert(analytic_alpha.end(), g.begin(), g.end());
        }
        if (max_rel_err(analytic_alpha, fd_alpha) >= 1e-5) {
            std::printf("  seed %llu: alpha gradient err %.3g\n",
                        static_cast<unsigned long long>(seed),
                        max_rel_err(analytic_alpha, fd_alpha));
            return false;
        }

        // weight gradients against finite differences
        auto wtheta = fdnas::testing::flatten_params(wparams);
        auto fw = [&](std::span<const double> theta) {
            fdnas::testing::unflatten_params(theta, wparams);
            const double v = mixed_loss();
            fdnas::testing::unflatten_params(wtheta, wparams);
            return v;
        };
        auto fd_w = finite_diff_grad(fw, wtheta, 1e-5);
        std::vector<double> analytic_w;
        for (auto* p : wparams) {
            const auto& g = grads.at(p->id);
            analytic_w.insert(analytic_w.end(), g.begin(), g.end());
        }
        if (max_rel_err(analytic_w, fd_w, 1e-8) >= 1e-4) {
            std::printf("  seed %llu: weight gradient err %.3g\n",
                        static_cast<unsigned long long>(seed), max_rel_err(analytic_w, fd_w, 1e-8));
            return false;
        }
        ++checked;
    }
    std::printf("  %d random supernets checked\n", checked);
    return checked >= 50;
}

// ------------------------------------------------------------ criterion 2

bool criterion2_simplex_sampling() {
    Rng rng(77);
    for (int trial = 0; trial < 10000; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(6));
        std::vector<double> alpha(static_cast<std::size_t>(n));
        for (auto& v : alpha) v = 30.0 * (rng.uniform() - 0.5);
        auto p = compute_probs(alpha);
        double sum = 0.0;
        for (double v : p) sum += v;
        if (std::abs(sum - 1.0) > 1e-12) return false;
    }

    // empirical gate frequencies within 1% at 1e5 draws
    for (const auto& probs : {std::vector<double>{0.25, 0.25, 0.25, 0.25},
                              compute_probs(std::vector<double>{0.9, -0.3, 0.1, 0.4})}) {
        std::vector<int> counts(probs.size(), 0);
        const int draws = 100000;
        for (int i = 0; i < draws; ++i) counts[static_cast<std::size_t>(sample_gate(probs, rng))]++;
        for (std::size_t k = 0; k < probs.size(); ++k) {
            if (std::abs(counts[k] / double(draws) - probs[k]) > 0.01) return false;
        }
    }

    // activation counters: exactly 1 / 2 per layer on every step
    SearchSpaceConfig space;
    space.layers = 4;
    space.image_channels = 1;
    space.image_h = 8;
    space.image_w = 8;
    space.stem_channels = 2;
    space.num_classes = 3;
    space.downsample_layers = {2};
    space.candidates = {"mbconv_e1_k3", "mbconv_e3_k3", "identity", "zero"};
    SuperNet net(space, Rng(5));
    Tensor x({2, 1, 8, 8});
    for (auto& v : x.data()) v = rng.uniform();
    ForwardOpts fo;
    for (int step = 0; step < 25; ++step) {
        Tape tape;
        std::vector<GateSample> gates;
        (void)net.forward_train(x, StepMode::weight_step, rng, tape, gates, fo);
        tape.clear();
        for (int c : net.activation_counts()) {
            if (c != 1) return false;
        }
        Tape tape2;
        (void)net.forward_train(x, StepMode::arch_step, rng, tape2, gates, fo);
        tape2.clear();
        for (int c : net.activation_counts()) {
            if (c != 2) return false;
        }
    }
    std::printf("  simplex 1e4 alphas, gate frequencies at 1e5 draws, counters over 25 steps\n");
    return true;
}

// ------------------------------------------------------------ criterion 3

bool criterion3_rescaling() {
    Rng rng(31337);
    // one reusable layer per candidate count
    std::vector<std::vector<std::string>> sets = {
        {"mbconv_e1_k3", "identity", "zero"},
        {"mbconv_e1_k3", "mbconv_e3_k3", "identity", "zero"},
        {"mbconv_e1_k3", "mbconv_e3_k3", "mbconv_e1_k5", "identity", "zero"},
        {"mbconv_e1_k3", "mbconv_e3_k3", "mbconv_e6_k3", "mbconv_e1_k5", "identity", "zero"}};
    std::vector<SuperNet> nets;
    for (const auto& cands : sets) {
        SearchSpaceConfig space;
        space.layers = 1;
        space.image_channels = 1;
        space.image_h = 8;
        space.image_w = 8;
        space.stem_channels = 2;
        space.num_classes = 3;
        space.candidates = cands;
        nets.emplace_back(space, Rng(1));
    }

    for (int trial = 0; trial < 10000; ++trial) {
        auto& net = nets[trial % nets.size()];
        auto& layer = net.layer(0);
        const int n = layer.num_candidates();
        auto a = layer.alpha().value.data();
        for (auto& v : a) v = 4.0 * (rng.uniform() - 0.5);
        const int i = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
        int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - 1)));
        if (j >= i) ++j;

        auto p_pre = layer.probs();
        const double mass = p_pre[static_cast<std::size_t>(i)] + p_pre[static_cast<std::size_t>(j)];
        a[static_cast<std::size_t>(i)] += 0.8 * rng.normal();
        a[static_cast<std::size_t>(j)] += 0.8 * rng.normal();
        auto p_mid = layer.probs();
        rescale_alphas(layer, i, j, mass);
        auto p_post = layer.probs();

        if (std::abs(p_post[static_cast<std::size_t>(i)] + p_post[static_cast<std::size_t>(j)] -
                     mass) > 1e-9)
            return false;
        for (int n1 = 0; n1 < n; ++n1) {
            if (n1 == i || n1 == j) continue;
            for (int n2 = n1 + 1; n2 < n; ++n2) {
                if (n2 == i || n2 == j) continue;
                const double r_mid =
                    p_mid[static_cast<std::size_t>(n1)] / p_mid[static_cast<std::size_t>(n2)];
                const double r_post =
                    p_post[static_cast<std::size_t>(n1)] / p_post[static_cast<std::size_t>(n2)];
                if (std::abs(r_mid - r_post) / std::abs(r_mid) > 1e-9) return false;
            }
        }
    }
    std::printf("  10000 random rescale steps over N in {3,4,5,6}\n");
    return true;
}

// ------------------------------------------------------------ criterion 4

bool criterion4_aggregation() {
    ParamMap m0, m4;
    m0["x"] = {0.0};
    m4["x"] = {4.0};

    auto single = aggregate({{0, 7, m4}});
    if (single.at("x")[0] != 4.0) return false;

    auto mean = aggregate({{0, 1, m0}, {1, 3, m4}});
    if (mean.at("x")[0] != 3.0) return false;

    std::vector<Update> ups = {{2, 5, m4}, {0, 2, m0}, {1, 9, m4}};
    auto a = aggregate(ups);
    std::swap(ups[0], ups[1]);
    auto b = aggregate(ups);
    if (a.at("x")[0] != b.at("x")[0]) return false;

    // idempotence on identical updates
    auto same = aggregate({{0, 10, m4}, {1, 20, m4}, {2, 5, m4}});
    if (same.at("x")[0] != 4.0) return false;

    // straggler sampling: only participants enter the normalizer
    Rng rng(4);
    OnlinePolicy fixed;
    fixed.kind = OnlinePolicy::Kind::fixed;
    fixed.m = 2;
    std::vector<ParamMap> values(5);
    std::vector<std::int64_t> sizes = {1, 2, 3, 2, 2};
    for (int k = 0; k < 5; ++k) values[static_cast<std::size_t>(k)]["x"] = {10.0 * k};
    for (int round = 0; round < 200; ++round) {
        auto picks = sample_online(5, fixed, rng.derive("r", static_cast<std::uint64_t>(round)));
        if (picks.size() != 2) return false;
        std::vector<Update> upd;
        for (int id : picks) {
            upd.push_back({id, sizes[static_cast<std::size_t>(id)],
                           values[static_cast<std::size_t>(id)]});
        }
        auto g = aggregate(upd);
        const double n0 = static_cast<double>(sizes[static_cast<std::size_t>(picks[0])]);
        const double n1 = static_cast<double>(sizes[static_cast<std::size_t>(picks[1])]);
        const double want =
            (n0 * 10.0 * picks[0] + n1 * 10.0 * picks[1]) / (n0 + n1);
        if (std::abs(g.at("x")[0] - want) > 1e-12) return false;
    }
    std::printf("  unit cases, permutation invariance, straggler normalizer over 200 rounds\n");
    return true;
}

// ------------------------------------------------------------ criterion 5

bool criterion5_sequential_equivalence() {
    SearchSpaceConfig space;
    space.layers = 2;
    space.image_channels = 1;
    space.image_h = 8;
    space.image_w = 8;
    space.stem_channels = 4;
    space.num_classes = 3;
    space.candidates = {"mbconv_e1_k3", "identity", "zero"};

    const int T = 4, E = 2;
    PartitionSpec pspec;
    pspec.kind = PartitionSpec::Kind::iid;
    World w = make_world(space, pspec, 1, 24, 0.2, 42, 0.25, 0.2);

    // three replicas of the same device: identical data and stream ids
    std::vector<DeviceState> trio;
    for (int k = 0; k < 3; ++k) {
        DeviceState d;
        d.device_id = k;
        d.part = w.parts[0];
        d.part.device_id = k;
        d.net = std::make_shared<SuperNet>(space, Rng(42).derive("init"));
        d.stream_id = 0;  // aliased streams make the devices identical
        trio.push_back(std::move(d));
    }
    ParamMap init = trio[0].net->snapshot_params();

    UpdateOpts uo;
    uo.epochs = E;
    uo.batch_size = 8;
    uo.val_batch_size = 8;
    Rng root = Rng(4242).derive("search");

    // sequential oracle: one device stepping through all rounds
    DeviceState solo;
    solo.device_id = 0;
    solo.part = w.parts[0];
    solo.net = std::make_shared<SuperNet>(space, Rng(42).derive("init"));
    solo.stream_id = 0;
    std::vector<ParamMap> sequential;
    {
        ParamMap current = init;
        for (int t = 0; t < T; ++t) {
            UpdateOpts o = uo;
            o.lr_w = cosine_lr(t, T, 0.05);
            o.epoch_base = t * E;
            o.phase_root = root;
            auto res = device_update(solo, current, w.ds, o);
            current = std::move(res.params);
            sequential.push_back(current);
        }
    }

    // federated run with the three identical devices, checked per round
    ServerState server;
    server.global = init;
    auto ptrs = device_ptrs(trio);
    for (int t = 1; t <= T; ++t) {
        FedSearchOpts opts;
        opts.total_rounds = T;
        opts.target_round = t;
        opts.lr0 = 0.05;
        opts.update = uo;
        opts.workers = 3;
        opts.root = root;
        run_fdnas(server, ptrs, w.ds, opts);
        if (!maps_equal(server.global, sequential[static_cast<std::size_t>(t - 1)])) {
            std::printf("  trajectory diverged at round %d\n", t);
            return false;
        }
    }
    std::printf("  K=3 aliased devices bit-identical to the sequential run over %d rounds\n", T);
    return true;
}

// ------------------------------------------------------------ criterion 6

nlohmann::json pipeline_config(std::uint64_t seed) {
    nlohmann::json j;
    j["seed"] = seed;
    j["dataset"] = {{"kind", "synthetic"}, {"num_classes", 4},  {"per_class", 24},
                    {"channels", 1},       {"height", 8},       {"width", 8},
                    {"difficulty", 0.2}};
    j["partition"] = {{"kind", "iid"}, {"val_fraction", 0.2}, {"test_fraction", 0.2}};
    j["search_space"] = {{"layers", 3},
                         {"stem_channels", 4},
                         {"downsample_layers", {1}},
                         {"width_mult", 2},
                         {"candidates", {"mbconv_e1_k3", "mbconv_e3_k3", "identity", "zero"}}};
    j["federated"] = {{"devices", 4}, {"rounds", 6},        {"local_epochs", 2},
                      {"batch_size", 8}, {"val_batch_size", 8}};
    j["finetune"] = {{"rounds", 6}, {"local_epochs", 2}, {"batch_size", 8}};
    j["eval"] = {{"local_epochs", 2}, {"batch_size", 8}};
    j["loss"] = {{"lambda2", 0.01}};
    return j;
}

bool run_full_pipeline(const std::string& cfg_path, const std::string& dir, int workers,
                       int search_rounds) {
    if (run_cmd("gen --config " + cfg_path + " --out " + dir) != 0) return false;
    if (run_cmd("search --config " + cfg_path + " --out " + dir + " --workers " +
                std::to_string(workers) + " --rounds " + std::to_string(search_rounds)) != 0)
        return false;
    if (run_cmd("derive --config " + cfg_path + " --out " + dir + " --checkpoint " + dir +
                "/supernet.ckpt") != 0)
        return false;
    if (run_cmd("finetune --config " + cfg_path + " --out " + dir + " --arch " + dir +
                "/arch.json --workers " + std::to_string(workers)) != 0)
        return false;
    if (run_cmd("eval --config " + cfg_path + " --out " + dir + " --arch " + dir +
                "/arch.json --checkpoint " + dir + "/compact.ckpt") != 0)
        return false;
    return true;
}

bool criterion6_determinism_resume() {
    const fs::path base = fs::temp_directory_path() / "fdnas_acc6";
    fs::remove_all(base);
    fs::create_directories(base / "a");
    fs::create_directories(base / "b");
    fs::create_directories(base / "c");
    fs::create_directories(base / "d");
    // identical leaf names keep the echoed run_id equal across runs
    const std::string da = (base / "a" / "run").string();
    const std::string db = (base / "b" / "run").string();
    const std::string dc = (base / "c" / "run").string();
    const std::string dd = (base / "d" / "run").string();

    const std::string cfg_path = (base / "config.json").string();
    {
        std::ofstream os(cfg_path);
        os << pipeline_config(11).dump(2);
    }

    if (!run_full_pipeline(cfg_path, da, 1, 6)) return false;
    if (!run_full_pipeline(cfg_path, db, 3, 6)) return false;  // different worker count
    if (!run_full_pipeline(cfg_path, dc, 1, 6)) return false;  // plain rerun

    const std::vector<std::string> tracked = {
        "dataset.bin",    "partition.json", "rounds.jsonl", "supernet.ckpt",
        "arch.json",      "compact.ckpt",   "finetune_rounds.jsonl", "metrics.json"};
    for (const auto& f : tracked) {
        if (!files_equal(da + "/" + f, db + "/" + f)) {
            std::printf("  worker-count mismatch in %s\n", f.c_str());
            return false;
        }
        if (!files_equal(da + "/" + f, dc + "/" + f)) {
            std::printf("  rerun mismatch in %s\n", f.c_str());
            return false;
        }
    }

    // split run: 3 rounds, then resume for 3 more
    if (run_cmd("gen --config " + cfg_path + " --out " + dd) != 0) return false;
    if (run_cmd("search --config " + cfg_path + " --out " + dd + " --rounds 3") != 0) return false;
    if (run_cmd("search --config " + cfg_path + " --out " + dd + " --rounds 3 --resume " + dd +
                "/supernet.ckpt") != 0)
        return false;
    if (!files_equal(da + "/supernet.ckpt", dd + "/supernet.ckpt")) {
        std::printf("  resume checkpoint differs from the uninterrupted run\n");
        return false;
    }
    if (!files_equal(da + "/rounds.jsonl", dd + "/rounds.jsonl")) {
        std::printf("  resume rounds.jsonl differs from the uninterrupted run\n");
        return false;
    }
    fs::remove_all(base);
    std::printf("  byte-identical across reruns, worker counts, and split-resume\n");
    return true;
}

// ------------------------------------------------------------ criterion 7

struct SweepResult {
    double latency = 0.0;
    std::int64_t flops = 0;
    int mbconv = 0;
    int identity = 0;
    int zero = 0;
};

SearchSpaceConfig sweep_space() {
    SearchSpaceConfig space;
    space.layers = 8;
    space.image_channels = 1;
    space.image_h = 10;
    space.image_w = 10;
    space.stem_channels = 4;
    space.num_classes = 10;
    space.downsample_layers = {2, 5};
    space.width_mult = 2;
    return space;
}

SweepResult run_search_with_lambda(std::uint64_t seed, double lambda2,
                                   const LatencyTable& table) {
    const auto space = sweep_space();
    World w = make_world(space, paper_shards(10, 10), 10, 35, 0.3, seed);
    ServerState server;
    server.global = w.devices[0].net->snapshot_params();
    auto ptrs = device_ptrs(w.devices);

    FedSearchOpts opts;
    opts.total_rounds = 30;
    opts.target_round = 30;
    opts.lr0 = 0.05;
    opts.update.epochs = 5;
    opts.update.batch_size = 32;
    opts.update.val_batch_size = 32;
    opts.update.lambda2 = lambda2;
    opts.update.table = &table;
    opts.root = Rng(seed).derive("search");
    run_fdnas(server, ptrs, w.ds, opts);

    SuperNet net(space, Rng(0));
    net.load_params(server.global);
    auto arch = derive_normal_net(net);
    CompactNet compact(arch, Rng(0));
    SweepResult res;
    res.latency = derived_latency(arch, table);
    res.flops = compact.flops();
    for (const auto& c : arch.choices) {
        if (c.kind == "identity") ++res.identity;
        else if (c.kind == "zero") ++res.zero;
        else ++res.mbconv;
    }
    return res;
}

bool criterion7_latency_pressure() {
    const auto table = synth_latency_table(HardwareProfile::preset("cpu"), sweep_space());
    const double lambda = 0.2;
    int monotone = 0, flops_ok = 0, healthy = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto r0 = run_search_with_lambda(seed, 0.0, table);
        auto r1 = run_search_with_lambda(seed, lambda, table);
        auto r2 = run_search_with_lambda(seed, 10.0 * lambda, table);
        const bool mono = r0.latency >= r1.latency && r1.latency >= r2.latency;
        const bool fl = r2.flops <= r0.flops;
        // the unregularized search must not collapse to all-identity/all-zero
        const bool alive = r0.mbconv > 0 && r0.zero < 8 && r0.identity < 8;
        monotone += mono ? 1 : 0;
        flops_ok += fl ? 1 : 0;
        healthy += alive ? 1 : 0;
        std::printf("  seed %llu: latency %.3f >= %.3f >= %.3f ms %s | flops %lld <= %lld %s | "
                    "lambda0 arch %dmb/%did/%dz %s\n",
                    static_cast<unsigned long long>(seed), r0.latency, r1.latency, r2.latency,
                    mono ? "ok" : "VIOLATION", static_cast<long long>(r2.flops),
                    static_cast<long long>(r0.flops), fl ? "ok" : "VIOLATION", r0.mbconv,
                    r0.identity, r0.zero, alive ? "ok" : "DEGENERATE");
        std::fflush(stdout);
    }
    std::printf("  monotone %d/10, flops %d/10, non-degenerate %d/10\n", monotone, flops_ok,
                healthy);
    return monotone >= 8 && flops_ok >= 8 && healthy >= 10;
}

// ------------------------------------------------------------ criterion 8

bool criterion8_cfdnas_economy() {
    SearchSpaceConfig space;
    space.layers = 4;
    space.image_channels = 1;
    space.image_h = 10;
    space.image_w = 10;
    space.stem_channels = 6;
    space.num_classes = 4;
    space.downsample_layers = {2};
    space.width_mult = 2;
    // zero stays out of this space: a sampled zero cuts the chain and starves
    // the shared weights at this scale
    space.candidates = {"mbconv_e3_k3", "mbconv_e1_k3", "identity"};

    const auto cpu_table = synth_latency_table(HardwareProfile::preset("cpu"), space);
    const double lambda2 = 0.06;
    const int fdnas_rounds = 30;
    const int naive_budget = 12;
    const int fast_budget = naive_budget / 4;   // 25% of the from-scratch budget
    const int equal_budget = fdnas_rounds / 5;  // 20% of the FDNAS rounds

    PartitionSpec pspec;
    pspec.kind = PartitionSpec::Kind::iid;

    int reach_ok = 0, acc_ok = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        World w = make_world(space, pspec, 6, 80, 0.25, seed, 0.15, 0.15,
                             {"gpu", "gpu", "gpu", "cpu", "cpu", "cpu"});

        // meta-train: full federated search over all devices
        ServerState fd;
        fd.global = w.devices[0].net->snapshot_params();
        auto all_ptrs = device_ptrs(w.devices);
        FedSearchOpts fopts;
        fopts.total_rounds = fdnas_rounds;
        fopts.target_round = fdnas_rounds;
        fopts.lr0 = 0.08;
        fopts.update.epochs = 3;
        fopts.update.batch_size = 16;
        fopts.update.val_batch_size = 16;
        fopts.update.lambda2 = 0.03;
        fopts.update.table = &cpu_table;
        fopts.root = Rng(seed).derive("search");
        run_fdnas(fd, all_ptrs, w.ds, fopts);

        // cpu cluster: devices 3,4,5
        std::vector<DeviceState*> cluster;
        for (int id : {3, 4, 5}) cluster.push_back(&w.devices[static_cast<std::size_t>(id)]);

        auto cluster_opts = [&](Rng root, int rounds) {
            FedSearchOpts o;
            o.total_rounds = rounds;
            o.target_round = rounds;
            o.lr0 = 0.08;
            o.update.epochs = 3;
            o.update.batch_size = 16;
            o.update.val_batch_size = 16;
            o.update.lambda2 = lambda2;
            o.update.table = &cpu_table;
            o.root = root;
            return o;
        };

        // naive baseline: from-scratch cluster search for the full budget
        ServerState naive;
        {
            SuperNet fresh(space, Rng(seed).derive("naive_init"));
            naive.global = fresh.snapshot_params();
        }
        run_fdnas(naive, cluster, w.ds,
                  cluster_opts(Rng(seed).derive("cluster_naive"), naive_budget));
        const double naive_level = naive.history.back().mean_val_reg_loss;

        // adapted run: from the FDNAS checkpoint
        ServerState adapted;
        adapted.global = fd.global;
        run_fdnas(adapted, cluster, w.ds,
                  cluster_opts(Rng(seed).derive("cluster_adapted"), naive_budget));
        int reach_round = -1;
        for (std::size_t t = 0; t < adapted.history.size(); ++t) {
            if (adapted.history[t].mean_val_reg_loss <= naive_level) {
                reach_round = static_cast<int>(t) + 1;
                break;
            }
        }
        const bool reached = reach_round > 0 && reach_round <= fast_budget;
        reach_ok += reached ? 1 : 0;

        // equal adapted budget: derive, fine-tune from scratch, compare
        auto derive_at = [&](const ParamMap& params) {
            SuperNet net(space, Rng(0));
            net.load_params(params);
            return derive_normal_net(net);
        };
        ServerState adapted_low;
        adapted_low.global = fd.global;
        run_fdnas(adapted_low, cluster, w.ds,
                  cluster_opts(Rng(seed).derive("cluster_adapted_low"), equal_budget));

        ServerState naive_low;
        {
            SuperNet fresh(space, Rng(seed).derive("naive_init"));
            naive_low.global = fresh.snapshot_params();
        }
        run_fdnas(naive_low, cluster, w.ds,
                  cluster_opts(Rng(seed).derive("cluster_naive_low"), equal_budget));

        std::vector<DevicePartition> cluster_parts = {w.parts[3], w.parts[4], w.parts[5]};
        auto finetune_eval = [&](const DerivedArchitecture& arch, std::string_view which) {
            FinetuneOpts fo;
            fo.rounds = 25;
            fo.epochs = 3;
            fo.lr0 = 0.08;
            fo.batch_size = 16;
            fo.root = Rng(seed).derive(which);
            auto ft = finetune_fedavg(arch, cluster_parts, w.ds, fo);
            EvalOpts eo;
            eo.local_epochs = 3;
            eo.root = Rng(seed).derive("eval");
            return evaluate(arch, ft.global, cluster_parts, w.ds, EvalMode::mean_local, eo);
        };
        const double acc_adapted = finetune_eval(derive_at(adapted_low.global), "ft_adapted");
        const double acc_naive = finetune_eval(derive_at(naive_low.global), "ft_naive");
        const bool acc_pass = acc_adapted >= acc_naive;
        acc_ok += acc_pass ? 1 : 0;

        std::printf("  seed %llu: naive level %.4f, adapted reaches it at round %d (<= %d %s); "
                    "mean-local %.3f vs %.3f %s\n",
                    static_cast<unsigned long long>(seed), naive_level, reach_round, fast_budget,
                    reached ? "ok" : "VIOLATION", acc_adapted, acc_naive,
                    acc_pass ? "ok" : "VIOLATION");
        std::fflush(stdout);
    }
    std::printf("  adaptation economy %d/10, accuracy at equal budget %d/10\n", reach_ok, acc_ok);
    return reach_ok >= 8 && acc_ok >= 7;
}

// ------------------------------------------------------------ criterion 9

bool criterion9_noniid_gap() {
    SearchSpaceConfig space;
    space.layers = 4;
    space.image_channels = 1;
    space.image_h = 10;
    space.image_w = 10;
    space.stem_channels = 6;
    space.num_classes = 10;
    space.downsample_layers = {2};
    space.width_mult = 2;

    int shard_ok = 0, iid_ok = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        // search on the shard world to obtain an architecture
        World shard = make_world(space, paper_shards(10, 10), 10, 35, 0.3, seed);
        ServerState server;
        server.global = shard.devices[0].net->snapshot_params();
        auto ptrs = device_ptrs(shard.devices);
        FedSearchOpts opts;
        opts.total_rounds = 8;
        opts.target_round = 8;
        opts.lr0 = 0.08;
        opts.update.epochs = 3;
        opts.update.batch_size = 16;
        opts.update.val_batch_size = 16;
        opts.root = Rng(seed).derive("search");
        run_fdnas(server, ptrs, shard.ds, opts);
        SuperNet net(space, Rng(0));
        net.load_params(server.global);
        auto arch = derive_normal_net(net);

        auto gap_of = [&](const World& w, std::string_view which) {
            FinetuneOpts fo;
            fo.rounds = 40;
            fo.epochs = 3;
            fo.lr0 = 0.08;
            fo.batch_size = 16;
            fo.root = Rng(seed).derive(which);
            auto ft = finetune_fedavg(arch, w.parts, w.ds, fo);
            EvalOpts eo;
            eo.local_epochs = 5;
            eo.lr = 0.02;
            eo.batch_size = 16;
            eo.root = Rng(seed).derive("eval");
            const double fed =
                evaluate(arch, ft.global, w.parts, w.ds, EvalMode::federated_averaged, eo);
            const double local =
                evaluate(arch, ft.global, w.parts, w.ds, EvalMode::mean_local, eo);
            return std::make_pair(fed, local);
        };

        auto [shard_fed, shard_local] = gap_of(shard, "ft_shard");
        PartitionSpec iid_spec;
        iid_spec.kind = PartitionSpec::Kind::iid;
        World iid = make_world(space, iid_spec, 10, 35, 0.3, seed);
        auto [iid_fed, iid_local] = gap_of(iid, "ft_iid");

        const bool shard_pass = shard_local >= shard_fed;
        const bool iid_pass = (iid_local - iid_fed) < 0.05;
        shard_ok += shard_pass ? 1 : 0;
        iid_ok += iid_pass ? 1 : 0;
        std::printf("  seed %llu: shards local %.3f vs fed %.3f %s | iid local %.3f vs fed %.3f "
                    "gap %.3f %s\n",
                    static_cast<unsigned long long>(seed), shard_local, shard_fed,
                    shard_pass ? "ok" : "VIOLATION", iid_local, iid_fed, iid_local - iid_fed,
                    iid_pass ? "ok" : "VIOLATION");
        std::fflush(stdout);
    }
    std::printf("  specialization %d/10, iid gap %d/10\n", shard_ok, iid_ok);
    return shard_ok >= 8 && iid_ok >= 8;
}

// ----------------------------------------------------------- criterion 10

bool criterion10_end_to_end() {
    const fs::path base = fs::temp_directory_path() / "fdnas_acc10";
    fs::remove_all(base);
    fs::create_directories(base);
    const std::string dir = (base / "run").string();
    const std::string cfg_path = (base / "config.json").string();

    nlohmann::json j;
    j["seed"] = 7;
    j["dataset"] = {{"kind", "synthetic"}, {"num_classes", 10}, {"per_class", 35},
                    {"channels", 1},       {"height", 10},      {"width", 10},
                    {"difficulty", 0.1}};
    j["partition"] = {{"kind", "iid"}, {"val_fraction", 0.1}, {"test_fraction", 0.15}};
    j["search_space"] = {{"layers", 4},
                         {"stem_channels", 6},
                         {"downsample_layers", {2}},
                         {"width_mult", 2}};
    j["federated"] = {{"devices", 10},   {"rounds", 30},       {"local_epochs", 5},
                      {"batch_size", 16}, {"val_batch_size", 16}};
    j["optimizer"] = {{"lr0", 0.08}};
    j["finetune"] = {{"rounds", 50}, {"local_epochs", 5}, {"lr0", 0.08}, {"batch_size", 16}};
    j["eval"] = {{"local_epochs", 3}, {"batch_size", 16}};
    j["loss"] = {{"lambda2", 0.01}};
    {
        std::ofstream os(cfg_path);
        os << j.dump(2);
    }

    if (!run_full_pipeline(cfg_path, dir, 1, 30)) {
        std::printf("  pipeline command failed\n");
        return false;
    }
    auto metrics = nlohmann::json::parse(slurp(dir + "/metrics.json"));
    const double acc = metrics.at("acc_federated_averaged").get<double>();

    auto arch = nlohmann::json::parse(slurp(dir + "/arch.json"));
    int mbconv = 0, identity = 0, zero = 0;
    for (const auto& layer : arch.at("layers")) {
        const std::string kind = layer.at("kind").get<std::string>();
        if (kind == "identity") ++identity;
        else if (kind == "zero") ++zero;
        else ++mbconv;
    }
    const bool not_degenerate = mbconv > 0 && zero < 4 && identity < 4;
    std::printf("  federated-averaged accuracy %.3f (need >= 0.85); arch: %d mbconv, %d identity, "
                "%d zero\n",
                acc, mbconv, identity, zero);
    fs::remove_all(base);
    return acc >= 0.85 && not_degenerate;
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<bool()> fn;
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient oracle (mixed relaxation vs finite differences)", criterion1_gradient_oracle},
        {2, "simplex and gate sampling statistics", criterion2_simplex_sampling},
        {3, "rescaling contract", criterion3_rescaling},
        {4, "aggregation algebra", criterion4_aggregation},
        {5, "sequential equivalence of the federated trajectory",
         criterion5_sequential_equivalence},
        {6, "pipeline determinism and resume", criterion6_determinism_resume},
        {7, "latency-pressure monotonicity", criterion7_latency_pressure},
        {8, "cluster adaptation economy", criterion8_cfdnas_economy},
        {9, "non-IID accuracy gap", criterion9_noniid_gap},
        {10, "end-to-end smoke", criterion10_end_to_end},
    };

    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = c.fn();
        } catch (const std::exception& e) {
            std::printf("  exception: %s\n", e.what());
            ok = false;
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d: %s (%.1fs)\n", ok ? "PASS" : "FAIL", c.id, c.name, secs);
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
