// SPDX-License-Identifier: Apache-2.0
#include "fdnas/latency.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fdnas {

double LatencyTable::at(int layer, const std::string& candidate) const {
    auto it = entries.find({layer, candidate});
    if (it == entries.end()) {
        throw std::invalid_argument("latency table '" + hardware_tag + "': missing entry (layer " +
                                    std::to_string(layer) + ", " + candidate + ")");
    }
    return it->second;
}

bool LatencyTable::has(int layer, const std::string& candidate) const {
    return entries.count({layer, candidate}) > 0;
}

std::vector<double> LatencyTable::layer_costs(const MixedLayer& layer) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(layer.num_candidates()));
    for (int n = 0; n < layer.num_candidates(); ++n) {
        out.push_back(at(layer.index(), layer.candidate(n).name()));
    }
    return out;
}

void LatencyTable::validate(const SearchSpaceConfig& space) const {
    std::vector<std::string> missing;
    for (int li = 0; li < space.layers; ++li) {
        for (const auto& name : space.layer_candidates(li)) {
            if (!has(li, name)) missing.push_back("(" + std::to_string(li) + "," + name + ")");
        }
    }
    if (!missing.empty()) {
        std::string msg = "latency table '" + hardware_tag + "' incomplete, missing:";
        for (const auto& m : missing) msg += " " + m;
        throw std::invalid_argument(msg);
    }
    for (const auto& [key, ms] : entries) {
        if (ms < 0.0) {
            throw std::invalid_argument("latency table '" + hardware_tag +
                                        "': negative entry at (layer " +
                                        std::to_string(key.first) + ", " + key.second + ")");
        }
    }
}

HardwareProfile HardwareProfile::preset(const std::string& tag) {
    // Distinct throughput/overhead ratios: the cpu and phone penalize big
    // kernels relatively more, the gpu pays mostly fixed launch overhead.
    if (tag == "gpu") return {"gpu", 2.0e6, 0.05};
    if (tag == "cpu") return {"cpu", 1.0e5, 0.01};
    if (tag == "phone") return {"phone", 2.5e4, 0.005};
    throw std::invalid_argument("unknown hardware profile '" + tag + "'");
}

std::int64_t flops_of_candidate(const OperationCandidate& candidate, int in_h, int in_w) {
    require(in_h > 0 && in_w > 0, "flops_of_candidate: unresolved input size");
    return candidate.flops(in_h, in_w);
}

LatencyTable synth_latency_table(const HardwareProfile& profile, const SearchSpaceConfig& space) {
    require(profile.throughput > 0.0, "synth_latency_table: throughput must be > 0");
    LatencyTable t;
    t.hardware_tag = profile.tag;
    t.batch_size = 1;
    const auto plan = space.layer_plan();
    for (int li = 0; li < space.layers; ++li) {
        const auto& lp = plan[static_cast<std::size_t>(li)];
        for (const auto& name : space.layer_candidates(li)) {
            CandidateSpec spec = CandidateSpec::parse(name);
            std::int64_t macs = 0;
            if (spec.kind == CandidateSpec::Kind::mbconv) {
                OperationCandidate c(spec, lp.in_ch, lp.out_ch, lp.stride, "tmp", Rng(0));
                macs = c.flops(lp.in_h, lp.in_w);
            }
            t.entries[{li, name}] =
                static_cast<double>(macs) / profile.throughput + profile.overhead_ms;
        }
    }
    return t;
}

double expected_layer_latency(std::span<const double> probs, std::span<const double> costs_ms) {
    require(probs.size() == costs_ms.size(), "expected_layer_latency: size mismatch");
    double acc = 0.0;
    for (std::size_t n = 0; n < probs.size(); ++n) {
        require(costs_ms[n] >= 0.0, "expected_layer_latency: negative cost");
        acc += probs[n] * costs_ms[n];
    }
    return acc;
}

double expected_net_latency(const SuperNet& net, const LatencyTable& table) {
    double acc = 0.0;
    for (int li = 0; li < net.num_layers(); ++li) {
        const auto& layer = net.layer(li);
        const auto p = layer.probs();
        const auto f = table.layer_costs(layer);
        acc += expected_layer_latency(p, f);
    }
    return acc;
}

double derived_latency(const DerivedArchitecture& arch, const LatencyTable& table) {
    double acc = 0.0;
    for (const auto& ch : arch.choices) acc += table.at(ch.layer_index, ch.kind);
    return acc;
}

double total_loss(double ce, const std::vector<const Parameter*>& weights,
                  std::span<const double> layer_latencies, double lambda1, double lambda2) {
    require(ce >= 0.0, "total_loss: negative cross-entropy rejected");
    require(lambda1 >= 0.0 && lambda2 >= 0.0, "total_loss: lambdas must be >= 0");
    double wnorm = 0.0;
    for (const Parameter* p : weights) {
        for (double v : p->value.data()) wnorm += v * v;
    }
    double lat = 0.0;
    for (double l : layer_latencies) lat += l;
    return ce + lambda1 * wnorm + lambda2 * lat;
}

void save_latency_table(const LatencyTable& table, const std::string& path) {
    std::ofstream os(path);
    require(os.good(), "cannot open '" + path + "' for writing");
    os << "layer,candidate,ms\n";
    char buf[64];
    for (const auto& [key, ms] : table.entries) {
        std::snprintf(buf, sizeof(buf), "%.17g", ms);
        os << key.first << ',' << key.second << ',' << buf << '\n';
    }
    os.close();

    nlohmann::ordered_json meta;
    meta["hardware_tag"] = table.hardware_tag;
    meta["batch_size"] = table.batch_size;
    std::ofstream ms(path + ".meta.json");
    require(ms.good(), "cannot open '" + path + ".meta.json' for writing");
    ms << meta.dump(2) << '\n';
}

LatencyTable load_latency_table(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw std::runtime_error("cannot open latency table '" + path + "'");
    LatencyTable t;
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), "latency table '" + path + "' is empty");
    require(line == "layer,candidate,ms", "latency table '" + path + "': bad header '" + line + "'");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string layer_s, cand, ms_s;
        require(std::getline(ls, layer_s, ',') && std::getline(ls, cand, ',') &&
                    std::getline(ls, ms_s),
                "latency table '" + path + "': bad row '" + line + "'");
        const int layer = std::stoi(layer_s);
        const double ms = std::stod(ms_s);
        if (ms < 0.0) {
            throw std::invalid_argument("latency table '" + path + "': negative latency at (" +
                                        layer_s + "," + cand + ")");
        }
        t.entries[{layer, cand}] = ms;
    }

    std::ifstream msf(path + ".meta.json");
    if (msf.good()) {
        nlohmann::json meta = nlohmann::json::parse(msf);
        t.hardware_tag = meta.value("hardware_tag", std::string("custom"));
        t.batch_size = meta.value("batch_size", 1);
    }
    return t;
}

LatencyTable load_latency_table(const std::string& path, const SearchSpaceConfig& space) {
    LatencyTable t = load_latency_table(path);
    t.validate(space);
    return t;
}

}  // namespace fdnas
