// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the main search operations and the end-to-end pipeline.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "fdnas/pipeline.hpp"

namespace py = pybind11;
using namespace fdnas;

namespace {

py::dict run_pipeline(const std::string& config_json, const std::string& out_dir,
                      int search_rounds, int finetune_rounds) {
    auto cfg = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
    cfg.out_dir = out_dir;
    cfg.validate();
    cmd_gen(cfg, out_dir);
    cmd_search(cfg, out_dir, search_rounds);
    cmd_derive(cfg, out_dir, out_dir + "/supernet.ckpt");
    cmd_finetune(cfg, out_dir, out_dir + "/arch.json", finetune_rounds);
    cmd_eval(cfg, out_dir, out_dir + "/arch.json", out_dir + "/compact.ckpt");

    std::ifstream is(out_dir + "/metrics.json");
    nlohmann::json m = nlohmann::json::parse(is);
    py::dict out;
    out["acc_federated_averaged"] = m.at("acc_federated_averaged").get<double>();
    out["acc_mean_local"] = m.at("acc_mean_local").get<double>();
    out["params"] = m.at("params").get<std::int64_t>();
    out["flops_macs"] = m.at("flops_macs").get<std::int64_t>();
    py::dict lat;
    for (const auto& [tag, v] : m.at("expected_latency_ms").items()) {
        lat[py::str(tag)] = v.get<double>();
    }
    out["expected_latency_ms"] = lat;
    return out;
}

py::dict dataset_summary(int num_classes, int per_class, int channels, int height, int width,
                         double difficulty, std::uint64_t seed) {
    auto ds = gen_synthetic(num_classes, per_class, channels, height, width, difficulty, seed);
    py::dict out;
    out["num_samples"] = ds.size();
    out["num_classes"] = ds.num_classes;
    out["shape"] = py::make_tuple(ds.channels(), ds.height(), ds.width());
    std::vector<std::int64_t> hist(static_cast<std::size_t>(num_classes), 0);
    for (auto l : ds.labels) hist[static_cast<std::size_t>(l)]++;
    out["label_histogram"] = hist;
    double mn = 1e300, mx = -1e300;
    for (double v : ds.features.data()) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    out["feature_min"] = mn;
    out["feature_max"] = mx;
    return out;
}

}  // namespace

PYBIND11_MODULE(_fdnas, m) {
    m.doc() = "federated direct architecture search simulator (core operations)";

    py::class_<Rng>(m, "Rng")
        .def(py::init<std::uint64_t>(), py::arg("seed"))
        .def("derive",
             static_cast<Rng (Rng::*)(std::string_view) const>(&Rng::derive), py::arg("name"))
        .def("uniform", &Rng::uniform)
        .def("normal", &Rng::normal)
        .def("dirichlet", &Rng::dirichlet, py::arg("concentration"), py::arg("n"));

    m.def(
        "compute_probs",
        [](const std::vector<double>& alpha) { return compute_probs(alpha); },
        py::arg("alpha"), "softmax over architecture parameters (max-subtracted)");

    m.def(
        "sample_gate",
        [](const std::vector<double>& probs, Rng& rng) { return sample_gate(probs, rng); },
        py::arg("probs"), py::arg("rng"), "one-hot gate index drawn from the simplex");

    m.def(
        "sample_active_pair",
        [](const std::vector<double>& probs, Rng& rng) {
            auto pr = sample_active_pair(probs, rng);
            return py::make_tuple(pr.i, pr.j, std::vector<double>{pr.q[0], pr.q[1]});
        },
        py::arg("probs"), py::arg("rng"),
        "two distinct candidates drawn without replacement, with renormalized pair probs");

    m.def(
        "arch_gradient",
        [](const std::vector<double>& dl_db, const std::vector<double>& probs) {
            return arch_gradient(dl_db, probs);
        },
        py::arg("dl_db"), py::arg("probs"),
        "architecture-parameter gradient from gate gradients");

    m.def("cosine_lr", &cosine_lr, py::arg("round"), py::arg("total_rounds"), py::arg("lr0"));

    m.def(
        "expected_layer_latency",
        [](const std::vector<double>& probs, const std::vector<double>& costs_ms) {
            return expected_layer_latency(probs, costs_ms);
        },
        py::arg("probs"), py::arg("costs_ms"), "dot(p, F) in milliseconds");

    m.def("gen_synthetic_summary", &dataset_summary, py::arg("num_classes"), py::arg("per_class"),
          py::arg("channels"), py::arg("height"), py::arg("width"), py::arg("difficulty"),
          py::arg("seed"), "generate a synthetic dataset and return its summary");

    m.def("run_pipeline", &run_pipeline, py::arg("config_json"), py::arg("out_dir"),
          py::arg("search_rounds") = -1, py::arg("finetune_rounds") = -1,
          "gen -> search -> derive -> finetune -> eval; returns the metrics");
}
