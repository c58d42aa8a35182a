// SPDX-License-Identifier: Apache-2.0
#include "fdnas/config.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fdnas {

namespace {

// First three devices form one group, next three a second, the rest a third
// (§-style default layout scaled to any device count).
std::vector<PartitionSpec::Group> default_groups(int num_classes, int num_devices) {
    std::vector<PartitionSpec::Group> groups(3);
    for (int c = 0; c < num_classes; ++c) {
        const int g = c < 3 ? 0 : (c < 6 ? 1 : 2);
        groups[static_cast<std::size_t>(std::min(g, 2))].classes.push_back(c);
    }
    for (int d = 0; d < num_devices; ++d) {
        const int g = d < 3 ? 0 : (d < 6 ? 1 : 2);
        groups[static_cast<std::size_t>(std::min(g, 2))].devices.push_back(d);
    }
    // Drop empty groups (tiny device counts).
    std::vector<PartitionSpec::Group> out;
    for (auto& g : groups) {
        if (!g.devices.empty() && !g.classes.empty()) out.push_back(std::move(g));
    }
    return out;
}

std::vector<std::string> default_hardware_tags(int num_devices) {
    std::vector<std::string> tags;
    for (int d = 0; d < num_devices; ++d) {
        tags.push_back(d >= 3 && d < 6 ? "cpu" : "gpu");
    }
    return tags;
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

}  // namespace

PartitionSpec ExperimentConfig::partition_spec() const {
    PartitionSpec spec;
    if (partition.kind == "label_shards") {
        spec.kind = PartitionSpec::Kind::label_shards;
    } else if (partition.kind == "dirichlet") {
        spec.kind = PartitionSpec::Kind::dirichlet;
    } else if (partition.kind == "iid") {
        spec.kind = PartitionSpec::Kind::iid;
    } else {
        throw std::invalid_argument("config: unknown partition kind '" + partition.kind + "'");
    }
    spec.groups = partition.groups;
    spec.concentration = partition.concentration;
    spec.tags = partition.tags;
    return spec;
}

OnlinePolicy ExperimentConfig::online_policy() const {
    OnlinePolicy p;
    if (federated.online_policy == "all") {
        p.kind = OnlinePolicy::Kind::all;
    } else if (federated.online_policy == "fraction") {
        p.kind = OnlinePolicy::Kind::fraction;
        p.fraction = federated.online_fraction;
    } else if (federated.online_policy == "fixed") {
        p.kind = OnlinePolicy::Kind::fixed;
        p.m = federated.online_m;
    } else {
        throw std::invalid_argument("config: unknown online policy '" + federated.online_policy +
                                    "'");
    }
    return p;
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["workers"] = workers;
    j["dataset"] = {{"kind", dataset.kind},
                    {"num_classes", dataset.num_classes},
                    {"per_class", dataset.per_class},
                    {"channels", dataset.channels},
                    {"height", dataset.height},
                    {"width", dataset.width},
                    {"difficulty", dataset.difficulty},
                    {"images_path", dataset.images_path},
                    {"labels_path", dataset.labels_path}};
    nlohmann::ordered_json groups = nlohmann::ordered_json::array();
    for (const auto& g : partition.groups) {
        groups.push_back({{"classes", g.classes}, {"devices", g.devices}});
    }
    j["partition"] = {{"kind", partition.kind},
                      {"groups", groups},
                      {"concentration", partition.concentration},
                      {"tags", partition.tags},
                      {"val_fraction", partition.val_fraction},
                      {"test_fraction", partition.test_fraction}};
    j["search_space"] = {{"layers", search_space.layers},
                         {"image_channels", search_space.image_channels},
                         {"image_h", search_space.image_h},
                         {"image_w", search_space.image_w},
                         {"stem_channels", search_space.stem_channels},
                         {"num_classes", search_space.num_classes},
                         {"downsample_layers", search_space.downsample_layers},
                         {"width_mult", search_space.width_mult},
                         {"candidates", search_space.candidates}};
    j["federated"] = {{"devices", federated.devices},
                      {"rounds", federated.rounds},
                      {"local_epochs", federated.local_epochs},
                      {"batch_size", federated.batch_size},
                      {"val_batch_size", federated.val_batch_size},
                      {"online",
                       {{"policy", federated.online_policy},
                        {"fraction", federated.online_fraction},
                        {"m", federated.online_m}}},
                      {"interleave", federated.interleave}};
    j["optimizer"] = {{"lr0", optimizer.lr0},
                      {"momentum", optimizer.momentum},
                      {"weight_decay", optimizer.weight_decay},
                      {"alpha_lr", optimizer.alpha_lr},
                      {"betas", {optimizer.beta1, optimizer.beta2}},
                      {"adam_eps", optimizer.adam_eps}};
    j["loss"] = {{"lambda1", loss.lambda1}, {"lambda2", loss.lambda2}};
    j["latency"] = {{"profile", latency.profile}, {"profiles", latency.profiles}};
    nlohmann::ordered_json pc = nlohmann::ordered_json::object();
    for (const auto& [tag, v] : cluster.per_cluster) {
        pc[tag] = {{"lambda2", v.first}, {"profile", v.second}};
    }
    j["cluster"] = {{"key", cluster.key},
                    {"hardware_tags", cluster.hardware_tags},
                    {"rounds", cluster.rounds},
                    {"per_cluster", pc}};
    j["finetune"] = {{"rounds", finetune.rounds},
                     {"local_epochs", finetune.local_epochs},
                     {"lr0", finetune.lr0},
                     {"batch_size", finetune.batch_size}};
    j["eval"] = {{"local_epochs", eval.local_epochs},
                 {"lr", eval.lr},
                 {"batch_size", eval.batch_size}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);
    c.workers = get_or<int>(j, "workers", c.workers);

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        c.dataset.kind = get_or<std::string>(d, "kind", c.dataset.kind);
        c.dataset.num_classes = get_or<int>(d, "num_classes", c.dataset.num_classes);
        c.dataset.per_class = get_or<int>(d, "per_class", c.dataset.per_class);
        c.dataset.channels = get_or<int>(d, "channels", c.dataset.channels);
        c.dataset.height = get_or<int>(d, "height", c.dataset.height);
        c.dataset.width = get_or<int>(d, "width", c.dataset.width);
        c.dataset.difficulty = get_or<double>(d, "difficulty", c.dataset.difficulty);
        c.dataset.images_path = get_or<std::string>(d, "images_path", c.dataset.images_path);
        c.dataset.labels_path = get_or<std::string>(d, "labels_path", c.dataset.labels_path);
    }
    if (j.contains("partition")) {
        const auto& p = j.at("partition");
        c.partition.kind = get_or<std::string>(p, "kind", c.partition.kind);
        if (p.contains("groups")) {
            for (const auto& g : p.at("groups")) {
                PartitionSpec::Group grp;
                grp.classes = g.at("classes").get<std::vector<int>>();
                grp.devices = g.at("devices").get<std::vector<int>>();
                c.partition.groups.push_back(std::move(grp));
            }
        }
        c.partition.concentration = get_or<double>(p, "concentration", c.partition.concentration);
        c.partition.tags = get_or<std::vector<std::string>>(p, "tags", c.partition.tags);
        c.partition.val_fraction = get_or<double>(p, "val_fraction", c.partition.val_fraction);
        c.partition.test_fraction = get_or<double>(p, "test_fraction", c.partition.test_fraction);
    }
    if (j.contains("search_space")) {
        const auto& s = j.at("search_space");
        c.search_space.layers = get_or<int>(s, "layers", c.search_space.layers);
        c.search_space.image_channels =
            get_or<int>(s, "image_channels", c.search_space.image_channels);
        c.search_space.image_h = get_or<int>(s, "image_h", c.search_space.image_h);
        c.search_space.image_w = get_or<int>(s, "image_w", c.search_space.image_w);
        c.search_space.stem_channels =
            get_or<int>(s, "stem_channels", c.search_space.stem_channels);
        c.search_space.num_classes = get_or<int>(s, "num_classes", c.search_space.num_classes);
        c.search_space.downsample_layers =
            get_or<std::vector<int>>(s, "downsample_layers", c.search_space.downsample_layers);
        c.search_space.width_mult = get_or<int>(s, "width_mult", c.search_space.width_mult);
        c.search_space.candidates =
            get_or<std::vector<std::string>>(s, "candidates", c.search_space.candidates);
    }
    if (j.contains("federated")) {
        const auto& f = j.at("federated");
        c.federated.devices = get_or<int>(f, "devices", c.federated.devices);
        c.federated.rounds = get_or<int>(f, "rounds", c.federated.rounds);
        c.federated.local_epochs = get_or<int>(f, "local_epochs", c.federated.local_epochs);
        c.federated.batch_size = get_or<int>(f, "batch_size", c.federated.batch_size);
        c.federated.val_batch_size = get_or<int>(f, "val_batch_size", c.federated.val_batch_size);
        if (f.contains("online")) {
            const auto& o = f.at("online");
            c.federated.online_policy = get_or<std::string>(o, "policy", c.federated.online_policy);
            c.federated.online_fraction =
                get_or<double>(o, "fraction", c.federated.online_fraction);
            c.federated.online_m = get_or<int>(o, "m", c.federated.online_m);
        }
        c.federated.interleave = get_or<std::string>(f, "interleave", c.federated.interleave);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        c.optimizer.lr0 = get_or<double>(o, "lr0", c.optimizer.lr0);
        c.optimizer.momentum = get_or<double>(o, "momentum", c.optimizer.momentum);
        c.optimizer.weight_decay = get_or<double>(o, "weight_decay", c.optimizer.weight_decay);
        c.optimizer.alpha_lr = get_or<double>(o, "alpha_lr", c.optimizer.alpha_lr);
        if (o.contains("betas")) {
            const auto betas = o.at("betas").get<std::vector<double>>();
            require(betas.size() == 2, "config: optimizer.betas needs two entries");
            c.optimizer.beta1 = betas[0];
            c.optimizer.beta2 = betas[1];
        }
        c.optimizer.adam_eps = get_or<double>(o, "adam_eps", c.optimizer.adam_eps);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        c.loss.lambda2 = get_or<double>(l, "lambda2", c.loss.lambda2);
        c.loss.lambda1 = get_or<double>(l, "lambda1", c.optimizer.weight_decay / 2.0);
    } else {
        c.loss.lambda1 = c.optimizer.weight_decay / 2.0;
    }
    if (j.contains("latency")) {
        const auto& l = j.at("latency");
        c.latency.profile = get_or<std::string>(l, "profile", c.latency.profile);
        c.latency.profiles = get_or<std::vector<std::string>>(l, "profiles", c.latency.profiles);
    }
    if (j.contains("cluster")) {
        const auto& cl = j.at("cluster");
        c.cluster.key = get_or<std::string>(cl, "key", c.cluster.key);
        c.cluster.hardware_tags =
            get_or<std::vector<std::string>>(cl, "hardware_tags", c.cluster.hardware_tags);
        c.cluster.rounds = get_or<int>(cl, "rounds", c.cluster.rounds);
        if (cl.contains("per_cluster")) {
            for (const auto& [tag, v] : cl.at("per_cluster").items()) {
                c.cluster.per_cluster[tag] = {get_or<double>(v, "lambda2", c.loss.lambda2),
                                              get_or<std::string>(v, "profile", tag)};
            }
        }
    }
    if (j.contains("finetune")) {
        const auto& f = j.at("finetune");
        c.finetune.rounds = get_or<int>(f, "rounds", c.finetune.rounds);
        c.finetune.local_epochs = get_or<int>(f, "local_epochs", c.finetune.local_epochs);
        c.finetune.lr0 = get_or<double>(f, "lr0", c.finetune.lr0);
        c.finetune.batch_size = get_or<int>(f, "batch_size", c.finetune.batch_size);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        c.eval.local_epochs = get_or<int>(e, "local_epochs", c.eval.local_epochs);
        c.eval.lr = get_or<double>(e, "lr", c.eval.lr);
        c.eval.batch_size = get_or<int>(e, "batch_size", c.eval.batch_size);
    }

    // Materialize derived defaults.
    if (c.partition.kind == "label_shards" && c.partition.groups.empty()) {
        c.partition.groups = default_groups(c.dataset.num_classes, c.federated.devices);
    }
    if (c.cluster.hardware_tags.empty()) {
        c.cluster.hardware_tags = default_hardware_tags(c.federated.devices);
    }
    if (c.cluster.per_cluster.empty()) {
        for (const auto& tag : {"gpu", "cpu"}) {
            c.cluster.per_cluster[tag] = {c.loss.lambda2, tag};
        }
    }
    c.search_space.image_channels = c.dataset.channels;
    c.search_space.image_h = c.dataset.height;
    c.search_space.image_w = c.dataset.width;
    c.search_space.num_classes = c.dataset.num_classes;
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw std::runtime_error("cannot open config '" + path + "'");
    return from_json(nlohmann::json::parse(is));
}

void ExperimentConfig::validate() const {
    require(federated.devices >= 1, "config: need at least one device");
    require(federated.rounds >= 0, "config: negative rounds");
    require(federated.local_epochs >= 1, "config: local_epochs must be >= 1");
    require(dataset.kind == "synthetic" || dataset.kind == "raw",
            "config: dataset.kind must be synthetic or raw");
    if (dataset.kind == "raw") {
        require(std::filesystem::exists(dataset.images_path),
                "config: images_path '" + dataset.images_path + "' does not exist");
        require(std::filesystem::exists(dataset.labels_path),
                "config: labels_path '" + dataset.labels_path + "' does not exist");
    }
    require(loss.lambda1 >= 0.0 && loss.lambda2 >= 0.0, "config: lambdas must be >= 0");
    (void)partition_spec();
    (void)online_policy();
    if (partition.kind == "label_shards") {
        require(!partition.groups.empty(), "config: label_shards needs groups");
    }
    require(cluster.key == "hardware" || cluster.key == "data",
            "config: cluster.key must be hardware or data");
}

void write_resolved_config(const ExperimentConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir + "/resolved_config.json");
    require(os.good(), "cannot write resolved config into '" + dir + "'");
    os << cfg.to_json().dump(2) << '\n';
}

}  // namespace fdnas
