// SPDX-License-Identifier: Apache-2.0
#include "fdnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fdnas {

namespace {

constexpr double kPi = 3.14159265358979323846;

void write_u32_be(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_be(std::ifstream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is.good()) {
        throw std::runtime_error("'" + path + "': truncated at byte offset " +
                                 std::to_string(static_cast<long long>(is.tellg())));
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

std::vector<std::vector<double>> synthetic_templates(int num_classes, int channels, int height,
                                                     int width) {
    std::vector<std::vector<double>> templates;
    const double cx0 = (width - 1) / 2.0;
    const double cy0 = (height - 1) / 2.0;
    const double radius = 0.30 * std::min(height, width);
    const double sigma = 0.15 * std::min(height, width);
    for (int c = 0; c < num_classes; ++c) {
        std::vector<double> t(static_cast<std::size_t>(channels) * height * width);
        const double theta = 2.0 * kPi * c / num_classes;
        const double bx = cx0 + radius * std::cos(theta);
        const double by = cy0 + radius * std::sin(theta);
        const double fx = 1.0 + static_cast<double>(c % 3);
        const double fy = 1.0 + static_cast<double>((c / 3) % 3);
        const double phase = 2.0 * kPi * c / num_classes;
        for (int ch = 0; ch < channels; ++ch) {
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                    const double blob = std::exp(-d2 / (2.0 * sigma * sigma));
                    const double wave = std::sin(2.0 * kPi * fx * x / width + phase + ch * kPi / 2) *
                                        std::cos(2.0 * kPi * fy * y / height);
                    double v = 0.45 * blob + 0.22 * wave + 0.12 + 0.03 * c;
                    t[static_cast<std::size_t>((ch * height + y) * width + x)] =
                        std::clamp(v, 0.0, 1.0);
                }
            }
        }
        templates.push_back(std::move(t));
    }
    return templates;
}

Dataset gen_synthetic(int num_classes, int per_class, int channels, int height, int width,
                      double difficulty, std::uint64_t seed) {
    require(per_class >= 1, "gen_synthetic: per_class must be >= 1");
    require(num_classes >= 2, "gen_synthetic: need at least 2 classes");
    require(height >= 8 && width >= 8,
            "gen_synthetic: image too small for templates (min 8x8), got " +
                std::to_string(height) + "x" + std::to_string(width));
    require(difficulty >= 0.0, "gen_synthetic: difficulty must be >= 0");

    const auto templates = synthetic_templates(num_classes, channels, height, width);
    const std::int64_t n = static_cast<std::int64_t>(num_classes) * per_class;
    const std::int64_t px = static_cast<std::int64_t>(channels) * height * width;

    Dataset ds;
    ds.num_classes = num_classes;
    ds.features = Tensor({n, channels, height, width});
    ds.labels.resize(static_cast<std::size_t>(n));
    auto fd = ds.features.data();

    Rng root(seed);
    std::int64_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        Rng cls = root.derive("class", static_cast<std::uint64_t>(c));
        const auto& t = templates[static_cast<std::size_t>(c)];
        for (int s = 0; s < per_class; ++s) {
            double* out = &fd[static_cast<std::size_t>(row * px)];
            for (std::int64_t p = 0; p < px; ++p) {
                const double noise = difficulty == 0.0 ? 0.0 : difficulty * 0.8 * cls.normal();
                out[p] = std::clamp(t[static_cast<std::size_t>(p)] + noise, 0.0, 1.0);
            }
            ds.labels[static_cast<std::size_t>(row)] = c;
            ++row;
        }
    }
    return ds;
}

Dataset load_raw_images(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imf(images_path, std::ios::binary);
    if (!imf.good()) throw std::runtime_error("cannot open '" + images_path + "'");
    const std::uint32_t im_magic = read_u32_be(imf, images_path);
    require(im_magic == 2051u, "'" + images_path + "': bad image magic " + std::to_string(im_magic));
    const std::uint32_t n = read_u32_be(imf, images_path);
    const std::uint32_t h = read_u32_be(imf, images_path);
    const std::uint32_t w = read_u32_be(imf, images_path);

    std::ifstream lbf(labels_path, std::ios::binary);
    if (!lbf.good()) throw std::runtime_error("cannot open '" + labels_path + "'");
    const std::uint32_t lb_magic = read_u32_be(lbf, labels_path);
    require(lb_magic == 2049u, "'" + labels_path + "': bad label magic " + std::to_string(lb_magic));
    const std::uint32_t ln = read_u32_be(lbf, labels_path);
    require(ln == n, "label count " + std::to_string(ln) + " != image count " + std::to_string(n));

    Dataset ds;
    ds.features = Tensor({static_cast<std::int64_t>(n), 1, static_cast<std::int64_t>(h),
                          static_cast<std::int64_t>(w)});
    ds.labels.resize(n);
    auto fd = ds.features.data();
    std::vector<unsigned char> rowbuf(static_cast<std::size_t>(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        imf.read(reinterpret_cast<char*>(rowbuf.data()), static_cast<std::streamsize>(rowbuf.size()));
        if (!imf.good()) {
            throw std::runtime_error("'" + images_path + "': truncated at byte offset " +
                                     std::to_string(16 + static_cast<long long>(i) *
                                                             static_cast<long long>(rowbuf.size())));
        }
        for (std::size_t p = 0; p < rowbuf.size(); ++p) {
            fd[static_cast<std::size_t>(i) * rowbuf.size() + p] = rowbuf[p] / 255.0;
        }
        unsigned char lab = 0;
        lbf.read(reinterpret_cast<char*>(&lab), 1);
        if (!lbf.good()) {
            throw std::runtime_error("'" + labels_path + "': truncated at byte offset " +
                                     std::to_string(8 + static_cast<long long>(i)));
        }
        ds.labels[i] = lab;
    }
    int max_label = 0;
    for (auto l : ds.labels) max_label = std::max(max_label, static_cast<int>(l));
    ds.num_classes = max_label + 1;
    return ds;
}

void save_raw_images(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
    require(ds.channels() == 1, "save_raw_images: single-channel only");
    std::ofstream imf(images_path, std::ios::binary);
    require(imf.good(), "cannot open '" + images_path + "' for writing");
    write_u32_be(imf, 2051u);
    write_u32_be(imf, static_cast<std::uint32_t>(ds.size()));
    write_u32_be(imf, static_cast<std::uint32_t>(ds.height()));
    write_u32_be(imf, static_cast<std::uint32_t>(ds.width()));
    auto fd = ds.features.data();
    for (double v : fd) {
        const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
        imf.write(reinterpret_cast<const char*>(&b), 1);
    }
    std::ofstream lbf(labels_path, std::ios::binary);
    require(lbf.good(), "cannot open '" + labels_path + "' for writing");
    write_u32_be(lbf, 2049u);
    write_u32_be(lbf, static_cast<std::uint32_t>(ds.size()));
    for (auto l : ds.labels) {
        const unsigned char b = static_cast<unsigned char>(l);
        lbf.write(reinterpret_cast<const char*>(&b), 1);
    }
}

std::vector<DevicePartition> partition(const Dataset& ds, const PartitionSpec& spec,
                                       int num_devices, std::uint64_t seed) {
    require(num_devices >= 1, "partition: num_devices must be >= 1");
    const std::int64_t n = ds.size();
    require(n > 0, "partition: empty dataset");

    std::vector<DevicePartition> parts(static_cast<std::size_t>(num_devices));
    for (int k = 0; k < num_devices; ++k) parts[static_cast<std::size_t>(k)].device_id = k;
    Rng root = Rng(seed).derive("partition");

    if (spec.kind == PartitionSpec::Kind::label_shards) {
        require(!spec.groups.empty(), "partition: label_shards needs groups");
        std::vector<int> device_group(static_cast<std::size_t>(num_devices), -1);
        for (std::size_t g = 0; g < spec.groups.size(); ++g) {
            for (int d : spec.groups[g].devices) {
                require(d >= 0 && d < num_devices,
                        "partition: group device " + std::to_string(d) + " out of range");
                require(device_group[static_cast<std::size_t>(d)] < 0,
                        "partition: device " + std::to_string(d) + " in two groups");
                device_group[static_cast<std::size_t>(d)] = static_cast<int>(g);
            }
        }
        for (int d = 0; d < num_devices; ++d) {
            require(device_group[static_cast<std::size_t>(d)] >= 0,
                    "partition: device " + std::to_string(d) + " not covered by any group");
        }
        std::vector<int> class_group(static_cast<std::size_t>(ds.num_classes), -1);
        for (std::size_t g = 0; g < spec.groups.size(); ++g) {
            for (int c : spec.groups[g].classes) {
                require(c >= 0 && c < ds.num_classes,
                        "partition: group class " + std::to_string(c) + " out of range");
                require(class_group[static_cast<std::size_t>(c)] < 0,
                        "partition: class " + std::to_string(c) + " in two groups");
                class_group[static_cast<std::size_t>(c)] = static_cast<int>(g);
            }
        }
        for (std::size_t g = 0; g < spec.groups.size(); ++g) {
            std::vector<std::int64_t> pool;
            for (std::int64_t i = 0; i < n; ++i) {
                if (class_group[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])] ==
                    static_cast<int>(g))
                    pool.push_back(i);
            }
            Rng gr = root.derive("group", g);
            gr.shuffle(pool);
            const auto& devs = spec.groups[g].devices;
            for (std::size_t idx = 0; idx < pool.size(); ++idx) {
                const int d = devs[idx % devs.size()];
                parts[static_cast<std::size_t>(d)].train.push_back(pool[idx]);
            }
            for (int d : devs) {
                parts[static_cast<std::size_t>(d)].tag = "group" + std::to_string(g);
            }
        }
    } else if (spec.kind == PartitionSpec::Kind::dirichlet) {
        require(spec.concentration > 0.0, "partition: dirichlet concentration must be > 0");
        for (int c = 0; c < ds.num_classes; ++c) {
            Rng cr = root.derive("class", static_cast<std::uint64_t>(c));
            const auto props = cr.dirichlet(spec.concentration, num_devices);
            for (std::int64_t i = 0; i < n; ++i) {
                if (ds.labels[static_cast<std::size_t>(i)] != c) continue;
                const int d = cr.categorical(props);
                parts[static_cast<std::size_t>(d)].train.push_back(i);
            }
        }
    } else {  // iid
        std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        root.shuffle(pool);
        for (std::size_t idx = 0; idx < pool.size(); ++idx) {
            parts[idx % static_cast<std::size_t>(num_devices)].train.push_back(pool[idx]);
        }
    }

    if (spec.kind != PartitionSpec::Kind::label_shards) {
        for (int k = 0; k < num_devices; ++k) {
            parts[static_cast<std::size_t>(k)].tag =
                static_cast<std::size_t>(k) < spec.tags.size()
                    ? spec.tags[static_cast<std::size_t>(k)]
                    : "all";
        }
    }

    std::int64_t assigned = 0;
    for (const auto& p : parts) {
        if (p.train.empty()) {
            throw std::runtime_error("partition: device " + std::to_string(p.device_id) +
                                     " received zero samples (retry with a new seed)");
        }
        assigned += static_cast<std::int64_t>(p.train.size());
    }
    require(assigned == n, "partition: sample conservation violated");
    for (auto& p : parts) std::sort(p.train.begin(), p.train.end());
    return parts;
}

DevicePartition split_train_val_test(const DevicePartition& part, double val_fraction,
                                     double test_fraction, std::uint64_t seed,
                                     bool search_enabled) {
    require(val_fraction >= 0.0 && test_fraction >= 0.0 &&
                val_fraction + test_fraction < 1.0,
            "split: fractions must be >= 0 and sum below 1");
    DevicePartition out;
    out.device_id = part.device_id;
    out.tag = part.tag;

    std::vector<std::int64_t> pool = part.train;
    pool.insert(pool.end(), part.val.begin(), part.val.end());
    pool.insert(pool.end(), part.test.begin(), part.test.end());
    std::sort(pool.begin(), pool.end());
    Rng r = Rng(seed).derive("split", static_cast<std::uint64_t>(part.device_id));
    r.shuffle(pool);

    const auto n = static_cast<std::int64_t>(pool.size());
    const auto n_val = static_cast<std::int64_t>(std::llround(val_fraction * static_cast<double>(n)));
    const auto n_test =
        static_cast<std::int64_t>(std::llround(test_fraction * static_cast<double>(n)));
    require(n_val + n_test <= n, "split: fractions leave no training data");
    if (search_enabled && val_fraction > 0.0) {
        require(n_val > 0, "split: validation set empty while architecture search is enabled "
                           "(device " + std::to_string(part.device_id) + ")");
    }
    out.val.assign(pool.begin(), pool.begin() + n_val);
    out.test.assign(pool.begin() + n_val, pool.begin() + n_val + n_test);
    out.train.assign(pool.begin() + n_val + n_test, pool.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

void save_dataset_cache(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open '" + path + "' for writing");
    const char magic[8] = {'F', 'D', 'N', 'S', 'D', 'A', 'T', '1'};
    os.write(magic, 8);
    const std::int64_t header[6] = {1, ds.size(), ds.channels(), ds.height(), ds.width(),
                                    ds.num_classes};
    os.write(reinterpret_cast<const char*>(header), sizeof(header));
    auto fd = ds.features.data();
    std::vector<float> f32(fd.size());
    for (std::size_t i = 0; i < fd.size(); ++i) f32[i] = static_cast<float>(fd[i]);
    os.write(reinterpret_cast<const char*>(f32.data()),
             static_cast<std::streamsize>(f32.size() * sizeof(float)));
    std::vector<std::int32_t> labs(ds.labels.size());
    for (std::size_t i = 0; i < labs.size(); ++i) labs[i] = static_cast<std::int32_t>(ds.labels[i]);
    os.write(reinterpret_cast<const char*>(labs.data()),
             static_cast<std::streamsize>(labs.size() * sizeof(std::int32_t)));
}

Dataset load_dataset_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw std::runtime_error("cannot open dataset cache '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    require(is.good() && std::memcmp(magic, "FDNSDAT1", 8) == 0,
            "'" + path + "': not a dataset cache");
    std::int64_t header[6];
    is.read(reinterpret_cast<char*>(header), sizeof(header));
    require(is.good() && header[0] == 1, "'" + path + "': unsupported cache version");
    const std::int64_t n = header[1], c = header[2], h = header[3], w = header[4];
    Dataset ds;
    ds.num_classes = static_cast<int>(header[5]);
    ds.features = Tensor({n, c, h, w});
    std::vector<float> f32(static_cast<std::size_t>(n * c * h * w));
    is.read(reinterpret_cast<char*>(f32.data()),
            static_cast<std::streamsize>(f32.size() * sizeof(float)));
    require(is.good(), "'" + path + "': truncated feature block");
    auto fd = ds.features.data();
    for (std::size_t i = 0; i < f32.size(); ++i) fd[i] = static_cast<double>(f32[i]);
    std::vector<std::int32_t> labs(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(labs.data()),
            static_cast<std::streamsize>(labs.size() * sizeof(std::int32_t)));
    require(is.good(), "'" + path + "': truncated label block");
    ds.labels.assign(labs.begin(), labs.end());
    return ds;
}

void save_partition_manifest(const std::vector<DevicePartition>& parts, std::uint64_t seed,
                             const std::string& path) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["devices"] = nlohmann::ordered_json::array();
    for (const auto& p : parts) {
        nlohmann::ordered_json d;
        d["device_id"] = p.device_id;
        d["tag"] = p.tag;
        d["train"] = p.train;
        d["val"] = p.val;
        d["test"] = p.test;
        j["devices"].push_back(std::move(d));
    }
    std::ofstream os(path);
    require(os.good(), "cannot open '" + path + "' for writing");
    os << j.dump(2) << '\n';
}

std::vector<DevicePartition> load_partition_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw std::runtime_error("cannot open partition manifest '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(is);
    std::vector<DevicePartition> parts;
    for (const auto& d : j.at("devices")) {
        DevicePartition p;
        p.device_id = d.at("device_id").get<int>();
        p.tag = d.at("tag").get<std::string>();
        p.train = d.at("train").get<std::vector<std::int64_t>>();
        p.val = d.at("val").get<std::vector<std::int64_t>>();
        p.test = d.at("test").get<std::vector<std::int64_t>>();
        parts.push_back(std::move(p));
    }
    return parts;
}

std::pair<Tensor, std::vector<std::int64_t>> make_batch(const Dataset& ds,
                                                        std::span<const std::int64_t> indices) {
    require(!indices.empty(), "make_batch: empty index list");
    const std::int64_t px =
        static_cast<std::int64_t>(ds.channels()) * ds.height() * ds.width();
    Tensor batch({static_cast<std::int64_t>(indices.size()), ds.channels(), ds.height(),
                  ds.width()});
    auto bd = batch.data();
    auto fd = ds.features.data();
    std::vector<std::int64_t> labels(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const std::int64_t i = indices[r];
        require(i >= 0 && i < ds.size(), "make_batch: index out of range");
        std::copy(&fd[static_cast<std::size_t>(i * px)], &fd[static_cast<std::size_t>((i + 1) * px)],
                  &bd[r * static_cast<std::size_t>(px)]);
        labels[r] = ds.labels[static_cast<std::size_t>(i)];
    }
    return {std::move(batch), std::move(labels)};
}

}  // namespace fdnas
