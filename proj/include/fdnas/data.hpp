// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdnas/rng.hpp"
#include "fdnas/tensor.hpp"

namespace fdnas {

// Immutable after construction; partitions only reference indices into it.
struct Dataset {
    Tensor features;  // [N, C, H, W]
    std::vector<std::int64_t> labels;
    int num_classes = 0;

    std::int64_t size() const { return features.defined() ? features.dim(0) : 0; }
    int channels() const { return static_cast<int>(features.dim(1)); }
    int height() const { return static_cast<int>(features.dim(2)); }
    int width() const { return static_cast<int>(features.dim(3)); }
};

struct PartitionSpec {
    enum class Kind { label_shards, dirichlet, iid };
    struct Group {
        std::vector<int> classes;
        std::vector<int> devices;
    };

    Kind kind = Kind::label_shards;
    std::vector<Group> groups;     // label_shards only
    double concentration = 0.5;    // dirichlet only
    std::vector<std::string> tags;  // per-device tags for dirichlet/iid modes
};

struct DevicePartition {
    int device_id = 0;
    std::string tag;
    std::vector<std::int64_t> train;
    std::vector<std::int64_t> val;
    std::vector<std::int64_t> test;

    std::int64_t total() const {
        return static_cast<std::int64_t>(train.size() + val.size() + test.size());
    }
};

// Class-conditional procedural images: a per-class gaussian blob, a per-class
// frequency pattern, a brightness offset, and noise scaled by difficulty.
// Deterministic in the seed. difficulty 0 makes every sample equal to its
// class template.
Dataset gen_synthetic(int num_classes, int per_class, int channels, int height, int width,
                      double difficulty, std::uint64_t seed);

// Class templates used by gen_synthetic (the nearest-template oracle needs
// them independent of any classifier).
std::vector<std::vector<double>> synthetic_templates(int num_classes, int channels, int height,
                                                     int width);

// IDX-style magic-number binary pair (images + labels); pixels normalized to
// [0, 1].
Dataset load_raw_images(const std::string& images_path, const std::string& labels_path);
void save_raw_images(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path);

// Assigns every sample to exactly one device. Sample splits within a group
// (or proportions, for dirichlet) come from the seed. Throws if any device
// ends up empty.
std::vector<DevicePartition> partition(const Dataset& ds, const PartitionSpec& spec,
                                       int num_devices, std::uint64_t seed);

// Disjoint per-device train/val/test split; val must stay nonempty whenever
// architecture search is enabled.
DevicePartition split_train_val_test(const DevicePartition& part, double val_fraction,
                                     double test_fraction, std::uint64_t seed,
                                     bool search_enabled = true);

// Versioned binary dataset cache (32-bit floats on disk).
void save_dataset_cache(const Dataset& ds, const std::string& path);
Dataset load_dataset_cache(const std::string& path);

// Partition manifest JSON: per-device index arrays + tag + seed.
void save_partition_manifest(const std::vector<DevicePartition>& parts, std::uint64_t seed,
                             const std::string& path);
std::vector<DevicePartition> load_partition_manifest(const std::string& path);

// Gathers rows into a batch tensor plus labels.
std::pair<Tensor, std::vector<std::int64_t>> make_batch(const Dataset& ds,
                                                        std::span<const std::int64_t> indices);

}  // namespace fdnas
