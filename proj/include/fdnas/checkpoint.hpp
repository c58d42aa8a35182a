// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "json.hpp"

#include "fdnas/supernet.hpp"

namespace fdnas {

struct CheckpointMeta {
    std::uint32_t version = 1;
    std::string kind = "supernet";  // or "compact"
    std::uint64_t seed = 0;
    std::int32_t round = 0;
    std::uint64_t space_hash = 0;
};

// Versioned binary: magic, header, parameter id table, flat 64-bit data.
// Byte-deterministic for a given parameter map.
void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const ParamMap& params);
std::pair<CheckpointMeta, ParamMap> load_checkpoint(const std::string& path);

// FNV-64 of the file bytes, as hex (checkpoint provenance ids).
std::string file_hash_hex(const std::string& path);

nlohmann::ordered_json arch_to_json(const DerivedArchitecture& arch);
DerivedArchitecture arch_from_json(const nlohmann::json& j);
void save_arch(const DerivedArchitecture& arch, const std::string& path);
DerivedArchitecture load_arch(const std::string& path);

}  // namespace fdnas
