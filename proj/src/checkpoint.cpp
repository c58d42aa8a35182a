// SPDX-License-Identifier: Apache-2.0
#include "fdnas/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fdnas {

namespace {

constexpr char kMagic[8] = {'F', 'D', 'N', 'S', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is.good()) throw std::runtime_error("checkpoint '" + path + "': truncated");
    return v;
}

void write_string(std::ofstream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& is, const std::string& path) {
    const auto n = read_pod<std::uint32_t>(is, path);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is.good()) throw std::runtime_error("checkpoint '" + path + "': truncated");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const ParamMap& params) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot open '" + path + "' for writing");
    os.write(kMagic, 8);
    write_pod(os, meta.version);
    write_string(os, meta.kind);
    write_pod(os, meta.seed);
    write_pod(os, meta.round);
    write_pod(os, meta.space_hash);
    write_pod<std::uint64_t>(os, params.size());
    for (const auto& [id, values] : params) {
        write_string(os, id);
        write_pod<std::uint64_t>(os, values.size());
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
    require(os.good(), "write failed for '" + path + "'");
}

std::pair<CheckpointMeta, ParamMap> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is.good() || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("'" + path + "' is not a checkpoint file");
    }
    CheckpointMeta meta;
    meta.version = read_pod<std::uint32_t>(is, path);
    require(meta.version == 1, "checkpoint '" + path + "': unsupported version " +
                                   std::to_string(meta.version));
    meta.kind = read_string(is, path);
    meta.seed = read_pod<std::uint64_t>(is, path);
    meta.round = read_pod<std::int32_t>(is, path);
    meta.space_hash = read_pod<std::uint64_t>(is, path);
    const auto n = read_pod<std::uint64_t>(is, path);
    ParamMap params;
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string id = read_string(is, path);
        const auto len = read_pod<std::uint64_t>(is, path);
        std::vector<double> values(len);
        is.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(len * sizeof(double)));
        if (!is.good()) throw std::runtime_error("checkpoint '" + path + "': truncated");
        params.emplace(std::move(id), std::move(values));
    }
    return {meta, std::move(params)};
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw std::runtime_error("cannot open '" + path + "'");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        const auto n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!is) break;
    }
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

nlohmann::ordered_json arch_to_json(const DerivedArchitecture& arch) {
    nlohmann::ordered_json j;
    j["format"] = "fdnas-arch-v1";
    j["provenance"]["checkpoint_id"] = arch.checkpoint_id;
    j["provenance"]["alpha_hash"] = arch.alpha_hash;
    nlohmann::ordered_json space;
    space["layers"] = arch.space.layers;
    space["image_channels"] = arch.space.image_channels;
    space["image_h"] = arch.space.image_h;
    space["image_w"] = arch.space.image_w;
    space["stem_channels"] = arch.space.stem_channels;
    space["num_classes"] = arch.space.num_classes;
    space["downsample_layers"] = arch.space.downsample_layers;
    space["width_mult"] = arch.space.width_mult;
    space["candidates"] = arch.space.candidates;
    space["hash"] = arch.space.hash();
    j["space"] = std::move(space);
    j["layers"] = nlohmann::ordered_json::array();
    for (const auto& c : arch.choices) {
        nlohmann::ordered_json lc;
        lc["layer_index"] = c.layer_index;
        lc["kind"] = c.kind;
        lc["expansion"] = c.expansion;
        lc["kernel"] = c.kernel;
        lc["stride"] = c.stride;
        lc["in_channels"] = c.in_ch;
        lc["out_channels"] = c.out_ch;
        lc["candidate"] = c.candidate;
        lc["replaced_zero"] = c.replaced_zero;
        j["layers"].push_back(std::move(lc));
    }
    return j;
}

DerivedArchitecture arch_from_json(const nlohmann::json& j) {
    require(j.value("format", std::string()) == "fdnas-arch-v1",
            "architecture JSON: unknown format");
    DerivedArchitecture arch;
    arch.checkpoint_id = j.at("provenance").value("checkpoint_id", std::string());
    arch.alpha_hash = j.at("provenance").value("alpha_hash", std::string());
    const auto& s = j.at("space");
    arch.space.layers = s.at("layers").get<int>();
    arch.space.image_channels = s.at("image_channels").get<int>();
    arch.space.image_h = s.at("image_h").get<int>();
    arch.space.image_w = s.at("image_w").get<int>();
    arch.space.stem_channels = s.at("stem_channels").get<int>();
    arch.space.num_classes = s.at("num_classes").get<int>();
    arch.space.downsample_layers = s.at("downsample_layers").get<std::vector<int>>();
    arch.space.width_mult = s.at("width_mult").get<int>();
    arch.space.candidates = s.at("candidates").get<std::vector<std::string>>();
    if (s.contains("hash")) {
        require(s.at("hash").get<std::uint64_t>() == arch.space.hash(),
                "architecture JSON: search-space hash mismatch");
    }
    for (const auto& lc : j.at("layers")) {
        DerivedArchitecture::Choice c;
        c.layer_index = lc.at("layer_index").get<int>();
        c.kind = lc.at("kind").get<std::string>();
        c.expansion = lc.at("expansion").get<int>();
        c.kernel = lc.at("kernel").get<int>();
        c.stride = lc.at("stride").get<int>();
        c.in_ch = lc.at("in_channels").get<int>();
        c.out_ch = lc.at("out_channels").get<int>();
        c.candidate = lc.at("candidate").get<int>();
        c.replaced_zero = lc.value("replaced_zero", false);
        arch.choices.push_back(c);
    }
    return arch;
}

void save_arch(const DerivedArchitecture& arch, const std::string& path) {
    std::ofstream os(path);
    require(os.good(), "cannot open '" + path + "' for writing");
    os << arch_to_json(arch).dump(2) << '\n';
}

DerivedArchitecture load_arch(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw std::runtime_error("cannot open architecture '" + path + "'");
    return arch_from_json(nlohmann::json::parse(is));
}

}  // namespace fdnas
