// SPDX-License-Identifier: Apache-2.0
#include "fdnas/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace fdnas {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

std::uint64_t fnv1a(std::uint64_t h, std::string_view bytes) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

std::uint64_t fnv1a_u64(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= kFnvPrime;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), state_(seed) {
    // Warm the state so nearby seeds do not share prefixes.
    (void)splitmix64(state_);
}

Rng Rng::derive(std::string_view name) const {
    std::uint64_t h = fnv1a(fnv1a_u64(kFnvOffset, seed_), name);
    return Rng(h);
}

Rng Rng::derive(std::string_view name, std::uint64_t index) const {
    std::uint64_t h = fnv1a_u64(fnv1a(fnv1a_u64(kFnvOffset, seed_), name), index);
    return Rng(h);
}

std::uint64_t Rng::next_u64() {
    return splitmix64(state_);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

double Rng::gamma(double shape) {
    if (!(shape > 0.0)) {
        throw std::invalid_argument("gamma: shape must be > 0");
    }
    if (shape < 1.0) {
        double u = 0.0;
        do {
            u = uniform();
        } while (u <= 0.0);
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = 0.0;
        do {
            u = uniform();
        } while (u <= 0.0);
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
            return d * v;
        }
    }
}

std::vector<double> Rng::dirichlet(double concentration, int n) {
    if (!(concentration > 0.0) || n < 1) {
        throw std::invalid_argument("dirichlet: concentration > 0 and n >= 1 required");
    }
    std::vector<double> out(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (auto& v : out) {
        v = gamma(concentration);
        sum += v;
    }
    for (auto& v : out) v /= sum;
    return out;
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    if (n == 0) {
        throw std::invalid_argument("next_below: n must be >= 1");
    }
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

int Rng::categorical(std::span<const double> probs) {
    if (probs.empty()) {
        throw std::invalid_argument("categorical: empty probability vector");
    }
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
}

}  // namespace fdnas
