// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace fdnas {

// Deterministic counter-based random stream. Every consumer derives a named
// child stream from one root seed, so results never depend on call order
// across components, threads, or platforms (no libc distributions involved).
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    // Child stream keyed by name (and optional index). Derivation uses the
    // stream's original seed, not its current state.
    Rng derive(std::string_view name) const;
    Rng derive(std::string_view name, std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();
    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    // Standard normal via Box-Muller (one value per call).
    double normal();
    // Gamma(shape, 1), Marsaglia-Tsang; shape > 0.
    double gamma(double shape);
    // Dirichlet(concentration) over n components.
    std::vector<double> dirichlet(double concentration, int n);
    // Uniform integer in [0, n), n >= 1.
    std::uint64_t next_below(std::uint64_t n);
    // Index drawn from a probability vector (CDF inversion).
    int categorical(std::span<const double> probs);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

}  // namespace fdnas
