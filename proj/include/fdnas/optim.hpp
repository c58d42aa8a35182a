// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fdnas/tape.hpp"
#include "fdnas/tensor.hpp"

namespace fdnas {

// Per-parameter optimizer buffers keyed by parameter id. One state object
// drives one parameter group (weights via momentum SGD, alphas via Adam).
struct OptimizerState {
    enum class Kind { sgd_momentum, adam };

    Kind kind = Kind::sgd_momentum;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;  // coupled into the gradient: g + wd * w
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    struct Slot {
        std::vector<double> m;  // momentum / first moment
        std::vector<double> v;  // second moment (adam only)
        std::int64_t step = 0;
    };
    std::map<std::string, Slot> slots;

    static OptimizerState sgd(double lr, double momentum, double weight_decay);
    static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                               double eps = 1e-8);
};

// v <- mu v + g + wd w;  w <- w - lr v
void sgd_momentum_step(const std::vector<Parameter*>& params, const Gradients& grads,
                       OptimizerState& state);

// Bias-corrected Adam. Weight decay is always 0 for this group (architecture
// parameters are trained without decay).
void adam_step(const std::vector<Parameter*>& params, const Gradients& grads,
               OptimizerState& state);

// lr0 * 0.5 * (1 + cos(pi * round / total_rounds)); round in [0, total_rounds]
double cosine_lr(std::int64_t round, std::int64_t total_rounds, double lr0);

}  // namespace fdnas
