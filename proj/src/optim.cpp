// SPDX-License-Identifier: Apache-2.0
#include "fdnas/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fdnas {

OptimizerState OptimizerState::sgd(double lr, double momentum, double weight_decay) {
    OptimizerState s;
    s.kind = Kind::sgd_momentum;
    s.lr = lr;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1, double beta2, double eps) {
    OptimizerState s;
    s.kind = Kind::adam;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.weight_decay = 0.0;
    return s;
}

void sgd_momentum_step(const std::vector<Parameter*>& params, const Gradients& grads,
                       OptimizerState& state) {
    require(state.kind == OptimizerState::Kind::sgd_momentum,
            "sgd_momentum_step: state kind mismatch");
    for (Parameter* p : params) {
        auto it = grads.by_id.find(p->id);
        require(it != grads.by_id.end(), "sgd_momentum_step: missing grad for '" + p->id + "'");
        const auto& g = it->second;
        auto w = p->value.data();
        require(g.size() == w.size(), "sgd_momentum_step: grad size mismatch for '" + p->id + "'");
        auto& slot = state.slots[p->id];
        if (slot.m.empty()) slot.m.assign(w.size(), 0.0);
        slot.step += 1;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] + state.weight_decay * w[i];
            slot.m[i] = state.momentum * slot.m[i] + gi;
            w[i] -= state.lr * slot.m[i];
        }
    }
}

void adam_step(const std::vector<Parameter*>& params, const Gradients& grads,
               OptimizerState& state) {
    require(state.kind == OptimizerState::Kind::adam, "adam_step: state kind mismatch");
    for (Parameter* p : params) {
        auto it = grads.by_id.find(p->id);
        require(it != grads.by_id.end(), "adam_step: missing grad for '" + p->id + "'");
        const auto& g = it->second;
        auto w = p->value.data();
        require(g.size() == w.size(), "adam_step: grad size mismatch for '" + p->id + "'");
        auto& slot = state.slots[p->id];
        if (slot.m.empty()) {
            slot.m.assign(w.size(), 0.0);
            slot.v.assign(w.size(), 0.0);
        }
        slot.step += 1;
        const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(slot.step));
        const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(slot.step));
        for (std::size_t i = 0; i < w.size(); ++i) {
            slot.m[i] = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g[i];
            slot.v[i] = state.beta2 * slot.v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double cosine_lr(std::int64_t round, std::int64_t total_rounds, double lr0) {
    require(total_rounds >= 1, "cosine_lr: total_rounds must be >= 1");
    require(round >= 0 && round <= total_rounds,
            "cosine_lr: round " + std::to_string(round) + " outside [0, " +
                std::to_string(total_rounds) + "]");
    const double pi = 3.14159265358979323846;
    return lr0 * 0.5 *
           (1.0 + std::cos(pi * static_cast<double>(round) / static_cast<double>(total_rounds)));
}

}  // namespace fdnas
