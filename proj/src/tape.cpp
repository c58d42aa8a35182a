// SPDX-License-Identifier: Apache-2.0
#include "fdnas/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace fdnas {

const std::vector<double>& Gradients::at(const std::string& id) const {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw std::invalid_argument("no gradient for parameter '" + id + "'");
    return it->second;
}

Gradients backward(Tape& tape, Tensor& loss, const std::vector<Parameter*>& params) {
    require(loss.numel() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
    require(!tape.empty(), "backward: tape is empty");

    loss.grad()[0] = 1.0;
    tape.run_backward();

    // Grad buffers are allocated lazily by the tape closures, so a parameter
    // holds one after backward iff the loss reached it. Callers drop_grad()
    // before each forward to keep that signal meaningful across steps.
    Gradients out;
    for (Parameter* p : params) {
        auto& g = out.by_id[p->id];
        if (p->value.has_grad()) {
            auto gs = p->value.grad();
            g.assign(gs.begin(), gs.end());
            for (double v : g) {
                if (std::isnan(v)) {
                    tape.clear();
                    throw std::runtime_error("backward: NaN gradient for parameter '" + p->id +
                                             "'");
                }
            }
            out.reached.insert(p->id);
        } else {
            g.assign(static_cast<std::size_t>(p->value.numel()), 0.0);
        }
    }
    tape.clear();
    return out;
}

}  // namespace fdnas
