// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fdnas/tensor.hpp"

namespace fdnas {

// One recorded primitive application. The closure owns the saved inputs and
// grad buffers it needs; running it accumulates into the input gradients.
struct TapeNode {
    std::string kind;
    std::function<void()> backward;
};

// Reverse-mode record of a single forward pass. Confined to the device update
// that created it; backward() visits nodes in exact reverse recording order.
class Tape {
public:
    void record(std::string kind, std::function<void()> backward_fn) {
        nodes_.push_back({std::move(kind), std::move(backward_fn)});
    }

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear() { nodes_.clear(); }

    void run_backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            it->backward();
        }
    }

private:
    std::vector<TapeNode> nodes_;
};

struct Gradients {
    // Parameter id -> gradient array (zeros when the loss did not reach it).
    std::map<std::string, std::vector<double>> by_id;
    // Ids whose parameters were actually touched by the backward pass.
    std::set<std::string> reached;

    const std::vector<double>& at(const std::string& id) const;
};

// Seeds d(loss)/d(loss) = 1, runs the tape in reverse, and collects gradients
// for the given parameters. The tape is consumed. Throws if the loss is not
// scalar, the tape is empty, or any produced gradient contains NaN.
Gradients backward(Tape& tape, Tensor& loss, const std::vector<Parameter*>& params);

}  // namespace fdnas
