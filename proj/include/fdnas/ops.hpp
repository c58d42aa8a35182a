// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fdnas/tape.hpp"
#include "fdnas/tensor.hpp"

namespace fdnas {

// Attribute map for apply_primitive. Typed helpers below are what the rest of
// the code uses; the generic entry point backs the CLI/bindings surface.
struct Attrs {
    std::map<std::string, double> scalars;
    std::vector<std::int64_t> labels;  // softmax_cross_entropy targets

    double get(const std::string& key, double fallback) const {
        auto it = scalars.find(key);
        return it == scalars.end() ? fallback : it->second;
    }
};

extern const std::vector<std::string> kPrimitiveKinds;

Tensor apply_primitive(const std::string& kind, std::span<const Tensor> inputs,
                       const Attrs& attrs, Tape* tape = nullptr);

// x[B,Ci] * w[Co,Ci]^T + b[Co] -> [B,Co]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape);

// NCHW, odd kernel, symmetric same-padding k/2, stride in {1,2}.
// w[Co,Ci,k,k]; bias may be null.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, Tape* tape);

// w[C,1,k,k]; per-channel convolution, same padding, stride in {1,2}.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride, Tape* tape);

Tensor relu6(const Tensor& x, Tape* tape);

struct BatchNormOpts {
    bool training = true;
    bool update_running_stats = true;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Per-channel batch norm over NCHW. Training mode normalizes with batch
// statistics and (optionally) folds them into running_mean/var in place;
// eval mode uses the stored running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, const BatchNormOpts& opts,
                  Tape* tape);

// [B,C,H,W] -> [B,C]
Tensor global_avg_pool(const Tensor& x, Tape* tape);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape);

// y = c * x. When grad_sink is set, backward adds dL/dc = <dL/dy, x> into it;
// that is how mixture forwards expose per-candidate gate gradients.
Tensor scale(const Tensor& x, double c, Tape* tape,
             std::shared_ptr<double> grad_sink = nullptr);

// [B, ...] -> [B, prod(...)] (shares storage, no copy)
Tensor flatten(const Tensor& x, Tape* tape);

// Mean over the batch of -log softmax(logits)[label]. Scalar output, >= 0.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels,
                             Tape* tape);

// Fraction of argmax(logits) == label (ties break to lowest index).
double accuracy(const Tensor& logits, std::span<const std::int64_t> labels);

// Central differences (f(x+eps e_i) - f(x-eps e_i)) / 2 eps per coordinate.
// Independent of the tape machinery; this is the gradient oracle.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double eps);

}  // namespace fdnas
