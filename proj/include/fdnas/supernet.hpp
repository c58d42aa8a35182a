// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdnas/ops.hpp"
#include "fdnas/optim.hpp"
#include "fdnas/rng.hpp"
#include "fdnas/tape.hpp"
#include "fdnas/tensor.hpp"

namespace fdnas {

using ParamMap = std::map<std::string, std::vector<double>>;

// Gated softmax over architecture parameters.
std::vector<double> compute_probs(std::span<const double> alpha);

// One-hot draw over the candidate simplex. Rejects p off the simplex > 1e-9.
int sample_gate(std::span<const double> probs, Rng& rng);

struct PairSample {
    int i = 0;
    int j = 0;
    std::array<double, 2> q{0.0, 0.0};  // pair-renormalized probabilities
};

// Two distinct indices drawn without replacement proportional to p.
PairSample sample_active_pair(std::span<const double> probs, Rng& rng);

// d(loss)/d(alpha_n) = sum_n' dl_db[n'] p[n'] (delta_{nn'} - p[n]).
std::vector<double> arch_gradient(std::span<const double> dl_db, std::span<const double> probs);

// ---------------------------------------------------------------------------

struct SearchSpaceConfig {
    int layers = 8;
    int image_channels = 1;
    int image_h = 10;
    int image_w = 10;
    int stem_channels = 4;
    int num_classes = 10;
    std::vector<int> downsample_layers = {2, 5};
    int width_mult = 2;
    std::vector<std::string> candidates = {"mbconv_e3_k3", "mbconv_e3_k5", "mbconv_e6_k3",
                                           "identity", "zero"};

    struct LayerPlan {
        int in_ch = 0;
        int out_ch = 0;
        int stride = 1;
        int in_h = 0, in_w = 0;
        int out_h = 0, out_w = 0;
    };
    std::vector<LayerPlan> layer_plan() const;
    // Candidate names legal on one layer (identity drops off shape-changing
    // layers).
    std::vector<std::string> layer_candidates(int layer_index) const;
    std::uint64_t hash() const;
    std::string canonical() const;
};

struct CandidateSpec {
    enum class Kind { mbconv, identity, zero };
    Kind kind = Kind::zero;
    int expansion = 0;  // mbconv only, in {1,3,6}
    int kernel = 0;     // mbconv only, in {3,5}

    static CandidateSpec parse(const std::string& name);
    std::string name() const;
};

struct ConvBn {
    Parameter w;
    Parameter gamma, beta, run_mean, run_var;
};

struct ForwardOpts {
    bool training = true;
    bool update_running_stats = true;
};

// One candidate operation on a layer edge: an MBConv block (1x1 expand ->
// depthwise -> 1x1 project, batch-normed, residual when shapes permit),
// identity, or zero.
class OperationCandidate {
public:
    OperationCandidate(const CandidateSpec& spec, int in_ch, int out_ch, int stride,
                       const std::string& prefix, Rng init);

    Tensor forward(const Tensor& x, const ForwardOpts& opts, Tape* tape);
    void collect_params(std::vector<Parameter*>& out);

    const CandidateSpec& spec() const { return spec_; }
    std::string name() const { return spec_.name(); }
    int stride() const { return stride_; }
    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }
    // Multiply-add count for one sample at the given input spatial size.
    std::int64_t flops(int in_h, int in_w) const;

private:
    CandidateSpec spec_;
    int in_ch_, out_ch_, stride_;
    // mbconv parameters (unused for identity/zero)
    bool has_expand_ = false;
    ConvBn expand_, dw_, project_;
};

// Gate record from one training forward. For arch steps the pair's gate
// gradients d(loss)/d(b_n) land in dl_db during backward.
struct GateSample {
    int layer_index = 0;
    bool pair_mode = false;
    int active = 0;  // active candidate index (within all N)
    PairSample pair;
    std::vector<int> mask;  // 1 for candidates that executed
    std::uint64_t serial = 0;
    std::shared_ptr<std::array<double, 2>> dl_db;  // filled by backward (pair mode)
};

class MixedLayer {
public:
    MixedLayer(int index, const SearchSpaceConfig::LayerPlan& plan,
               const std::vector<std::string>& candidate_names, Rng init);

    int num_candidates() const { return static_cast<int>(candidates_.size()); }
    std::vector<double> probs() const;
    Parameter& alpha() { return alpha_; }
    const Parameter& alpha() const { return alpha_; }
    OperationCandidate& candidate(int n) { return candidates_[static_cast<std::size_t>(n)]; }
    const OperationCandidate& candidate(int n) const {
        return candidates_[static_cast<std::size_t>(n)];
    }
    int index() const { return index_; }
    std::uint64_t arch_serial() const { return arch_serial_; }
    void bump_arch_serial() { ++arch_serial_; }

    void collect_params(std::vector<Parameter*>& out);

private:
    int index_;
    std::vector<OperationCandidate> candidates_;
    Parameter alpha_;
    std::uint64_t arch_serial_ = 0;
};

struct RescaleResult {
    double shift = 0.0;
    bool clamped = false;
};

// Adds one constant to the sampled pair's alphas so their joint probability
// mass returns to its pre-update value; the other candidates keep their
// relative probabilities. Closed-form in log space.
RescaleResult rescale_alphas(MixedLayer& layer, int i, int j, double pre_update_pair_mass);

// Restricted two-path architecture update: arch_gradient over the
// pair-renormalized 2-way distribution, Adam on the two sampled alphas,
// then rescale. Rejects samples from a stale step (serial mismatch).
RescaleResult pair_arch_step(MixedLayer& layer, const std::array<double, 2>& dl_db_pair,
                             const GateSample& gate, OptimizerState& adam);

enum class StepMode { weight_step, arch_step };

struct MixedLayerInfo {
    std::vector<double> probs;
    std::vector<std::shared_ptr<double>> dl_dp;  // one sink per candidate
};

struct DerivedArchitecture {
    struct Choice {
        int layer_index = 0;
        int candidate = 0;
        std::string kind;
        int expansion = 0;
        int kernel = 0;
        int stride = 1;
        int in_ch = 0;
        int out_ch = 0;
        bool replaced_zero = false;  // zero won argmax on the single path
    };
    std::vector<Choice> choices;
    std::string checkpoint_id;
    std::string alpha_hash;
    SearchSpaceConfig space;
};

// Over-parameterized chain network: fixed stem, L mixed layers, pooled
// classifier head. One instance is confined to one device update at a time.
class SuperNet {
public:
    explicit SuperNet(const SearchSpaceConfig& cfg, Rng init);

    const SearchSpaceConfig& config() const { return cfg_; }
    int num_layers() const { return static_cast<int>(layers_.size()); }
    MixedLayer& layer(int i) { return layers_[static_cast<std::size_t>(i)]; }
    const MixedLayer& layer(int i) const { return layers_[static_cast<std::size_t>(i)]; }

    // Single-path (weight_step) or two-path (arch_step) gated forward.
    Tensor forward_train(const Tensor& batch, StepMode mode, Rng& rng, Tape& tape,
                         std::vector<GateSample>& gates, const ForwardOpts& opts);
    // Probability-weighted relaxation: every candidate runs, outputs mix with
    // weights p. Differentiable in alpha through the returned sinks.
    Tensor forward_mixed(const Tensor& batch, Tape& tape, std::vector<MixedLayerInfo>& info,
                         const ForwardOpts& opts);
    // Eval-mode forward with running statistics, gates pinned to argmax.
    Tensor forward_eval(const Tensor& batch);

    // Candidate executions per layer during the last forward.
    const std::vector<int>& activation_counts() const { return activation_counts_; }

    std::vector<Parameter*> params();
    std::vector<Parameter*> weight_params();  // trainable, excluding alpha
    std::vector<Parameter*> alpha_params();
    void drop_all_grads();

    ConvBn& stem_block() { return stem_; }
    Parameter& head_weight() { return head_w_; }
    Parameter& head_bias() { return head_b_; }

    ParamMap snapshot_params() const;
    void load_params(const ParamMap& values);

    std::string alpha_hash() const;

private:
    Tensor stem_forward(const Tensor& x, const ForwardOpts& opts, Tape* tape);
    Tensor head_forward(const Tensor& x, Tape* tape);

    SearchSpaceConfig cfg_;
    ConvBn stem_;
    std::vector<MixedLayer> layers_;
    Parameter head_w_, head_b_;
    std::vector<int> activation_counts_;
};

// Keeps the argmax-probability candidate per layer (ties to the lowest
// index). A winning zero on the single chain path is replaced by the
// runner-up and flagged.
DerivedArchitecture derive_normal_net(const SuperNet& net, const std::string& checkpoint_id = "");

// Compact network assembled from a derived architecture.
class CompactNet {
public:
    // Weights freshly initialized (from-scratch fine-tuning).
    CompactNet(const DerivedArchitecture& arch, Rng init);
    // Weights copied from the supernet the architecture was derived from.
    CompactNet(const DerivedArchitecture& arch, const SuperNet& source);

    Tensor forward(const Tensor& batch, const ForwardOpts& opts, Tape* tape);
    Tensor forward_eval(const Tensor& batch);

    std::vector<Parameter*> params();
    std::vector<Parameter*> weight_params();
    void drop_all_grads();
    ParamMap snapshot_params() const;
    void load_params(const ParamMap& values);

    const DerivedArchitecture& arch() const { return arch_; }
    std::int64_t param_count() const;
    std::int64_t flops() const;  // multiply-adds for one sample

private:
    DerivedArchitecture arch_;
    ConvBn stem_;
    std::vector<OperationCandidate> blocks_;
    Parameter head_w_, head_b_;
};

std::int64_t count_params(const std::vector<const Parameter*>& params);

}  // namespace fdnas
