// SPDX-License-Identifier: Apache-2.0
#include "fdnas/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fdnas {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

std::uint64_t fnv1a_bytes(std::uint64_t h, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= kFnvPrime;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

double logsumexp2(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

Parameter make_conv_weight(const std::string& id, int co, int ci, int k, Rng& root) {
    Parameter p;
    p.id = id;
    p.value = Tensor({co, ci, k, k});
    Rng r = root.derive(id);
    const double std = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    for (auto& v : p.value.data()) v = std * r.normal();
    return p;
}

ConvBn make_conv_bn(const std::string& prefix, int co, int ci, int k, Rng& root) {
    ConvBn cb;
    cb.w = make_conv_weight(prefix + ".conv.weight", co, ci, k, root);
    cb.gamma = {prefix + ".bn.gamma", Tensor::full({co}, 1.0), true};
    cb.beta = {prefix + ".bn.beta", Tensor::zeros({co}), true};
    cb.run_mean = {prefix + ".bn.running_mean", Tensor::zeros({co}), false};
    cb.run_var = {prefix + ".bn.running_var", Tensor::full({co}, 1.0), false};
    return cb;
}

Tensor conv_bn_relu(const Tensor& x, ConvBn& cb, int stride, bool relu, bool depthwise,
                    const ForwardOpts& opts, Tape* tape) {
    Tensor h = depthwise ? depthwise_conv2d(x, cb.w.value, stride, tape)
                         : conv2d(x, cb.w.value, nullptr, stride, tape);
    BatchNormOpts bo;
    bo.training = opts.training;
    bo.update_running_stats = opts.training && opts.update_running_stats;
    h = batch_norm(h, cb.gamma.value, cb.beta.value, cb.run_mean.value, cb.run_var.value, bo,
                   tape);
    return relu ? relu6(h, tape) : h;
}

void collect_conv_bn(ConvBn& cb, std::vector<Parameter*>& out) {
    out.push_back(&cb.w);
    out.push_back(&cb.gamma);
    out.push_back(&cb.beta);
    out.push_back(&cb.run_mean);
    out.push_back(&cb.run_var);
}

void mark_requires_grad(std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->value.set_requires_grad(p->trainable);
}

}  // namespace

// --------------------------------------------------------------------------
// probability / gradient algebra

std::vector<double> compute_probs(std::span<const double> alpha) {
    require(!alpha.empty(), "compute_probs: empty alpha");
    double mx = alpha[0];
    for (double a : alpha) {
        require(std::isfinite(a), "compute_probs: alpha contains NaN/Inf");
        mx = std::max(mx, a);
    }
    std::vector<double> p(alpha.size());
    double z = 0.0;
    for (std::size_t n = 0; n < alpha.size(); ++n) {
        p[n] = std::exp(alpha[n] - mx);
        z += p[n];
    }
    for (auto& v : p) v /= z;
    return p;
}

int sample_gate(std::span<const double> probs, Rng& rng) {
    double sum = 0.0;
    for (double v : probs) {
        require(v >= 0.0, "sample_gate: negative probability");
        sum += v;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "sample_gate: probabilities off the simplex");
    return rng.categorical(probs);
}

PairSample sample_active_pair(std::span<const double> probs, Rng& rng) {
    require(probs.size() >= 2, "sample_active_pair: need at least 2 candidates");
    PairSample out;
    out.i = sample_gate(probs, rng);
    // second draw without replacement
    std::vector<double> rest(probs.begin(), probs.end());
    rest[static_cast<std::size_t>(out.i)] = 0.0;
    double z = 0.0;
    for (double v : rest) z += v;
    require(z > 0.0, "sample_active_pair: degenerate distribution, no second candidate");
    for (auto& v : rest) v /= z;
    out.j = rng.categorical(rest);
    const double pi = probs[static_cast<std::size_t>(out.i)];
    const double pj = probs[static_cast<std::size_t>(out.j)];
    out.q = {pi / (pi + pj), pj / (pi + pj)};
    return out;
}

std::vector<double> arch_gradient(std::span<const double> dl_db, std::span<const double> probs) {
    require(dl_db.size() == probs.size(),
            "arch_gradient: length mismatch, " + std::to_string(dl_db.size()) + " vs " +
                std::to_string(probs.size()));
    double dot = 0.0;
    for (std::size_t n = 0; n < probs.size(); ++n) dot += dl_db[n] * probs[n];
    std::vector<double> g(probs.size());
    for (std::size_t n = 0; n < probs.size(); ++n) g[n] = probs[n] * (dl_db[n] - dot);
    return g;
}

// --------------------------------------------------------------------------
// search space

std::vector<SearchSpaceConfig::LayerPlan> SearchSpaceConfig::layer_plan() const {
    std::vector<LayerPlan> plan;
    int ch = stem_channels;
    int h = image_h, w = image_w;
    for (int i = 0; i < layers; ++i) {
        LayerPlan lp;
        lp.in_ch = ch;
        lp.in_h = h;
        lp.in_w = w;
        const bool down =
            std::find(downsample_layers.begin(), downsample_layers.end(), i) !=
            downsample_layers.end();
        lp.stride = down ? 2 : 1;
        lp.out_ch = down ? ch * width_mult : ch;
        lp.out_h = down ? (h + 1) / 2 : h;
        lp.out_w = down ? (w + 1) / 2 : w;
        ch = lp.out_ch;
        h = lp.out_h;
        w = lp.out_w;
        plan.push_back(lp);
    }
    return plan;
}

std::vector<std::string> SearchSpaceConfig::layer_candidates(int layer_index) const {
    const auto plan = layer_plan();
    require(layer_index >= 0 && layer_index < layers, "layer_candidates: index out of range");
    const auto& lp = plan[static_cast<std::size_t>(layer_index)];
    std::vector<std::string> out;
    for (const auto& name : candidates) {
        CandidateSpec spec = CandidateSpec::parse(name);
        if (spec.kind == CandidateSpec::Kind::identity &&
            (lp.stride != 1 || lp.in_ch != lp.out_ch))
            continue;
        out.push_back(name);
    }
    return out;
}

std::string SearchSpaceConfig::canonical() const {
    std::ostringstream os;
    os << "L=" << layers << ";img=" << image_channels << "x" << image_h << "x" << image_w
       << ";stem=" << stem_channels << ";classes=" << num_classes << ";down=";
    for (int d : downsample_layers) os << d << ",";
    os << ";mult=" << width_mult << ";cands=";
    for (const auto& c : candidates) os << c << ",";
    return os.str();
}

std::uint64_t SearchSpaceConfig::hash() const {
    const std::string s = canonical();
    return fnv1a_bytes(kFnvOffset, s.data(), s.size());
}

CandidateSpec CandidateSpec::parse(const std::string& name) {
    CandidateSpec s;
    if (name == "identity") {
        s.kind = Kind::identity;
        return s;
    }
    if (name == "zero") {
        s.kind = Kind::zero;
        return s;
    }
    int e = 0, k = 0;
    if (std::sscanf(name.c_str(), "mbconv_e%d_k%d", &e, &k) == 2) {
        require((e == 1 || e == 3 || e == 6) && (k == 3 || k == 5),
                "candidate '" + name + "': expansion must be 1/3/6 and kernel 3/5");
        s.kind = Kind::mbconv;
        s.expansion = e;
        s.kernel = k;
        return s;
    }
    throw std::invalid_argument("unknown candidate kind '" + name + "'");
}

std::string CandidateSpec::name() const {
    switch (kind) {
        case Kind::identity:
            return "identity";
        case Kind::zero:
            return "zero";
        case Kind::mbconv:
            return "mbconv_e" + std::to_string(expansion) + "_k" + std::to_string(kernel);
    }
    return "?";
}

// --------------------------------------------------------------------------
// candidates

OperationCandidate::OperationCandidate(const CandidateSpec& spec, int in_ch, int out_ch,
                                       int stride, const std::string& prefix, Rng init)
    : spec_(spec), in_ch_(in_ch), out_ch_(out_ch), stride_(stride) {
    if (spec_.kind == CandidateSpec::Kind::identity) {
        require(stride == 1 && in_ch == out_ch,
                "identity candidate illegal on shape-changing layer (" + prefix + ")");
        return;
    }
    if (spec_.kind == CandidateSpec::Kind::zero) return;
    const int mid = in_ch * spec_.expansion;
    has_expand_ = spec_.expansion != 1;
    if (has_expand_) expand_ = make_conv_bn(prefix + ".expand", mid, in_ch, 1, init);
    // depthwise weight layout is [C,1,k,k]
    dw_ = make_conv_bn(prefix + ".dw", mid, 1, spec_.kernel, init);
    project_ = make_conv_bn(prefix + ".project", out_ch, mid, 1, init);
}

Tensor OperationCandidate::forward(const Tensor& x, const ForwardOpts& opts, Tape* tape) {
    switch (spec_.kind) {
        case CandidateSpec::Kind::identity:
            return x;
        case CandidateSpec::Kind::zero: {
            const std::int64_t B = x.dim(0);
            const std::int64_t oh = (x.dim(2) + stride_ - 1) / stride_;
            const std::int64_t ow = (x.dim(3) + stride_ - 1) / stride_;
            return Tensor::zeros({B, out_ch_, oh, ow});
        }
        case CandidateSpec::Kind::mbconv: {
            Tensor h = x;
            if (has_expand_) h = conv_bn_relu(h, expand_, 1, true, false, opts, tape);
            h = conv_bn_relu(h, dw_, stride_, true, true, opts, tape);
            h = conv_bn_relu(h, project_, 1, false, false, opts, tape);
            if (stride_ == 1 && in_ch_ == out_ch_) h = add(h, x, tape);
            return h;
        }
    }
    throw std::logic_error("unreachable candidate kind");
}

void OperationCandidate::collect_params(std::vector<Parameter*>& out) {
    if (spec_.kind != CandidateSpec::Kind::mbconv) return;
    if (has_expand_) collect_conv_bn(expand_, out);
    collect_conv_bn(dw_, out);
    collect_conv_bn(project_, out);
}

std::int64_t OperationCandidate::flops(int in_h, int in_w) const {
    if (spec_.kind != CandidateSpec::Kind::mbconv) return 0;
    const std::int64_t mid = static_cast<std::int64_t>(in_ch_) * spec_.expansion;
    const std::int64_t oh = (in_h + stride_ - 1) / stride_;
    const std::int64_t ow = (in_w + stride_ - 1) / stride_;
    std::int64_t macs = 0;
    if (has_expand_) macs += static_cast<std::int64_t>(in_ch_) * mid * in_h * in_w;
    macs += static_cast<std::int64_t>(spec_.kernel) * spec_.kernel * mid * oh * ow;
    macs += mid * out_ch_ * oh * ow;
    return macs;
}

// --------------------------------------------------------------------------
// mixed layer

MixedLayer::MixedLayer(int index, const SearchSpaceConfig::LayerPlan& plan,
                       const std::vector<std::string>& candidate_names, Rng init)
    : index_(index) {
    const std::string lp = "layer" + std::to_string(index);
    int ci = 0;
    for (const auto& name : candidate_names) {
        candidates_.emplace_back(CandidateSpec::parse(name), plan.in_ch, plan.out_ch, plan.stride,
                                 lp + ".cand" + std::to_string(ci), init);
        ++ci;
    }
    require(candidates_.size() >= 2, "mixed layer " + std::to_string(index) +
                                         " needs at least 2 candidates");
    alpha_ = {lp + ".alpha",
              Tensor::zeros({static_cast<std::int64_t>(candidates_.size())}), true};
}

std::vector<double> MixedLayer::probs() const {
    auto a = alpha_.value.data();
    return compute_probs(a);
}

void MixedLayer::collect_params(std::vector<Parameter*>& out) {
    for (auto& c : candidates_) c.collect_params(out);
    out.push_back(&alpha_);
}

RescaleResult rescale_alphas(MixedLayer& layer, int i, int j, double pre_update_pair_mass) {
    RescaleResult res;
    const int n = layer.num_candidates();
    require(i >= 0 && j >= 0 && i < n && j < n && i != j, "rescale_alphas: bad pair indices");
    if (n == 2) return res;  // pair covers the space; any common shift keeps p

    double m0 = pre_update_pair_mass;
    if (m0 < 1e-6 || m0 > 1.0 - 1e-6) {
        m0 = std::clamp(m0, 1e-6, 1.0 - 1e-6);
        res.clamped = true;
    }

    auto a = layer.alpha().value.data();
    const double la = logsumexp2(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)]);
    double mx = -1e300;
    for (int k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        mx = std::max(mx, a[static_cast<std::size_t>(k)]);
    }
    double sb = 0.0;
    for (int k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        sb += std::exp(a[static_cast<std::size_t>(k)] - mx);
    }
    const double lb = mx + std::log(sb);

    res.shift = std::log(m0 / (1.0 - m0)) + lb - la;
    a[static_cast<std::size_t>(i)] += res.shift;
    a[static_cast<std::size_t>(j)] += res.shift;
    return res;
}

RescaleResult pair_arch_step(MixedLayer& layer, const std::array<double, 2>& dl_db_pair,
                             const GateSample& gate, OptimizerState& adam) {
    require(gate.pair_mode, "pair_arch_step: gate sample is not a pair sample");
    require(gate.layer_index == layer.index(), "pair_arch_step: gate from a different layer");
    require(gate.serial == layer.arch_serial(),
            "pair_arch_step: stale gate sample (serial " + std::to_string(gate.serial) +
                " != " + std::to_string(layer.arch_serial()) + ")");
    const int i = gate.pair.i, j = gate.pair.j;

    const auto p_pre = layer.probs();
    const double pre_mass =
        p_pre[static_cast<std::size_t>(i)] + p_pre[static_cast<std::size_t>(j)];

    // Gradient over the pair-renormalized 2-way distribution.
    const auto g2 = arch_gradient(std::span<const double>(dl_db_pair.data(), 2),
                                  std::span<const double>(gate.pair.q.data(), 2));

    auto a = layer.alpha().value.data();
    const double ai_before = a[static_cast<std::size_t>(i)];
    const double aj_before = a[static_cast<std::size_t>(j)];

    std::vector<double> full(static_cast<std::size_t>(layer.num_candidates()), 0.0);
    full[static_cast<std::size_t>(i)] = g2[0];
    full[static_cast<std::size_t>(j)] = g2[1];
    Gradients grads;
    grads.by_id[layer.alpha().id] = std::move(full);
    grads.reached.insert(layer.alpha().id);
    std::vector<Parameter*> ps{&layer.alpha()};
    adam_step(ps, grads, adam);

    RescaleResult res;
    // A no-op update preserves the mass trivially; skipping keeps it exact.
    if (a[static_cast<std::size_t>(i)] != ai_before ||
        a[static_cast<std::size_t>(j)] != aj_before) {
        res = rescale_alphas(layer, i, j, pre_mass);
    }
    layer.bump_arch_serial();
    return res;
}

// --------------------------------------------------------------------------
// supernet

SuperNet::SuperNet(const SearchSpaceConfig& cfg, Rng init) : cfg_(cfg) {
    require(cfg_.layers >= 1, "search space needs at least one layer");
    stem_ = make_conv_bn("stem", cfg_.stem_channels, cfg_.image_channels, 3, init);
    const auto plan = cfg_.layer_plan();
    for (int i = 0; i < cfg_.layers; ++i) {
        layers_.emplace_back(i, plan[static_cast<std::size_t>(i)], cfg_.layer_candidates(i), init);
    }
    const int last_ch = plan.back().out_ch;
    head_w_ = {"head.linear.weight", Tensor({cfg_.num_classes, last_ch}), true};
    {
        Rng r = init.derive(head_w_.id);
        const double std = std::sqrt(2.0 / last_ch);
        for (auto& v : head_w_.value.data()) v = std * r.normal();
    }
    head_b_ = {"head.linear.bias", Tensor::zeros({cfg_.num_classes}), true};
    auto ps = params();
    mark_requires_grad(ps);
    activation_counts_.assign(static_cast<std::size_t>(cfg_.layers), 0);
}

Tensor SuperNet::stem_forward(const Tensor& x, const ForwardOpts& opts, Tape* tape) {
    require(x.ndim() == 4 && x.dim(1) == cfg_.image_channels,
            "supernet: input " + shape_str(x.shape()) + " does not match image channels " +
                std::to_string(cfg_.image_channels));
    return conv_bn_relu(x, stem_, 1, true, false, opts, tape);
}

Tensor SuperNet::head_forward(const Tensor& x, Tape* tape) {
    Tensor h = global_avg_pool(x, tape);
    return linear(h, head_w_.value, head_b_.value, tape);
}

Tensor SuperNet::forward_train(const Tensor& batch, StepMode mode, Rng& rng, Tape& tape,
                               std::vector<GateSample>& gates, const ForwardOpts& opts) {
    gates.clear();
    activation_counts_.assign(layers_.size(), 0);
    Tensor h = stem_forward(batch, opts, &tape);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        MixedLayer& layer = layers_[li];
        const auto p = layer.probs();
        GateSample gs;
        gs.layer_index = static_cast<int>(li);
        gs.mask.assign(p.size(), 0);
        gs.serial = layer.arch_serial();
        if (mode == StepMode::weight_step) {
            const int n = sample_gate(p, rng);
            gs.active = n;
            gs.mask[static_cast<std::size_t>(n)] = 1;
            h = layer.candidate(n).forward(h, opts, &tape);
            activation_counts_[li] += 1;
        } else {
            gs.pair_mode = true;
            gs.pair = sample_active_pair(p, rng);
            const int within = rng.categorical(std::span<const double>(gs.pair.q.data(), 2));
            gs.active = within == 0 ? gs.pair.i : gs.pair.j;
            gs.mask[static_cast<std::size_t>(gs.pair.i)] = 1;
            gs.mask[static_cast<std::size_t>(gs.pair.j)] = 1;
            Tensor oi = layer.candidate(gs.pair.i).forward(h, opts, &tape);
            Tensor oj = layer.candidate(gs.pair.j).forward(h, opts, &tape);
            activation_counts_[li] += 2;
            Tensor y = (gs.active == gs.pair.i) ? oi : oj;
            // Even a zero active path must receive the downstream gradient,
            // otherwise the masked candidate's gate gradient vanishes.
            y.set_requires_grad(true);
            gs.dl_db = std::make_shared<std::array<double, 2>>();
            (*gs.dl_db) = {0.0, 0.0};
            // Gate gradients d(loss)/d(b_n) = <d(loss)/dy, o_n(x)> for the
            // two sampled candidates; runs before the candidates' backward.
            tape.record("gate_select", [oi, oj, y, sink = gs.dl_db]() mutable {
                auto gy = y.grad();
                auto oid = oi.data();
                auto ojd = oj.data();
                double si = 0.0, sj = 0.0;
                for (std::size_t k = 0; k < gy.size(); ++k) {
                    si += gy[k] * oid[k];
                    sj += gy[k] * ojd[k];
                }
                (*sink)[0] += si;
                (*sink)[1] += sj;
            });
            h = y;
        }
        gates.push_back(std::move(gs));
    }
    return head_forward(h, &tape);
}

Tensor SuperNet::forward_mixed(const Tensor& batch, Tape& tape, std::vector<MixedLayerInfo>& info,
                               const ForwardOpts& opts) {
    info.clear();
    activation_counts_.assign(layers_.size(), 0);
    Tensor h = stem_forward(batch, opts, &tape);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        MixedLayer& layer = layers_[li];
        MixedLayerInfo mi;
        mi.probs = layer.probs();
        Tensor acc;
        for (int n = 0; n < layer.num_candidates(); ++n) {
            Tensor on = layer.candidate(n).forward(h, opts, &tape);
            activation_counts_[li] += 1;
            auto sink = std::make_shared<double>(0.0);
            mi.dl_dp.push_back(sink);
            Tensor yn = scale(on, mi.probs[static_cast<std::size_t>(n)], &tape, sink);
            acc = acc.defined() ? add(acc, yn, &tape) : yn;
        }
        h = acc;
        info.push_back(std::move(mi));
    }
    return head_forward(h, &tape);
}

Tensor SuperNet::forward_eval(const Tensor& batch) {
    ForwardOpts opts;
    opts.training = false;
    opts.update_running_stats = false;
    Tensor h = stem_forward(batch, opts, nullptr);
    for (auto& layer : layers_) {
        const auto p = layer.probs();
        const int best = static_cast<int>(
            std::max_element(p.begin(), p.end()) - p.begin());
        h = layer.candidate(best).forward(h, opts, nullptr);
    }
    return head_forward(h, nullptr);
}

std::vector<Parameter*> SuperNet::params() {
    std::vector<Parameter*> out;
    collect_conv_bn(stem_, out);
    for (auto& l : layers_) l.collect_params(out);
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

std::vector<Parameter*> SuperNet::weight_params() {
    std::vector<Parameter*> out;
    for (Parameter* p : params()) {
        if (p->trainable && p->id.find(".alpha") == std::string::npos) out.push_back(p);
    }
    return out;
}

std::vector<Parameter*> SuperNet::alpha_params() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) out.push_back(&l.alpha());
    return out;
}

void SuperNet::drop_all_grads() {
    for (Parameter* p : params()) p->value.drop_grad();
}

ParamMap SuperNet::snapshot_params() const {
    ParamMap out;
    auto* self = const_cast<SuperNet*>(this);
    for (Parameter* p : self->params()) {
        auto d = p->value.data();
        out[p->id] = std::vector<double>(d.begin(), d.end());
    }
    return out;
}

void SuperNet::load_params(const ParamMap& values) {
    auto ps = params();
    require(values.size() == ps.size(),
            "load_params: parameter count mismatch (" + std::to_string(values.size()) + " vs " +
                std::to_string(ps.size()) + ")");
    for (Parameter* p : ps) {
        auto it = values.find(p->id);
        require(it != values.end(), "load_params: missing parameter '" + p->id + "'");
        auto d = p->value.data();
        require(it->second.size() == d.size(), "load_params: size mismatch for '" + p->id + "'");
        std::copy(it->second.begin(), it->second.end(), d.begin());
    }
}

std::string SuperNet::alpha_hash() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& l : layers_) {
        auto a = l.alpha().value.data();
        h = fnv1a_bytes(h, a.data(), a.size() * sizeof(double));
    }
    return hex64(h);
}

// --------------------------------------------------------------------------
// derivation

DerivedArchitecture derive_normal_net(const SuperNet& net, const std::string& checkpoint_id) {
    DerivedArchitecture arch;
    arch.space = net.config();
    arch.checkpoint_id = checkpoint_id;
    arch.alpha_hash = net.alpha_hash();
    for (int li = 0; li < net.num_layers(); ++li) {
        const MixedLayer& layer = net.layer(li);
        const auto p = layer.probs();
        int best = 0;
        for (int n = 1; n < layer.num_candidates(); ++n) {
            if (p[static_cast<std::size_t>(n)] > p[static_cast<std::size_t>(best)]) best = n;
        }
        DerivedArchitecture::Choice ch;
        ch.layer_index = li;
        // A winning zero would disconnect the chain; fall back to the runner-up.
        if (layer.candidate(best).spec().kind == CandidateSpec::Kind::zero) {
            int runner = -1;
            for (int n = 0; n < layer.num_candidates(); ++n) {
                if (layer.candidate(n).spec().kind == CandidateSpec::Kind::zero) continue;
                if (runner < 0 ||
                    p[static_cast<std::size_t>(n)] > p[static_cast<std::size_t>(runner)])
                    runner = n;
            }
            require(runner >= 0, "derive: no non-zero candidate available on layer " +
                                     std::to_string(li));
            best = runner;
            ch.replaced_zero = true;
        }
        const OperationCandidate& cand = layer.candidate(best);
        ch.candidate = best;
        ch.kind = cand.name();
        ch.expansion = cand.spec().expansion;
        ch.kernel = cand.spec().kernel;
        ch.stride = cand.stride();
        ch.in_ch = cand.in_channels();
        ch.out_ch = cand.out_channels();
        arch.choices.push_back(ch);
    }
    return arch;
}

// --------------------------------------------------------------------------
// compact net

CompactNet::CompactNet(const DerivedArchitecture& arch, Rng init) : arch_(arch) {
    const auto& cfg = arch_.space;
    stem_ = make_conv_bn("stem", cfg.stem_channels, cfg.image_channels, 3, init);
    const auto plan = cfg.layer_plan();
    require(arch_.choices.size() == plan.size(), "derived architecture does not match space");
    for (std::size_t i = 0; i < arch_.choices.size(); ++i) {
        const auto& ch = arch_.choices[i];
        require(ch.in_ch == plan[i].in_ch && ch.out_ch == plan[i].out_ch &&
                    ch.stride == plan[i].stride,
                "derived architecture layer " + std::to_string(i) + " does not match space");
        blocks_.emplace_back(CandidateSpec::parse(ch.kind), ch.in_ch, ch.out_ch, ch.stride,
                             "block" + std::to_string(i), init);
    }
    const int last_ch = plan.back().out_ch;
    head_w_ = {"head.linear.weight", Tensor({cfg.num_classes, last_ch}), true};
    {
        Rng r = init.derive(head_w_.id);
        const double std = std::sqrt(2.0 / last_ch);
        for (auto& v : head_w_.value.data()) v = std * r.normal();
    }
    head_b_ = {"head.linear.bias", Tensor::zeros({cfg.num_classes}), true};
    auto ps = params();
    mark_requires_grad(ps);
}

CompactNet::CompactNet(const DerivedArchitecture& arch, const SuperNet& source)
    : CompactNet(arch, Rng(0)) {
    // Copy the chosen candidates' weights (and stem/head) from the supernet.
    auto* src = const_cast<SuperNet*>(&source);
    std::vector<Parameter*> sp, dp;
    collect_conv_bn(src->stem_block(), sp);
    collect_conv_bn(stem_, dp);
    for (std::size_t i = 0; i < arch_.choices.size(); ++i) {
        src->layer(static_cast<int>(i))
            .candidate(arch_.choices[i].candidate)
            .collect_params(sp);
        blocks_[i].collect_params(dp);
    }
    require(sp.size() == dp.size(), "compact copy: parameter structure mismatch");
    for (std::size_t k = 0; k < sp.size(); ++k) {
        auto s = sp[k]->value.data();
        auto d = dp[k]->value.data();
        require(s.size() == d.size(), "compact copy: size mismatch at " + sp[k]->id);
        std::copy(s.begin(), s.end(), d.begin());
    }
    // head
    std::copy(src->head_weight().value.data().begin(), src->head_weight().value.data().end(),
              head_w_.value.data().begin());
    std::copy(src->head_bias().value.data().begin(), src->head_bias().value.data().end(),
              head_b_.value.data().begin());
}

Tensor CompactNet::forward(const Tensor& batch, const ForwardOpts& opts, Tape* tape) {
    Tensor h = conv_bn_relu(batch, stem_, 1, true, false, opts, tape);
    for (auto& b : blocks_) h = b.forward(h, opts, tape);
    h = global_avg_pool(h, tape);
    return linear(h, head_w_.value, head_b_.value, tape);
}

Tensor CompactNet::forward_eval(const Tensor& batch) {
    ForwardOpts opts;
    opts.training = false;
    opts.update_running_stats = false;
    return forward(batch, opts, nullptr);
}

std::vector<Parameter*> CompactNet::params() {
    std::vector<Parameter*> out;
    collect_conv_bn(stem_, out);
    for (auto& b : blocks_) b.collect_params(out);
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

std::vector<Parameter*> CompactNet::weight_params() {
    std::vector<Parameter*> out;
    for (Parameter* p : params()) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

void CompactNet::drop_all_grads() {
    for (Parameter* p : params()) p->value.drop_grad();
}

ParamMap CompactNet::snapshot_params() const {
    ParamMap out;
    auto* self = const_cast<CompactNet*>(this);
    for (Parameter* p : self->params()) {
        auto d = p->value.data();
        out[p->id] = std::vector<double>(d.begin(), d.end());
    }
    return out;
}

void CompactNet::load_params(const ParamMap& values) {
    auto ps = params();
    require(values.size() == ps.size(), "load_params: parameter count mismatch");
    for (Parameter* p : ps) {
        auto it = values.find(p->id);
        require(it != values.end(), "load_params: missing parameter '" + p->id + "'");
        auto d = p->value.data();
        require(it->second.size() == d.size(), "load_params: size mismatch for '" + p->id + "'");
        std::copy(it->second.begin(), it->second.end(), d.begin());
    }
}

std::int64_t CompactNet::param_count() const {
    std::int64_t n = 0;
    auto* self = const_cast<CompactNet*>(this);
    for (Parameter* p : self->params()) {
        if (p->trainable) n += p->value.numel();
    }
    return n;
}

std::int64_t CompactNet::flops() const {
    const auto& cfg = arch_.space;
    const auto plan = cfg.layer_plan();
    std::int64_t macs = 9LL * cfg.image_channels * cfg.stem_channels * cfg.image_h * cfg.image_w;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        macs += blocks_[i].flops(plan[i].in_h, plan[i].in_w);
    }
    macs += static_cast<std::int64_t>(plan.back().out_ch) * cfg.num_classes;
    return macs;
}

std::int64_t count_params(const std::vector<const Parameter*>& params) {
    std::int64_t n = 0;
    for (const Parameter* p : params) {
        if (p->trainable) n += p->value.numel();
    }
    return n;
}

}  // namespace fdnas
