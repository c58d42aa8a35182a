// SPDX-License-Identifier: Apache-2.0
#include "fdnas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fdnas {

namespace {

bool want_grad(const Tensor& t, Tape* tape) { return tape != nullptr && t.requires_grad(); }

void check_4d(const Tensor& x, const char* op) {
    require(x.ndim() == 4, std::string(op) + ": expected NCHW input, got " + shape_str(x.shape()));
    require(x.dim(0) > 0, std::string(op) + ": zero-sized batch rejected");
}

int out_extent(int in, int k, int pad, int stride) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

const std::vector<std::string> kPrimitiveKinds = {
    "linear", "conv2d", "depthwise_conv2d", "relu6", "batch_norm",
    "global_avg_pool", "add", "scale", "flatten"};

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
    require(x.ndim() == 2, "linear: input must be [B,Ci], got " + shape_str(x.shape()));
    require(x.dim(0) > 0, "linear: zero-sized batch rejected");
    require(w.ndim() == 2 && w.dim(1) == x.dim(1),
            "linear: weight " + shape_str(w.shape()) + " incompatible with input " +
                shape_str(x.shape()));
    require(b.ndim() == 1 && b.dim(0) == w.dim(0),
            "linear: bias " + shape_str(b.shape()) + " incompatible with weight " +
                shape_str(w.shape()));
    const std::int64_t B = x.dim(0), Ci = x.dim(1), Co = w.dim(0);

    bool rg = want_grad(x, tape) || want_grad(w, tape) || want_grad(b, tape);
    Tensor y({B, Co}, rg);
    auto xd = x.data();
    auto wd = w.data();
    auto bd = b.data();
    auto yd = y.data();
    for (std::int64_t i = 0; i < B; ++i) {
        for (std::int64_t o = 0; o < Co; ++o) {
            double acc = bd[static_cast<std::size_t>(o)];
            const double* xr = &xd[static_cast<std::size_t>(i * Ci)];
            const double* wr = &wd[static_cast<std::size_t>(o * Ci)];
            for (std::int64_t c = 0; c < Ci; ++c) acc += xr[c] * wr[c];
            yd[static_cast<std::size_t>(i * Co + o)] = acc;
        }
    }
    if (rg) {
        tape->record("linear", [x = x, w = w, b = b, y = y]() mutable {
            auto gy = y.grad();
            const std::int64_t B = x.dim(0), Ci = x.dim(1), Co = w.dim(0);
            auto xd = x.data();
            auto wd = w.data();
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (std::int64_t i = 0; i < B; ++i)
                    for (std::int64_t o = 0; o < Co; ++o) {
                        double g = gy[static_cast<std::size_t>(i * Co + o)];
                        for (std::int64_t c = 0; c < Ci; ++c)
                            gx[static_cast<std::size_t>(i * Ci + c)] +=
                                g * wd[static_cast<std::size_t>(o * Ci + c)];
                    }
            }
            if (w.requires_grad()) {
                auto gw = w.grad();
                for (std::int64_t i = 0; i < B; ++i)
                    for (std::int64_t o = 0; o < Co; ++o) {
                        double g = gy[static_cast<std::size_t>(i * Co + o)];
                        for (std::int64_t c = 0; c < Ci; ++c)
                            gw[static_cast<std::size_t>(o * Ci + c)] +=
                                g * xd[static_cast<std::size_t>(i * Ci + c)];
                    }
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::int64_t i = 0; i < B; ++i)
                    for (std::int64_t o = 0; o < Co; ++o)
                        gb[static_cast<std::size_t>(o)] += gy[static_cast<std::size_t>(i * Co + o)];
            }
        });
    }
    return y;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, Tape* tape) {
    check_4d(x, "conv2d");
    require(w.ndim() == 4, "conv2d: weight must be [Co,Ci,k,k], got " + shape_str(w.shape()));
    require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
    require(w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1, "conv2d: kernel must be square and odd");
    require(w.dim(1) == x.dim(1), "conv2d: weight " + shape_str(w.shape()) +
                                      " incompatible with input " + shape_str(x.shape()));
    if (bias) {
        require(bias->ndim() == 1 && bias->dim(0) == w.dim(0),
                "conv2d: bias " + shape_str(bias->shape()) + " incompatible with weight " +
                    shape_str(w.shape()));
    }
    const std::int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t Co = w.dim(0);
    const int k = static_cast<int>(w.dim(2));
    const int pad = k / 2;
    const std::int64_t Ho = out_extent(static_cast<int>(H), k, pad, stride);
    const std::int64_t Wo = out_extent(static_cast<int>(W), k, pad, stride);

    bool rg = want_grad(x, tape) || want_grad(w, tape) || (bias && want_grad(*bias, tape));
    Tensor y({B, Co, Ho, Wo}, rg);
    auto xd = x.data();
    auto wd = w.data();
    auto yd = y.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t o = 0; o < Co; ++o) {
            const double bv = bias ? bias->data()[static_cast<std::size_t>(o)] : 0.0;
            for (std::int64_t ho = 0; ho < Ho; ++ho) {
                for (std::int64_t wo = 0; wo < Wo; ++wo) {
                    double acc = bv;
                    for (std::int64_t c = 0; c < Ci; ++c) {
                        const double* xp = &xd[static_cast<std::size_t>(((b * Ci + c) * H) * W)];
                        const double* wp =
                            &wd[static_cast<std::size_t>(((o * Ci + c) * k) * k)];
                        for (int kh = 0; kh < k; ++kh) {
                            const std::int64_t hi = ho * stride + kh - pad;
                            if (hi < 0 || hi >= H) continue;
                            for (int kw = 0; kw < k; ++kw) {
                                const std::int64_t wi = wo * stride + kw - pad;
                                if (wi < 0 || wi >= W) continue;
                                acc += xp[hi * W + wi] * wp[kh * k + kw];
                            }
                        }
                    }
                    yd[static_cast<std::size_t>(((b * Co + o) * Ho + ho) * Wo + wo)] = acc;
                }
            }
        }
    }
    if (rg) {
        Tensor bcopy = bias ? *bias : Tensor();
        tape->record("conv2d", [x = x, w = w, bcopy, y = y, stride, k, pad]() mutable {
            const std::int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
            const std::int64_t Co = y.dim(1), Ho = y.dim(2), Wo = y.dim(3);
            auto gy = y.grad();
            auto xd = x.data();
            auto wd = w.data();
            const bool gx_on = x.requires_grad();
            const bool gw_on = w.requires_grad();
            std::span<double> gx, gw;
            if (gx_on) gx = x.grad();
            if (gw_on) gw = w.grad();
            for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t o = 0; o < Co; ++o) {
                    for (std::int64_t ho = 0; ho < Ho; ++ho) {
                        for (std::int64_t wo = 0; wo < Wo; ++wo) {
                            const double g =
                                gy[static_cast<std::size_t>(((b * Co + o) * Ho + ho) * Wo + wo)];
                            if (g == 0.0) continue;
                            for (std::int64_t c = 0; c < Ci; ++c) {
                                const std::size_t xoff =
                                    static_cast<std::size_t>(((b * Ci + c) * H) * W);
                                const std::size_t woff =
                                    static_cast<std::size_t>(((o * Ci + c) * k) * k);
                                for (int kh = 0; kh < k; ++kh) {
                                    const std::int64_t hi = ho * stride + kh - pad;
                                    if (hi < 0 || hi >= H) continue;
                                    for (int kw = 0; kw < k; ++kw) {
                                        const std::int64_t wi = wo * stride + kw - pad;
                                        if (wi < 0 || wi >= W) continue;
                                        if (gx_on)
                                            gx[xoff + static_cast<std::size_t>(hi * W + wi)] +=
                                                g * wd[woff + static_cast<std::size_t>(kh * k + kw)];
                                        if (gw_on)
                                            gw[woff + static_cast<std::size_t>(kh * k + kw)] +=
                                                g * xd[xoff + static_cast<std::size_t>(hi * W + wi)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (bcopy.defined() && bcopy.requires_grad()) {
                auto gb = bcopy.grad();
                for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t o = 0; o < Co; ++o)
                        for (std::int64_t p = 0; p < Ho * Wo; ++p)
                            gb[static_cast<std::size_t>(o)] +=
                                gy[static_cast<std::size_t>((b * Co + o) * Ho * Wo + p)];
            }
        });
    }
    return y;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride, Tape* tape) {
    check_4d(x, "depthwise_conv2d");
    require(w.ndim() == 4 && w.dim(1) == 1, "depthwise_conv2d: weight must be [C,1,k,k], got " +
                                                shape_str(w.shape()));
    require(stride == 1 || stride == 2, "depthwise_conv2d: stride must be 1 or 2");
    require(w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1,
            "depthwise_conv2d: kernel must be square and odd");
    require(w.dim(0) == x.dim(1), "depthwise_conv2d: channel mismatch, weight " +
                                      shape_str(w.shape()) + " input " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int k = static_cast<int>(w.dim(2));
    const int pad = k / 2;
    const std::int64_t Ho = out_extent(static_cast<int>(H), k, pad, stride);
    const std::int64_t Wo = out_extent(static_cast<int>(W), k, pad, stride);

    bool rg = want_grad(x, tape) || want_grad(w, tape);
    Tensor y({B, C, Ho, Wo}, rg);
    auto xd = x.data();
    auto wd = w.data();
    auto yd = y.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            const double* xp = &xd[static_cast<std::size_t>(((b * C + c) * H) * W)];
            const double* wp = &wd[static_cast<std::size_t>(c * k * k)];
            for (std::int64_t ho = 0; ho < Ho; ++ho) {
                for (std::int64_t wo = 0; wo < Wo; ++wo) {
                    double acc = 0.0;
                    for (int kh = 0; kh < k; ++kh) {
                        const std::int64_t hi = ho * stride + kh - pad;
                        if (hi < 0 || hi >= H) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const std::int64_t wi = wo * stride + kw - pad;
                            if (wi < 0 || wi >= W) continue;
                            acc += xp[hi * W + wi] * wp[kh * k + kw];
                        }
                    }
                    yd[static_cast<std::size_t>(((b * C + c) * Ho + ho) * Wo + wo)] = acc;
                }
            }
        }
    }
    if (rg) {
        tape->record("depthwise_conv2d", [x = x, w = w, y = y, stride, k, pad]() mutable {
            const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            const std::int64_t Ho = y.dim(2), Wo = y.dim(3);
            auto gy = y.grad();
            auto xd = x.data();
            auto wd = w.data();
            const bool gx_on = x.requires_grad();
            const bool gw_on = w.requires_grad();
            std::span<double> gx, gw;
            if (gx_on) gx = x.grad();
            if (gw_on) gw = w.grad();
            for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t c = 0; c < C; ++c) {
                    const std::size_t xoff = static_cast<std::size_t>(((b * C + c) * H) * W);
                    const std::size_t woff = static_cast<std::size_t>(c * k * k);
                    for (std::int64_t ho = 0; ho < Ho; ++ho) {
                        for (std::int64_t wo = 0; wo < Wo; ++wo) {
                            const double g =
                                gy[static_cast<std::size_t>(((b * C + c) * Ho + ho) * Wo + wo)];
                            if (g == 0.0) continue;
                            for (int kh = 0; kh < k; ++kh) {
                                const std::int64_t hi = ho * stride + kh - pad;
                                if (hi < 0 || hi >= H) continue;
                                for (int kw = 0; kw < k; ++kw) {
                                    const std::int64_t wi = wo * stride + kw - pad;
                                    if (wi < 0 || wi >= W) continue;
                                    if (gx_on)
                                        gx[xoff + static_cast<std::size_t>(hi * W + wi)] +=
                                            g * wd[woff + static_cast<std::size_t>(kh * k + kw)];
                                    if (gw_on)
                                        gw[woff + static_cast<std::size_t>(kh * k + kw)] +=
                                            g * xd[xoff + static_cast<std::size_t>(hi * W + wi)];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return y;
}

Tensor relu6(const Tensor& x, Tape* tape) {
    require(x.defined() && x.numel() > 0, "relu6: empty input rejected");
    bool rg = want_grad(x, tape);
    Tensor y(x.shape(), rg);
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = std::clamp(xd[i], 0.0, 6.0);
    if (rg) {
        tape->record("relu6", [x = x, y = y]() mutable {
            auto gy = y.grad();
            auto gx = x.grad();
            auto xd = x.data();
            for (std::size_t i = 0; i < xd.size(); ++i) {
                if (xd[i] > 0.0 && xd[i] < 6.0) gx[i] += gy[i];
            }
        });
    }
    return y;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, const BatchNormOpts& opts,
                  Tape* tape) {
    check_4d(x, "batch_norm");
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C &&
                running_var.numel() == C,
            "batch_norm: per-channel parameter size mismatch for input " + shape_str(x.shape()));
    const std::int64_t M = B * H * W;
    const std::int64_t HW = H * W;

    std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
    std::vector<double> inv_std(static_cast<std::size_t>(C), 0.0);
    auto xd = x.data();
    if (opts.training) {
        for (std::int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::int64_t b = 0; b < B; ++b) {
                const double* xp = &xd[static_cast<std::size_t>((b * C + c) * HW)];
                for (std::int64_t p = 0; p < HW; ++p) s += xp[p];
            }
            const double mu = s / static_cast<double>(M);
            double v = 0.0;
            for (std::int64_t b = 0; b < B; ++b) {
                const double* xp = &xd[static_cast<std::size_t>((b * C + c) * HW)];
                for (std::int64_t p = 0; p < HW; ++p) {
                    const double d = xp[p] - mu;
                    v += d * d;
                }
            }
            v /= static_cast<double>(M);
            mean[static_cast<std::size_t>(c)] = mu;
            inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(v + opts.eps);
            if (opts.update_running_stats) {
                auto rm = running_mean.data();
                auto rv = running_var.data();
                rm[static_cast<std::size_t>(c)] =
                    (1.0 - opts.momentum) * rm[static_cast<std::size_t>(c)] + opts.momentum * mu;
                rv[static_cast<std::size_t>(c)] =
                    (1.0 - opts.momentum) * rv[static_cast<std::size_t>(c)] + opts.momentum * v;
            }
        }
    } else {
        auto rm = running_mean.data();
        auto rv = running_var.data();
        for (std::int64_t c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = rm[static_cast<std::size_t>(c)];
            inv_std[static_cast<std::size_t>(c)] =
                1.0 / std::sqrt(rv[static_cast<std::size_t>(c)] + opts.eps);
        }
    }

    bool rg = want_grad(x, tape) || want_grad(gamma, tape) || want_grad(beta, tape);
    Tensor y(x.shape(), rg);
    auto yd = y.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            const double mu = mean[static_cast<std::size_t>(c)];
            const double is = inv_std[static_cast<std::size_t>(c)];
            const double ga = gd[static_cast<std::size_t>(c)];
            const double be = bd[static_cast<std::size_t>(c)];
            const double* xp = &xd[static_cast<std::size_t>((b * C + c) * HW)];
            double* yp = &yd[static_cast<std::size_t>((b * C + c) * HW)];
            for (std::int64_t p = 0; p < HW; ++p) yp[p] = ga * (xp[p] - mu) * is + be;
        }
    }
    if (rg) {
        bool training = opts.training;
        tape->record("batch_norm", [x = x, gamma = gamma, beta = beta, y = y, mean, inv_std,
                                    training]() mutable {
            const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
            const double M = static_cast<double>(B * HW);
            auto gy = y.grad();
            auto xd = x.data();
            auto gd = gamma.data();
            for (std::int64_t c = 0; c < C; ++c) {
                const double mu = mean[static_cast<std::size_t>(c)];
                const double is = inv_std[static_cast<std::size_t>(c)];
                double sum_gy = 0.0, sum_gy_xh = 0.0;
                for (std::int64_t b = 0; b < B; ++b) {
                    const double* xp = &xd[static_cast<std::size_t>((b * C + c) * HW)];
                    const double* gp = &gy[static_cast<std::size_t>((b * C + c) * HW)];
                    for (std::int64_t p = 0; p < HW; ++p) {
                        sum_gy += gp[p];
                        sum_gy_xh += gp[p] * (xp[p] - mu) * is;
                    }
                }
                if (gamma.requires_grad()) gamma.grad()[static_cast<std::size_t>(c)] += sum_gy_xh;
                if (beta.requires_grad()) beta.grad()[static_cast<std::size_t>(c)] += sum_gy;
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    const double ga = gd[static_cast<std::size_t>(c)];
                    for (std::int64_t b = 0; b < B; ++b) {
                        const double* xp = &xd[static_cast<std::size_t>((b * C + c) * HW)];
                        const double* gp = &gy[static_cast<std::size_t>((b * C + c) * HW)];
                        double* gxp = &gx[static_cast<std::size_t>((b * C + c) * HW)];
                        for (std::int64_t p = 0; p < HW; ++p) {
                            if (training) {
                                const double xh = (xp[p] - mu) * is;
                                gxp[p] += ga * is * (gp[p] - sum_gy / M - xh * sum_gy_xh / M);
                            } else {
                                gxp[p] += ga * is * gp[p];
                            }
                        }
                    }
                }
            }
        });
    }
    return y;
}

Tensor global_avg_pool(const Tensor& x, Tape* tape) {
    check_4d(x, "global_avg_pool");
    const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    bool rg = want_grad(x, tape);
    Tensor y({B, C}, rg);
    auto xd = x.data();
    auto yd = y.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            double s = 0.0;
            const double* xp = &xd[static_cast<std::size_t>((b * C + c) * HW)];
            for (std::int64_t p = 0; p < HW; ++p) s += xp[p];
            yd[static_cast<std::size_t>(b * C + c)] = s / static_cast<double>(HW);
        }
    }
    if (rg) {
        tape->record("global_avg_pool", [x = x, y = y]() mutable {
            const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
            auto gy = y.grad();
            auto gx = x.grad();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t c = 0; c < C; ++c) {
                    const double g =
                        gy[static_cast<std::size_t>(b * C + c)] / static_cast<double>(HW);
                    double* gxp = &gx[static_cast<std::size_t>((b * C + c) * HW)];
                    for (std::int64_t p = 0; p < HW; ++p) gxp[p] += g;
                }
        });
    }
    return y;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    require(a.shape() == b.shape(), "add: shape mismatch, " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
    bool rg = want_grad(a, tape) || want_grad(b, tape);
    Tensor y(a.shape(), rg);
    auto ad = a.data();
    auto bd = b.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = ad[i] + bd[i];
    if (rg) {
        tape->record("add", [a = a, b = b, y = y]() mutable {
            auto gy = y.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
        });
    }
    return y;
}

Tensor scale(const Tensor& x, double c, Tape* tape, std::shared_ptr<double> grad_sink) {
    require(x.defined(), "scale: undefined input");
    bool rg = (want_grad(x, tape)) || (tape && grad_sink);
    Tensor y(x.shape(), want_grad(x, tape));
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = c * xd[i];
    if (rg) {
        y.set_requires_grad(true);
        tape->record("scale", [x = x, y = y, c, grad_sink]() mutable {
            auto gy = y.grad();
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += c * gy[i];
            }
            if (grad_sink) {
                auto xd = x.data();
                double s = 0.0;
                for (std::size_t i = 0; i < gy.size(); ++i) s += gy[i] * xd[i];
                *grad_sink += s;
            }
        });
    }
    return y;
}

Tensor flatten(const Tensor& x, Tape* tape) {
    require(x.ndim() >= 2, "flatten: input must have a batch dimension");
    (void)tape;  // shares storage; gradients flow through the shared buffer
    std::int64_t rest = 1;
    for (int i = 1; i < x.ndim(); ++i) rest *= x.dim(i);
    return x.reshaped({x.dim(0), rest});
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels,
                             Tape* tape) {
    require(logits.ndim() == 2, "softmax_cross_entropy: logits must be [B,K], got " +
                                    shape_str(logits.shape()));
    const std::int64_t B = logits.dim(0), K = logits.dim(1);
    require(B > 0, "softmax_cross_entropy: zero-sized batch rejected");
    require(static_cast<std::int64_t>(labels.size()) == B,
            "softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                " != batch " + std::to_string(B));
    for (auto l : labels)
        require(l >= 0 && l < K, "softmax_cross_entropy: label out of range");

    auto xd = logits.data();
    std::vector<double> probs(static_cast<std::size_t>(B * K));
    double loss = 0.0;
    for (std::int64_t b = 0; b < B; ++b) {
        const double* xp = &xd[static_cast<std::size_t>(b * K)];
        double mx = xp[0];
        for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, xp[k]);
        double z = 0.0;
        for (std::int64_t k = 0; k < K; ++k) z += std::exp(xp[k] - mx);
        const double logz = std::log(z) + mx;
        for (std::int64_t k = 0; k < K; ++k)
            probs[static_cast<std::size_t>(b * K + k)] = std::exp(xp[k] - logz);
        loss += logz - xp[labels[static_cast<std::size_t>(b)]];
    }
    loss /= static_cast<double>(B);

    bool rg = want_grad(logits, tape);
    Tensor y = Tensor::scalar(loss);
    y.set_requires_grad(rg);
    if (rg) {
        std::vector<std::int64_t> lab(labels.begin(), labels.end());
        tape->record("softmax_cross_entropy",
                     [logits = logits, y = y, probs = std::move(probs),
                      lab = std::move(lab)]() mutable {
                         const std::int64_t B = logits.dim(0), K = logits.dim(1);
                         const double g = y.grad()[0] / static_cast<double>(B);
                         auto gx = logits.grad();
                         for (std::int64_t b = 0; b < B; ++b) {
                             for (std::int64_t k = 0; k < K; ++k) {
                                 double p = probs[static_cast<std::size_t>(b * K + k)];
                                 if (k == lab[static_cast<std::size_t>(b)]) p -= 1.0;
                                 gx[static_cast<std::size_t>(b * K + k)] += g * p;
                             }
                         }
                     });
    }
    return y;
}

double accuracy(const Tensor& logits, std::span<const std::int64_t> labels) {
    require(logits.ndim() == 2, "accuracy: logits must be [B,K]");
    const std::int64_t B = logits.dim(0), K = logits.dim(1);
    require(static_cast<std::int64_t>(labels.size()) == B, "accuracy: label count mismatch");
    auto xd = logits.data();
    std::int64_t hits = 0;
    for (std::int64_t b = 0; b < B; ++b) {
        const double* xp = &xd[static_cast<std::size_t>(b * K)];
        std::int64_t best = 0;
        for (std::int64_t k = 1; k < K; ++k)
            if (xp[k] > xp[best]) best = k;
        if (best == labels[static_cast<std::size_t>(b)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(B);
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double eps) {
    require(eps > 0.0, "finite_diff_grad: eps must be > 0");
    std::vector<double> point(theta.begin(), theta.end());
    std::vector<double> out(point.size(), 0.0);
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + eps;
        const double fp = f(point);
        point[i] = saved - eps;
        const double fm = f(point);
        point[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error("finite_diff_grad: f returned NaN/Inf at coordinate " +
                                     std::to_string(i));
        }
        out[i] = (fp - fm) / (2.0 * eps);
    }
    return out;
}

Tensor apply_primitive(const std::string& kind, std::span<const Tensor> inputs,
                       const Attrs& attrs, Tape* tape) {
    auto arity = [&](std::size_t n) {
        require(inputs.size() == n, "apply_primitive(" + kind + "): expected " +
                                        std::to_string(n) + " inputs, got " +
                                        std::to_string(inputs.size()));
    };
    if (kind == "linear") {
        arity(3);
        return linear(inputs[0], inputs[1], inputs[2], tape);
    }
    if (kind == "conv2d") {
        int stride = static_cast<int>(attrs.get("stride", 1));
        if (inputs.size() == 3) return conv2d(inputs[0], inputs[1], &inputs[2], stride, tape);
        arity(2);
        return conv2d(inputs[0], inputs[1], nullptr, stride, tape);
    }
    if (kind == "depthwise_conv2d") {
        arity(2);
        return depthwise_conv2d(inputs[0], inputs[1], static_cast<int>(attrs.get("stride", 1)),
                                tape);
    }
    if (kind == "relu6") {
        arity(1);
        return relu6(inputs[0], tape);
    }
    if (kind == "batch_norm") {
        arity(5);
        BatchNormOpts o;
        o.training = attrs.get("training", 1.0) != 0.0;
        o.update_running_stats = attrs.get("update_running_stats", 1.0) != 0.0;
        o.momentum = attrs.get("momentum", 0.1);
        o.eps = attrs.get("eps", 1e-5);
        Tensor rm = inputs[3];
        Tensor rv = inputs[4];
        return batch_norm(inputs[0], inputs[1], inputs[2], rm, rv, o, tape);
    }
    if (kind == "global_avg_pool") {
        arity(1);
        return global_avg_pool(inputs[0], tape);
    }
    if (kind == "add") {
        arity(2);
        return add(inputs[0], inputs[1], tape);
    }
    if (kind == "scale") {
        arity(1);
        return scale(inputs[0], attrs.get("factor", 1.0), tape);
    }
    if (kind == "flatten") {
        arity(1);
        return flatten(inputs[0], tape);
    }
    throw std::invalid_argument("apply_primitive: unknown kind '" + kind + "'");
}

}  // namespace fdnas
