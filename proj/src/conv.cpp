#include "stdnet/conv.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace stdnet {

namespace {

void validate_spec(const ConvSpec& s) {
    require(s.in_channels > 0 && s.out_channels > 0, "conv: channel counts must be positive");
    require(s.kt > 0 && s.kh > 0 && s.kw > 0, "conv: kernel extents must be positive");
    require(s.kt % 2 == 1 && s.kh % 2 == 1 && s.kw % 2 == 1, "conv: kernel extents must be odd");
    require(s.dilation >= 1, "conv: dilation must be >= 1");
}

// Tap index range [lo, hi] such that pos + r * (tap - centre) stays in [0, n).
inline void tap_range(i64 pos, i64 n, int extent, int centre, int r, int& lo, int& hi) {
    lo = 0;
    hi = extent - 1;
    // pos - r * centre + r * lo >= 0
    const i64 down = pos - static_cast<i64>(r) * centre;
    if (down < 0) lo = static_cast<int>((-down + r - 1) / r);
    // pos - r * centre + r * hi <= n - 1
    const i64 room = (n - 1) - down;
    if (static_cast<i64>(r) * hi > room) hi = static_cast<int>(room / static_cast<i64>(r));
}

}  // namespace

i64 conv_param_count(const ConvSpec& s) {
    i64 n = s.out_channels * s.in_channels * s.kt * s.kh * s.kw;
    if (s.bias) n += s.out_channels;
    return n;
}

ConvWeights conv_init(const ConvSpec& s, Rng& rng) {
    validate_spec(s);
    ConvWeights wts;
    wts.w = Tensor({s.out_channels, s.in_channels, s.kt, s.kh, s.kw});
    const double fan_in = static_cast<double>(s.in_channels) * s.kt * s.kh * s.kw;
    const double stddev = std::sqrt(2.0 / fan_in);
    for (i64 i = 0; i < wts.w.numel(); ++i) wts.w[i] = rng.normal(0.0, stddev);
    if (s.bias) wts.b = Tensor({s.out_channels});
    return wts;
}

void validate_conv(const ConvSpec& s, const Tensor& x, const ConvWeights& wts) {
    validate_spec(s);
    require(x.rank() == 4, "conv: input must be [C, D, H, W], got " + x.shape_str());
    require(x.dim(0) == s.in_channels,
            "conv: input has " + std::to_string(x.dim(0)) + " channels, spec expects " +
                std::to_string(s.in_channels));
    require(wts.w.rank() == 5 && wts.w.dim(0) == s.out_channels &&
                wts.w.dim(1) == s.in_channels && wts.w.dim(2) == s.kt &&
                wts.w.dim(3) == s.kh && wts.w.dim(4) == s.kw,
            "conv: weight shape " + wts.w.shape_str() + " does not match spec");
    if (s.bias) {
        require(wts.b.rank() == 1 && wts.b.dim(0) == s.out_channels,
                "conv: bias shape mismatch");
    }
}

Tensor conv3d(const Tensor& x, const ConvSpec& s, const ConvWeights& wts) {
    validate_conv(s, x, wts);
    const i64 ci = s.in_channels, co = s.out_channels;
    const i64 d = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int r = s.dilation;
    const int ct = (s.kt - 1) / 2, ch = (s.kh - 1) / 2, cw = (s.kw - 1) / 2;

    Tensor y({co, d, h, w});
    const double* xp = x.data();
    const double* wp = wts.w.data();
    const double* bp = s.bias ? wts.b.data() : nullptr;
    double* yp = y.data();

    const i64 x_c = d * h * w, x_d = h * w;
    const i64 w_oc = ci * s.kt * s.kh * s.kw, w_ic = s.kt * s.kh * s.kw;
    const i64 w_t = s.kh * s.kw, w_m = s.kw;

    for (i64 oc = 0; oc < co; ++oc) {
        const double* wb = wp + oc * w_oc;
        const double bias = bp ? bp[oc] : 0.0;
        double* yo = yp + oc * x_c;
        for (i64 sd = 0; sd < d; ++sd) {
            int t0, t1;
            tap_range(sd, d, s.kt, ct, r, t0, t1);
            for (i64 si = 0; si < h; ++si) {
                int m0, m1;
                tap_range(si, h, s.kh, ch, r, m0, m1);
                double* yrow = yo + sd * h * w + si * w;
                for (i64 sj = 0; sj < w; ++sj) {
                    int n0, n1;
                    tap_range(sj, w, s.kw, cw, r, n0, n1);
                    double acc = 0.0;
                    for (i64 ic = 0; ic < ci; ++ic) {
                        const double* wc = wb + ic * w_ic;
                        const double* xc = xp + ic * x_c;
                        for (int t = t0; t <= t1; ++t) {
                            const i64 src_d = sd + static_cast<i64>(r) * (t - ct);
                            const double* xd = xc + src_d * x_d;
                            const double* wt_row = wc + t * w_t;
                            for (int m = m0; m <= m1; ++m) {
                                const i64 src_i = si + static_cast<i64>(r) * (m - ch);
                                const double* xr = xd + src_i * w;
                                const double* wr = wt_row + m * w_m;
                                for (int n = n0; n <= n1; ++n) {
                                    const i64 src_j = sj + static_cast<i64>(r) * (n - cw);
                                    acc += wr[n] * xr[src_j];
                                }
                            }
                        }
                    }
                    yrow[sj] = acc + bias;
                }
            }
        }
    }
    return y;
}

Tensor conv2d(const Tensor& x, const ConvSpec& s, const ConvWeights& wts) {
    require(s.kt == 1, "conv2d: temporal extent must be 1");
    if (x.rank() == 3) {
        const Tensor x4 = x.reshaped({x.dim(0), 1, x.dim(1), x.dim(2)});
        Tensor y = conv3d(x4, s, wts);
        return y.reshaped({y.dim(0), y.dim(2), y.dim(3)});
    }
    return conv3d(x, s, wts);
}

Tensor conv1d_temporal(const Tensor& x, const ConvSpec& s, const ConvWeights& wts) {
    require(s.kh == 1 && s.kw == 1, "conv1d_temporal: spatial extents must be 1");
    return conv3d(x, s, wts);
}

ConvGrads conv3d_backward(const Tensor& x, const ConvSpec& s, const ConvWeights& wts,
                          const Tensor& upstream) {
    validate_conv(s, x, wts);
    require(upstream.rank() == 4 && upstream.dim(0) == s.out_channels &&
                upstream.dim(1) == x.dim(1) && upstream.dim(2) == x.dim(2) &&
                upstream.dim(3) == x.dim(3),
            "conv3d_backward: upstream shape " + upstream.shape_str() + " mismatch");

    const i64 ci = s.in_channels, co = s.out_channels;
    const i64 d = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int r = s.dilation;
    const int ct = (s.kt - 1) / 2, ch = (s.kh - 1) / 2, cw = (s.kw - 1) / 2;

    ConvGrads g;
    g.x = Tensor({ci, d, h, w});
    g.w = Tensor(wts.w.shape());
    if (s.bias) g.b = Tensor({co});

    const double* xp = x.data();
    const double* wp = wts.w.data();
    const double* up = upstream.data();
    double* gx = g.x.data();
    double* gw = g.w.data();
    double* gb = s.bias ? g.b.data() : nullptr;

    const i64 x_c = d * h * w, x_d = h * w;
    const i64 w_oc = ci * s.kt * s.kh * s.kw, w_ic = s.kt * s.kh * s.kw;
    const i64 w_t = s.kh * s.kw, w_m = s.kw;

    for (i64 oc = 0; oc < co; ++oc) {
        const double* wb = wp + oc * w_oc;
        double* gwb = gw + oc * w_oc;
        const double* uo = up + oc * x_c;
        for (i64 sd = 0; sd < d; ++sd) {
            int t0, t1;
            tap_range(sd, d, s.kt, ct, r, t0, t1);
            for (i64 si = 0; si < h; ++si) {
                int m0, m1;
                tap_range(si, h, s.kh, ch, r, m0, m1);
                const double* urow = uo + sd * x_d + si * w;
                for (i64 sj = 0; sj < w; ++sj) {
                    const double u = urow[sj];
                    if (gb) gb[oc] += u;
                    if (u == 0.0) continue;
                    int n0, n1;
                    tap_range(sj, w, s.kw, cw, r, n0, n1);
                    for (i64 ic = 0; ic < ci; ++ic) {
                        const double* wc = wb + ic * w_ic;
                        double* gwc = gwb + ic * w_ic;
                        const double* xc = xp + ic * x_c;
                        double* gxc = gx + ic * x_c;
                        for (int t = t0; t <= t1; ++t) {
                            const i64 src_d = sd + static_cast<i64>(r) * (t - ct);
                            const double* xd = xc + src_d * x_d;
                            double* gxd = gxc + src_d * x_d;
                            for (int m = m0; m <= m1; ++m) {
                                const i64 src_i = si + static_cast<i64>(r) * (m - ch);
                                const double* xr = xd + src_i * w;
                                double* gxr = gxd + src_i * w;
                                const double* wr = wc + t * w_t + m * w_m;
                                double* gwr = gwc + t * w_t + m * w_m;
                                for (int n = n0; n <= n1; ++n) {
                                    const i64 src_j = sj + static_cast<i64>(r) * (n - cw);
                                    gwr[n] += u * xr[src_j];
                                    gxr[src_j] += u * wr[n];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return g;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& s, const ConvWeights& wts,
                          const Tensor& upstream) {
    require(s.kt == 1, "conv2d_backward: temporal extent must be 1");
    if (x.rank() == 3) {
        const Tensor x4 = x.reshaped({x.dim(0), 1, x.dim(1), x.dim(2)});
        const Tensor u4 = upstream.reshaped({upstream.dim(0), 1, upstream.dim(1), upstream.dim(2)});
        ConvGrads g = conv3d_backward(x4, s, wts, u4);
        g.x = g.x.reshaped({g.x.dim(0), g.x.dim(2), g.x.dim(3)});
        return g;
    }
    return conv3d_backward(x, s, wts, upstream);
}

DecompositionCount decomposition_param_count(int nt, int ns1, int ns2, i64 c_in, i64 c_out,
                                             bool bias) {
    require(nt > 0 && ns1 > 0 && ns2 > 0, "decomposition: extents must be positive");
    require(nt % 2 == 1 && ns1 % 2 == 1 && ns2 % 2 == 1, "decomposition: extents must be odd");
    require(c_in > 0 && c_out > 0, "decomposition: channel counts must be positive");

    const i64 c_mid = c_out;
    DecompositionCount d;
    d.full3d = c_out * c_in * nt * ns1 * ns2;
    d.decomposed = c_mid * c_in * ns1 * ns2 + c_out * c_mid * nt;
    if (bias) {
        d.full3d += c_out;
        d.decomposed += c_mid + c_out;
    }
    d.ratio = static_cast<double>(d.decomposed) / static_cast<double>(d.full3d);
    return d;
}

}  // namespace stdnet
