#ifndef BABYSEG_NN_OPS_HPP
#define BABYSEG_NN_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "babyseg/tensor.hpp"

namespace babyseg::nn {

// Feature maps are [C, X, Y, Z], z fastest. Kernels are [Cout, Cin, 3, 3, 3],
// biases [Cout]. All convolutions are stride-1 with zero ("same") padding.
//
// Accumulation order inside every kernel is fixed and independent of the
// thread count: OpenMP loops own disjoint output slices, so results are
// deterministic under any parallelism.

struct Dims {
    int c = 0, nx = 0, ny = 0, nz = 0;
    std::size_t plane() const { return std::size_t(ny) * std::size_t(nz); }
    std::size_t chan() const { return std::size_t(nx) * plane(); }
};

inline Dims dims_of(const Tensor& t) {
    if (t.shape.size() != 4) throw std::invalid_argument("expected a [C,X,Y,Z] tensor");
    return {t.shape[0], t.shape[1], t.shape[2], t.shape[3]};
}

namespace detail_conv {

// One fused pass per (dx, dy) source row: the three z-offset taps accumulate
// together, with the z = 0 and z = nz-1 border columns peeled.
inline void row_stencil(float* o, const float* s, float wm, float w0, float wp, int nz) {
    if (nz == 1) {
        o[0] += w0 * s[0];
        return;
    }
    o[0] += w0 * s[0] + wp * s[1];
    for (int z = 1; z < nz - 1; ++z) o[z] += wm * s[z - 1] + w0 * s[z] + wp * s[z + 1];
    o[nz - 1] += wm * s[nz - 2] + w0 * s[nz - 1];
}

} // namespace detail_conv

// out[co] (+)= scale * sum_ci kernel[co][ci] * in[ci], bias optional.
// init = true clears the output to the bias first.
inline void conv3x3_forward(const Tensor& in, const Tensor& kernel, const float* bias, Tensor& out,
                            float scale, bool init) {
    const Dims di = dims_of(in);
    const Dims dout_dims = dims_of(out);
    const int cin = di.c, cout = dout_dims.c;
    const int nx = di.nx, ny = di.ny, nz = di.nz;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        float* outc = out.v.data() + std::size_t(co) * dout_dims.chan();
        if (init) {
            const float b = bias ? bias[co] : 0.0f;
            std::fill(outc, outc + dout_dims.chan(), b);
        }
        for (int ci = 0; ci < cin; ++ci) {
            const float* inc = in.v.data() + std::size_t(ci) * di.chan();
            const float* w = kernel.v.data() + (std::size_t(co) * std::size_t(cin) + std::size_t(ci)) * 27;
            for (int dx = -1; dx <= 1; ++dx)
                for (int dy = -1; dy <= 1; ++dy) {
                    const float* wz = w + ((dx + 1) * 3 + (dy + 1)) * 3;
                    const float wm = wz[0] * scale, w0 = wz[1] * scale, wp = wz[2] * scale;
                    for (int x = std::max(0, -dx); x < std::min(nx, nx - dx); ++x)
                        for (int y = std::max(0, -dy); y < std::min(ny, ny - dy); ++y)
                            detail_conv::row_stencil(
                                outc + (std::size_t(x) * ny + std::size_t(y)) * nz,
                                inc + (std::size_t(x + dx) * ny + std::size_t(y + dy)) * nz, wm, w0,
                                wp, nz);
                }
        }
    }
}

// din[ci] += scale * kernel^T correlation with dout (adjoint of the forward):
// din(x) += w_k dout(x - d), i.e. the same stencil with flipped offsets.
inline void conv3x3_backward_input(const Tensor& dout, const Tensor& kernel, Tensor& din,
                                   float scale) {
    const Dims dd = dims_of(dout);
    const Dims di = dims_of(din);
    const int cin = di.c, cout = dd.c;
    const int nx = di.nx, ny = di.ny, nz = di.nz;
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < cin; ++ci) {
        float* dinc = din.g.data() + std::size_t(ci) * di.chan();
        for (int co = 0; co < cout; ++co) {
            const float* doutc = dout.g.data() + std::size_t(co) * dd.chan();
            const float* w = kernel.v.data() + (std::size_t(co) * std::size_t(cin) + std::size_t(ci)) * 27;
            for (int dx = -1; dx <= 1; ++dx)
                for (int dy = -1; dy <= 1; ++dy) {
                    // kernel tap (kx, ky, kz) scatters along +d; gathering along
                    // -d flips every axis, including the z triple
                    const float* wz = w + ((1 - dx) * 3 + (1 - dy)) * 3;
                    const float wm = wz[2] * scale, w0 = wz[1] * scale, wp = wz[0] * scale;
                    for (int x = std::max(0, -dx); x < std::min(nx, nx - dx); ++x)
                        for (int y = std::max(0, -dy); y < std::min(ny, ny - dy); ++y)
                            detail_conv::row_stencil(
                                dinc + (std::size_t(x) * ny + std::size_t(y)) * nz,
                                doutc + (std::size_t(x + dx) * ny + std::size_t(y + dy)) * nz, wm,
                                w0, wp, nz);
                }
        }
    }
}

// dkernel[co][ci][k] += scale * <dout[co], in[ci] shifted by k>; dbias[co] += sum dout[co].
inline void conv3x3_backward_weights(const Tensor& in, const Tensor& dout, Tensor& dkernel,
                                     float* dbias, float scale) {
    const Dims di = dims_of(in);
    const Dims dd = dims_of(dout);
    const int cin = di.c, cout = dd.c;
    const int nx = di.nx, ny = di.ny, nz = di.nz;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci) {
            const float* doutc = dout.g.data() + std::size_t(co) * dd.chan();
            const float* inc = in.v.data() + std::size_t(ci) * di.chan();
            float* gw = dkernel.g.data() + (std::size_t(co) * std::size_t(cin) + std::size_t(ci)) * 27;
            for (int dx = -1; dx <= 1; ++dx)
                for (int dy = -1; dy <= 1; ++dy) {
                    // the three z taps share the same row pair
                    double am = 0.0, a0 = 0.0, ap = 0.0;
                    for (int x = std::max(0, -dx); x < std::min(nx, nx - dx); ++x)
                        for (int y = std::max(0, -dy); y < std::min(ny, ny - dy); ++y) {
                            const float* o = doutc + (std::size_t(x) * ny + std::size_t(y)) * nz;
                            const float* s =
                                inc + (std::size_t(x + dx) * ny + std::size_t(y + dy)) * nz;
                            float rm = 0.0f, r0 = 0.0f, rp = 0.0f;
                            r0 += o[0] * s[0];
                            if (nz > 1) rp += o[0] * s[1];
#pragma omp simd reduction(+ : rm, r0, rp)
                            for (int z = 1; z < nz - 1; ++z) {
                                rm += o[z] * s[z - 1];
                                r0 += o[z] * s[z];
                                rp += o[z] * s[z + 1];
                            }
                            if (nz > 1) {
                                rm += o[nz - 1] * s[nz - 2];
                                r0 += o[nz - 1] * s[nz - 1];
                            }
                            am += rm;
                            a0 += r0;
                            ap += rp;
                        }
                    float* wz = gw + ((dx + 1) * 3 + (dy + 1)) * 3;
                    wz[0] += float(scale * am);
                    wz[1] += float(scale * a0);
                    wz[2] += float(scale * ap);
                }
        }
    if (dbias) {
        for (int co = 0; co < cout; ++co) {
            const float* doutc = dout.g.data() + std::size_t(co) * dd.chan();
            double acc = 0.0;
            for (std::size_t i = 0; i < dd.chan(); ++i) acc += doutc[i];
            dbias[co] += float(acc);
        }
    }
}

// ELU, alpha = 1, applied in place. Backward uses the outputs: dx = dy for
// y > 0, else dy * (y + 1).
inline void elu_forward(Tensor& t) {
    for (auto& x : t.v) x = x > 0.0f ? x : std::expm1(x);
}

inline void elu_backward(const Tensor& out, Tensor& grad_inout) {
    for (std::size_t i = 0; i < out.v.size(); ++i)
        if (out.v[i] <= 0.0f) grad_inout.g[i] *= out.v[i] + 1.0f;
}

// 2x max pooling per channel; extents must be even. Records the argmax flat
// index per output voxel for the backward routing.
inline Tensor maxpool2_forward(const Tensor& in, std::vector<std::uint32_t>& argmax) {
    const Dims d = dims_of(in);
    if (d.nx % 2 || d.ny % 2 || d.nz % 2)
        throw std::invalid_argument("maxpool2: extents must be even");
    Tensor out = Tensor::zeros({d.c, d.nx / 2, d.ny / 2, d.nz / 2});
    argmax.resize(out.size());
    const Dims od = dims_of(out);
    std::size_t oi = 0;
    for (int c = 0; c < d.c; ++c) {
        const float* inc = in.v.data() + std::size_t(c) * d.chan();
        for (int x = 0; x < od.nx; ++x)
            for (int y = 0; y < od.ny; ++y)
                for (int z = 0; z < od.nz; ++z, ++oi) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::uint32_t best_idx = 0;
                    for (int dx = 0; dx < 2; ++dx)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dz = 0; dz < 2; ++dz) {
                                const std::size_t idx =
                                    (std::size_t(2 * x + dx) * d.ny + std::size_t(2 * y + dy)) * d.nz +
                                    std::size_t(2 * z + dz);
                                const float val = inc[idx];
                                if (val > best) {
                                    best = val;
                                    best_idx = std::uint32_t(idx);
                                }
                            }
                    out.v[oi] = best;
                    argmax[oi] = best_idx;
                }
    }
    return out;
}

inline void maxpool2_backward(const Tensor& dout, const std::vector<std::uint32_t>& argmax,
                              Tensor& din) {
    const Dims d = dims_of(din);
    const Dims od = dims_of(dout);
    std::size_t oi = 0;
    for (int c = 0; c < od.c; ++c) {
        float* dinc = din.g.data() + std::size_t(c) * d.chan();
        for (std::size_t i = 0; i < od.chan(); ++i, ++oi) dinc[argmax[oi]] += dout.g[oi];
    }
}

// Linear 2x upsampling per channel with half-voxel alignment: output i maps
// to input (i - 0.5) / 2, clamped at the borders.
namespace detail_up {

struct Tap {
    int i0, i1;
    float w1; // weight on i1; weight on i0 is 1 - w1
};

inline std::vector<Tap> taps(int n_out, int n_in) {
    std::vector<Tap> out(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
        const double u = (i - 0.5) / 2.0;
        int i0 = int(std::floor(u));
        float w1 = float(u - i0);
        if (i0 < 0) {
            i0 = 0;
            w1 = 0.0f;
        }
        int i1 = i0 + 1;
        if (i1 >= n_in) {
            i1 = n_in - 1;
            w1 = 0.0f;
        }
        out[std::size_t(i)] = {i0, i1, w1};
    }
    return out;
}

} // namespace detail_up

inline Tensor upsample2_forward(const Tensor& in) {
    const Dims d = dims_of(in);
    Tensor out = Tensor::zeros({d.c, d.nx * 2, d.ny * 2, d.nz * 2});
    const Dims od = dims_of(out);
    const auto tx = detail_up::taps(od.nx, d.nx);
    const auto ty = detail_up::taps(od.ny, d.ny);
    const auto tz = detail_up::taps(od.nz, d.nz);
    for (int c = 0; c < d.c; ++c) {
        const float* inc = in.v.data() + std::size_t(c) * d.chan();
        float* outc = out.v.data() + std::size_t(c) * od.chan();
        std::size_t oi = 0;
        for (int x = 0; x < od.nx; ++x)
            for (int y = 0; y < od.ny; ++y)
                for (int z = 0; z < od.nz; ++z, ++oi) {
                    const auto& ax = tx[std::size_t(x)];
                    const auto& ay = ty[std::size_t(y)];
                    const auto& az = tz[std::size_t(z)];
                    float acc = 0.0f;
                    for (int bx = 0; bx < 2; ++bx)
                        for (int by = 0; by < 2; ++by)
                            for (int bz = 0; bz < 2; ++bz) {
                                const float w = (bx ? ax.w1 : 1 - ax.w1) * (by ? ay.w1 : 1 - ay.w1) *
                                                (bz ? az.w1 : 1 - az.w1);
                                if (w == 0.0f) continue;
                                const std::size_t idx =
                                    (std::size_t(bx ? ax.i1 : ax.i0) * d.ny +
                                     std::size_t(by ? ay.i1 : ay.i0)) *
                                        d.nz +
                                    std::size_t(bz ? az.i1 : az.i0);
                                acc += w * inc[idx];
                            }
                    outc[oi] = acc;
                }
    }
    return out;
}

// Exact adjoint of upsample2_forward (scatter with the same weights).
inline void upsample2_backward(const Tensor& dout, Tensor& din) {
    const Dims d = dims_of(din);
    const Dims od = dims_of(dout);
    const auto tx = detail_up::taps(od.nx, d.nx);
    const auto ty = detail_up::taps(od.ny, d.ny);
    const auto tz = detail_up::taps(od.nz, d.nz);
    for (int c = 0; c < d.c; ++c) {
        float* dinc = din.g.data() + std::size_t(c) * d.chan();
        const float* doutc = dout.g.data() + std::size_t(c) * od.chan();
        std::size_t oi = 0;
        for (int x = 0; x < od.nx; ++x)
            for (int y = 0; y < od.ny; ++y)
                for (int z = 0; z < od.nz; ++z, ++oi) {
                    const auto& ax = tx[std::size_t(x)];
                    const auto& ay = ty[std::size_t(y)];
                    const auto& az = tz[std::size_t(z)];
                    const float go = doutc[oi];
                    if (go == 0.0f) continue;
                    for (int bx = 0; bx < 2; ++bx)
                        for (int by = 0; by < 2; ++by)
                            for (int bz = 0; bz < 2; ++bz) {
                                const float w = (bx ? ax.w1 : 1 - ax.w1) * (by ? ay.w1 : 1 - ay.w1) *
                                                (bz ? az.w1 : 1 - az.w1);
                                if (w == 0.0f) continue;
                                const std::size_t idx =
                                    (std::size_t(bx ? ax.i1 : ax.i0) * d.ny +
                                     std::size_t(by ? ay.i1 : ay.i0)) *
                                        d.nz +
                                    std::size_t(bz ? az.i1 : az.i0);
                                dinc[idx] += w * go;
                            }
                }
    }
}

// Channel concatenation [a; b] and the matching gradient split.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Dims da = dims_of(a);
    const Dims db = dims_of(b);
    if (da.nx != db.nx || da.ny != db.ny || da.nz != db.nz)
        throw std::invalid_argument("concat_channels: spatial shapes differ");
    Tensor out = Tensor::zeros({da.c + db.c, da.nx, da.ny, da.nz});
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + std::ptrdiff_t(a.size()));
    return out;
}

inline void split_channels_grad(const Tensor& dout, Tensor& da, Tensor& db) {
    for (std::size_t i = 0; i < da.size(); ++i) da.g[i] += dout.g[i];
    for (std::size_t i = 0; i < db.size(); ++i) db.g[i] += dout.g[i + da.size()];
}

// Per-voxel softmax over the channel dimension, numerically stabilized.
inline Tensor softmax_channels(const Tensor& logits) {
    const Dims d = dims_of(logits);
    Tensor out = Tensor::zeros(logits.shape);
    const std::size_t spatial = d.chan();
    for (std::size_t s = 0; s < spatial; ++s) {
        float mx = -std::numeric_limits<float>::infinity();
        for (int c = 0; c < d.c; ++c) mx = std::max(mx, logits.v[std::size_t(c) * spatial + s]);
        double denom = 0.0;
        for (int c = 0; c < d.c; ++c)
            denom += std::exp(double(logits.v[std::size_t(c) * spatial + s]) - mx);
        for (int c = 0; c < d.c; ++c)
            out.v[std::size_t(c) * spatial + s] =
                float(std::exp(double(logits.v[std::size_t(c) * spatial + s]) - mx) / denom);
    }
    return out;
}

// dlogit_j = p_j * (dprob_j - sum_k dprob_k p_k), written into dlogits.g.
inline void softmax_backward(const Tensor& probs, const Tensor& dprobs, Tensor& dlogits) {
    const Dims d = dims_of(probs);
    const std::size_t spatial = d.chan();
    for (std::size_t s = 0; s < spatial; ++s) {
        double dot = 0.0;
        for (int c = 0; c < d.c; ++c) {
            const std::size_t i = std::size_t(c) * spatial + s;
            dot += double(dprobs.g[i]) * probs.v[i];
        }
        for (int c = 0; c < d.c; ++c) {
            const std::size_t i = std::size_t(c) * spatial + s;
            dlogits.g[i] = probs.v[i] * (dprobs.g[i] - float(dot));
        }
    }
}

} // namespace babyseg::nn

#endif // BABYSEG_NN_OPS_HPP
