#ifndef BABYSEG_GROUPNET_HPP
#define BABYSEG_GROUPNET_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "babyseg/nn_ops.hpp"
#include "babyseg/rng.hpp"
#include "babyseg/tensor.hpp"

namespace babyseg {

inline Tensor grad_like(const Tensor& t) {
    Tensor g = Tensor::zeros(t.shape);
    g.ensure_grad();
    return g;
}

// Group convolution: each entry f_i and the group mean f̄ are convolved with
// shared kernels, f_out_i = 0.5 (V * f_i + W * f̄) + b, optionally ELU.
// The parameter count is independent of the group size n. For n = 1 the two
// convolutions collapse to a single pass with the averaged kernel.
struct GroupConvLayer {
    int cin = 0;
    int cout = 0;
    bool activation = true;
    Tensor V, W, b;

    // caches for the backward pass (one forward in flight per instance)
    GroupFeatures in_cache;
    Tensor mean_cache;
    GroupFeatures out_cache;

    void init(int cin_, int cout_, bool act, Rng rng) {
        cin = cin_;
        cout = cout_;
        activation = act;
        V = Tensor::zeros({cout, cin, 3, 3, 3});
        W = Tensor::zeros({cout, cin, 3, 3, 3});
        b = Tensor::zeros({cout});
        const double limit = std::sqrt(6.0 / (double(cin) * 27.0));
        for (auto& x : V.v) x = float(rng.uniform(-limit, limit));
        for (auto& x : W.v) x = float(rng.uniform(-limit, limit));
        V.ensure_grad();
        W.ensure_grad();
        b.ensure_grad();
    }

    std::size_t param_count() const { return V.size() + W.size() + b.size(); }

    GroupFeatures forward(const GroupFeatures& in) {
        check_group(in);
        if (in.front().shape[0] != cin)
            throw std::invalid_argument("group_conv: channel count does not match layer");
        const std::size_t n = in.size();
        in_cache = in;
        GroupFeatures out;
        const std::vector<int> out_shape = {cout, in[0].shape[1], in[0].shape[2], in[0].shape[3]};

        if (n == 1) {
            // f̄ = f: out = ((V + W) / 2) * f + b in one pass
            Tensor u = Tensor::zeros(V.shape);
            for (std::size_t i = 0; i < u.size(); ++i) u.v[i] = 0.5f * (V.v[i] + W.v[i]);
            Tensor o = Tensor::zeros(out_shape);
            nn::conv3x3_forward(in[0], u, b.v.data(), o, 1.0f, true);
            if (activation) nn::elu_forward(o);
            out.push_back(std::move(o));
            mean_cache = in[0];
        } else {
            // group mean accumulated in double so entry order cannot matter
            mean_cache = Tensor::zeros(in[0].shape);
            const double inv_n = 1.0 / double(n);
            for (std::size_t e = 0; e < mean_cache.size(); ++e) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += in[i].v[e];
                mean_cache.v[e] = float(acc * inv_n);
            }
            // base = b + 0.5 W * f̄ is shared across entries
            Tensor base = Tensor::zeros(out_shape);
            nn::conv3x3_forward(mean_cache, W, b.v.data(), base, 0.5f, true);
            for (std::size_t i = 0; i < n; ++i) {
                Tensor o = base;
                nn::conv3x3_forward(in[i], V, nullptr, o, 0.5f, false);
                if (activation) nn::elu_forward(o);
                out.push_back(std::move(o));
            }
        }
        out_cache = out;
        return out;
    }

    // dout carries gradients in .g; returns input gradients and accumulates
    // parameter gradients into V.g / W.g / b.g.
    GroupFeatures backward(GroupFeatures dout) {
        const std::size_t n = in_cache.size();
        if (dout.size() != n) throw std::invalid_argument("group_conv backward: group size mismatch");
        if (activation)
            for (std::size_t i = 0; i < n; ++i) nn::elu_backward(out_cache[i], dout[i]);

        GroupFeatures din;
        for (std::size_t i = 0; i < n; ++i) din.push_back(grad_like(in_cache[i]));

        if (n == 1) {
            Tensor u = Tensor::zeros(V.shape);
            for (std::size_t i = 0; i < u.size(); ++i) u.v[i] = 0.5f * (V.v[i] + W.v[i]);
            nn::conv3x3_backward_input(dout[0], u, din[0], 1.0f);
            Tensor du = Tensor::zeros(V.shape);
            du.ensure_grad();
            std::vector<float> db(std::size_t(cout), 0.0f);
            nn::conv3x3_backward_weights(in_cache[0], dout[0], du, db.data(), 1.0f);
            for (std::size_t i = 0; i < du.size(); ++i) {
                V.g[i] += 0.5f * du.g[i];
                W.g[i] += 0.5f * du.g[i];
            }
            for (int c = 0; c < cout; ++c) b.g[std::size_t(c)] += db[std::size_t(c)];
            return din;
        }

        // sum of entry gradients drives the shared W path and the bias
        Tensor dsum = grad_like(dout[0]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t e = 0; e < dsum.g.size(); ++e) dsum.g[e] += dout[i].g[e];

        std::vector<float> db(std::size_t(cout), 0.0f);
        nn::conv3x3_backward_weights(mean_cache, dsum, W, db.data(), 0.5f);
        for (int c = 0; c < cout; ++c) b.g[std::size_t(c)] += db[std::size_t(c)];
        for (std::size_t i = 0; i < n; ++i)
            nn::conv3x3_backward_weights(in_cache[i], dout[i], V, nullptr, 0.5f);

        // df_i = 0.5 V^T dout_i + (1/n) 0.5 W^T dsum
        Tensor dmean = grad_like(mean_cache);
        nn::conv3x3_backward_input(dsum, W, dmean, 0.5f);
        const float inv_n = 1.0f / float(n);
        for (std::size_t i = 0; i < n; ++i) {
            nn::conv3x3_backward_input(dout[i], V, din[i], 0.5f);
            for (std::size_t e = 0; e < din[i].g.size(); ++e) din[i].g[e] += inv_n * dmean.g[e];
        }
        return din;
    }
};

// Element-wise mean over group entries (the group fusion layer).
inline Tensor group_fuse(const GroupFeatures& gf) {
    check_group(gf);
    Tensor out = Tensor::zeros(gf[0].shape);
    const double inv_n = 1.0 / double(gf.size());
    for (std::size_t e = 0; e < out.size(); ++e) {
        double acc = 0.0;
        for (const auto& t : gf) acc += t.v[e];
        out.v[e] = float(acc * inv_n);
    }
    return out;
}

// U-Net over group convolutions. The downsampling arm has `levels` blocks of
// two convolutions with max pooling in between; the upsampling arm mirrors it
// with linear upsampling and skip concatenations. Features fuse across the
// group after the second-last block; a final upsampling and K-channel group
// convolution with softmax produce the output map.
//
// Filter counts: the first block derives a single feature before widening to
// `filters`; everything else uses `filters` except the K-channel output.
struct GroupUNet {
    int levels = 6;
    int filters = 64;
    int classes = 22;
    int in_channels = 1;

    std::vector<GroupConvLayer> down1, down2; // per level
    std::vector<GroupConvLayer> up1, up2;     // per skip level L-2 .. 1 in processing order
    GroupConvLayer final_conv;

    GroupUNet() = default;

    GroupUNet(int levels_, int filters_, int classes_, std::uint64_t seed, int in_channels_ = 1)
        : levels(levels_), filters(filters_), classes(classes_), in_channels(in_channels_) {
        if (levels < 1) throw std::invalid_argument("GroupUNet: levels must be >= 1");
        Rng root(seed);
        std::uint64_t key = 0;
        down1.resize(std::size_t(levels));
        down2.resize(std::size_t(levels));
        down1[0].init(in_channels, 1, true, root.split(key++));
        down2[0].init(1, filters, true, root.split(key++));
        for (int l = 1; l < levels; ++l) {
            down1[std::size_t(l)].init(filters, filters, true, root.split(key++));
            down2[std::size_t(l)].init(filters, filters, true, root.split(key++));
        }
        for (int l = levels - 2; l >= 1; --l) {
            GroupConvLayer a, c;
            a.init(2 * filters, filters, true, root.split(key++));
            c.init(filters, filters, true, root.split(key++));
            up1.push_back(std::move(a));
            up2.push_back(std::move(c));
        }
        final_conv.init(filters, classes, false, root.split(key++));
    }

    std::size_t param_count() const {
        std::size_t n = final_conv.param_count();
        for (const auto& l : down1) n += l.param_count();
        for (const auto& l : down2) n += l.param_count();
        for (const auto& l : up1) n += l.param_count();
        for (const auto& l : up2) n += l.param_count();
        return n;
    }

    // named parameter tensors in declared order (weights file + optimizer)
    std::vector<std::pair<std::string, Tensor*>> parameters() {
        std::vector<std::pair<std::string, Tensor*>> out;
        auto add = [&out](const std::string& prefix, GroupConvLayer& l) {
            out.emplace_back(prefix + ".V", &l.V);
            out.emplace_back(prefix + ".W", &l.W);
            out.emplace_back(prefix + ".b", &l.b);
        };
        for (int l = 0; l < levels; ++l) {
            add("down" + std::to_string(l) + ".conv1", down1[std::size_t(l)]);
            add("down" + std::to_string(l) + ".conv2", down2[std::size_t(l)]);
        }
        for (std::size_t j = 0; j < up1.size(); ++j) {
            const int level = levels - 2 - int(j);
            add("up" + std::to_string(level) + ".conv1", up1[j]);
            add("up" + std::to_string(level) + ".conv2", up2[j]);
        }
        add("final", final_conv);
        return out;
    }

    void zero_grad() {
        for (auto& [name, t] : parameters()) t->zero_grad();
    }

    // ---- forward ----

    struct ForwardCache {
        std::size_t n = 0;
        std::vector<std::vector<std::vector<std::uint32_t>>> pool_argmax; // [level][entry]
        GroupFeatures fusion_in;
        Tensor fused;
        Tensor pre_final;
        Tensor logits;
        Tensor probs;
    };
    ForwardCache cache;

    Tensor forward(const GroupFeatures& inputs) {
        check_group(inputs);
        const int div = 1 << (levels - 1);
        for (int a = 1; a <= 3; ++a)
            if (inputs[0].shape[std::size_t(a)] % div != 0)
                throw std::invalid_argument("GroupUNet: extents must be divisible by 2^(levels-1)");
        if (inputs[0].shape[0] != in_channels)
            throw std::invalid_argument("GroupUNet: input channel mismatch");

        cache = ForwardCache{};
        cache.n = inputs.size();
        cache.pool_argmax.assign(std::size_t(std::max(levels - 1, 0)), {});

        GroupFeatures gf = inputs;
        for (const auto& t : gf) nan_check(t, "GroupUNet input");
        for (int l = 0; l < levels; ++l) {
            gf = down1[std::size_t(l)].forward(gf);
            gf = down2[std::size_t(l)].forward(gf);
            for (const auto& t : gf) nan_check(t, "GroupUNet down level");
            if (l < levels - 1) {
                GroupFeatures pooled;
                auto& marks = cache.pool_argmax[std::size_t(l)];
                marks.resize(gf.size());
                for (std::size_t i = 0; i < gf.size(); ++i)
                    pooled.push_back(nn::maxpool2_forward(gf[i], marks[i]));
                gf = std::move(pooled);
            }
        }
        for (std::size_t j = 0; j < up1.size(); ++j) {
            const int level = levels - 2 - int(j);
            GroupFeatures cat;
            for (std::size_t i = 0; i < gf.size(); ++i) {
                Tensor up = nn::upsample2_forward(gf[i]);
                cat.push_back(nn::concat_channels(down2[std::size_t(level)].out_cache[i], up));
            }
            gf = up1[j].forward(cat);
            gf = up2[j].forward(gf);
            for (const auto& t : gf) nan_check(t, "GroupUNet up level");
        }
        cache.fusion_in = gf;
        cache.fused = group_fuse(gf);
        cache.pre_final = levels >= 2 ? nn::upsample2_forward(cache.fused) : cache.fused;
        cache.logits = final_conv.forward({cache.pre_final})[0];
        cache.probs = nn::softmax_channels(cache.logits);
        nan_check(cache.probs, "GroupUNet output");
        return cache.probs;
    }

    // dprobs carries dL/d(probs) in .g; accumulates parameter gradients.
    void backward(Tensor& dprobs) {
        if (cache.n == 0) throw std::runtime_error("GroupUNet: backward before forward");
        Tensor dlogits = grad_like(cache.logits);
        nn::softmax_backward(cache.probs, dprobs, dlogits);
        GroupFeatures dfinal = final_conv.backward({std::move(dlogits)});

        Tensor dfused = grad_like(cache.fused);
        if (levels >= 2) nn::upsample2_backward(dfinal[0], dfused);
        else dfused = std::move(dfinal[0]);

        // fusion backward: every entry receives dfused / n
        GroupFeatures dgf;
        const float inv_n = 1.0f / float(cache.n);
        for (std::size_t i = 0; i < cache.n; ++i) {
            Tensor d = grad_like(cache.fusion_in[i]);
            for (std::size_t e = 0; e < d.g.size(); ++e) d.g[e] = dfused.g[e] * inv_n;
            dgf.push_back(std::move(d));
        }

        // reverse the upsampling arm, accumulating skip gradients per level
        std::vector<GroupFeatures> dskip(static_cast<std::size_t>(levels));
        for (std::size_t jr = up1.size(); jr-- > 0;) {
            const int level = levels - 2 - int(jr);
            dgf = up2[jr].backward(std::move(dgf));
            dgf = up1[jr].backward(std::move(dgf)); // gradients w.r.t. [skip; upsampled]
            GroupFeatures next;
            auto& skip_store = dskip[std::size_t(level)];
            for (std::size_t i = 0; i < dgf.size(); ++i) {
                Tensor dsk = grad_like(down2[std::size_t(level)].out_cache[i]);
                Tensor dup_hi =
                    Tensor::zeros({filters, dgf[i].shape[1], dgf[i].shape[2], dgf[i].shape[3]});
                dup_hi.ensure_grad();
                nn::split_channels_grad(dgf[i], dsk, dup_hi);
                skip_store.push_back(std::move(dsk));
                // adjoint of the upsample back to the coarser grid
                Tensor dlow = Tensor::zeros({filters, dgf[i].shape[1] / 2, dgf[i].shape[2] / 2,
                                             dgf[i].shape[3] / 2});
                dlow.ensure_grad();
                nn::upsample2_backward(dup_hi, dlow);
                next.push_back(std::move(dlow));
            }
            dgf = std::move(next);
        }

        // reverse the downsampling arm
        for (int l = levels - 1; l >= 0; --l) {
            if (!dskip[std::size_t(l)].empty())
                for (std::size_t i = 0; i < dgf.size(); ++i)
                    for (std::size_t e = 0; e < dgf[i].g.size(); ++e)
                        dgf[i].g[e] += dskip[std::size_t(l)][i].g[e];
            dgf = down2[std::size_t(l)].backward(std::move(dgf));
            dgf = down1[std::size_t(l)].backward(std::move(dgf));
            if (l > 0) {
                GroupFeatures prev;
                const auto& marks = cache.pool_argmax[std::size_t(l - 1)];
                for (std::size_t i = 0; i < dgf.size(); ++i) {
                    Tensor d = grad_like(down2[std::size_t(l - 1)].out_cache[i]);
                    nn::maxpool2_backward(dgf[i], marks[i], d);
                    prev.push_back(std::move(d));
                }
                dgf = std::move(prev);
            }
        }
    }
};

} // namespace babyseg

#endif // BABYSEG_GROUPNET_HPP
