#ifndef BABYSEG_TRAIN_HPP
#define BABYSEG_TRAIN_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "babyseg/core_ops.hpp"
#include "babyseg/engine.hpp"
#include "babyseg/groupnet.hpp"
#include "babyseg/resample.hpp"
#include "babyseg/volume.hpp"

namespace babyseg {

inline Tensor volume_to_tensor(const Volume& vol) {
    Tensor t = Tensor::zeros({1, vol.shape[0], vol.shape[1], vol.shape[2]});
    std::copy(vol.data.begin(), vol.data.end(), t.v.begin());
    return t;
}

// One-hot expansion over the protocol's class order. Transient IDs and IDs
// outside the protocol count as background.
inline Tensor one_hot(const LabelMap& lm, const LabelProtocol& protocol) {
    const int K = int(protocol.size());
    Tensor t = Tensor::zeros({K, lm.shape[0], lm.shape[1], lm.shape[2]});
    const std::size_t spatial = lm.data.size();
    std::map<std::uint32_t, int> index;
    for (std::size_t k = 0; k < protocol.size(); ++k) index[protocol.labels[k].id] = int(k);
    for (std::size_t i = 0; i < spatial; ++i) {
        auto it = index.find(lm.data[i]);
        const int k = it == index.end() ? 0 : it->second;
        t.v[std::size_t(k) * spatial + i] = 1.0f;
    }
    return t;
}

// Soft Dice criterion, summed over classes as printed: a perfect one-hot
// prediction with all K classes present scores 1 - K. The denominator is
// guarded by eps; the mean-over-classes variant is available via flag.
// Gradients accumulate into dprobs->g when provided.
inline double dice_loss(const Tensor& probs, const Tensor& onehot, Tensor* dprobs = nullptr,
                        bool mean_variant = false, double eps = 1e-7) {
    if (!probs.same_shape(onehot)) throw std::invalid_argument("dice_loss: shape mismatch");
    const int K = probs.shape[0];
    const std::size_t spatial = probs.size() / std::size_t(K);
    const double class_scale = mean_variant ? 1.0 / double(K) : 1.0;
    double total = 0.0;
    for (int k = 0; k < K; ++k) {
        const float* y = onehot.v.data() + std::size_t(k) * spatial;
        const float* p = probs.v.data() + std::size_t(k) * spatial;
        double inter = 0.0, denom = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) {
            inter += double(y[i]) * double(p[i]);
            denom += double(y[i]) * double(y[i]) + double(p[i]) * double(p[i]);
        }
        const double guarded = denom + eps;
        total += 2.0 * inter / guarded;
        if (dprobs) {
            float* d = dprobs->g.data() + std::size_t(k) * spatial;
            const double inv = 1.0 / (guarded * guarded);
            for (std::size_t i = 0; i < spatial; ++i)
                d[i] -= float(class_scale * (2.0 * double(y[i]) * guarded -
                                             4.0 * inter * double(p[i])) * inv);
        }
    }
    return 1.0 - class_scale * total;
}

// ---- optimizer ---------------------------------------------------------------

struct AdamState {
    std::vector<float> m, v;
};

// Standard Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::map<std::string, AdamState> state;

    void step(std::vector<std::pair<std::string, Tensor*>> params) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (auto& [name, p] : params) {
            if (p->g.size() != p->v.size())
                throw std::invalid_argument("adam_step: missing gradients for " + name);
            AdamState& s = state[name];
            if (s.m.size() != p->v.size()) {
                s.m.assign(p->v.size(), 0.0f);
                s.v.assign(p->v.size(), 0.0f);
            }
            for (std::size_t i = 0; i < p->v.size(); ++i) {
                const double g = p->g[i];
                s.m[i] = float(beta1 * s.m[i] + (1.0 - beta1) * g);
                s.v[i] = float(beta2 * s.v[i] + (1.0 - beta2) * g * g);
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                p->v[i] -= float(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

// ---- inference ----------------------------------------------------------------

inline LabelMap argmax_labels(const Tensor& probs, const LabelProtocol& protocol,
                              const IVec3& shape, const Vec3& spacing, const Mat4& affine) {
    const int K = probs.shape[0];
    LabelMap lm = LabelMap::zeros(shape, spacing, affine, protocol);
    const std::size_t spatial = lm.data.size();
    for (std::size_t i = 0; i < spatial; ++i) {
        int best = 0;
        float best_p = probs.v[i];
        for (int k = 1; k < K; ++k) {
            const float p = probs.v[std::size_t(k) * spatial + i];
            if (p > best_p) {
                best_p = p;
                best = k;
            }
        }
        lm.data[i] = protocol.labels[std::size_t(best)].id;
    }
    return lm;
}

// Percentile-normalizes the inputs, resamples them onto the working grid,
// runs one forward pass, and maps the argmax back to the first input's
// native grid.
inline LabelMap segment(GroupUNet& net, const std::vector<Volume>& inputs,
                        const LabelProtocol& protocol, const GridSpec& grid) {
    if (inputs.empty()) throw std::invalid_argument("segment: no inputs");
    if (int(protocol.size()) != net.classes)
        throw std::invalid_argument("segment: protocol size does not match network classes");
    const Mat4 target_affine = grid_affine(grid, inputs[0].world_center());
    GroupFeatures gf;
    for (const auto& in : inputs) {
        Volume norm = normalize(in);
        Volume working = resample(norm, grid.shape, grid.spacing, target_affine, Interp::Trilinear);
        gf.push_back(volume_to_tensor(working));
    }
    const Tensor probs = net.forward(gf);
    LabelMap working = argmax_labels(probs, protocol, grid.shape, grid.spacing, target_affine);
    return resample(working, inputs[0].shape, inputs[0].spacing, inputs[0].affine);
}

// ---- toy training --------------------------------------------------------------

struct CurveRow {
    long step = 0;
    double loss = 0.0;
    double val_dice = std::nan("");
};

struct TrainOptions {
    long steps = 0;
    double lr = 1e-4;
    long lr_drop_step = 0;   // 0 = never; afterwards lr becomes lr_dropped
    double lr_dropped = 1e-5;
    long val_every = 50;
    std::uint64_t val_seed_offset = 0x9000000000000000ull;
    bool mean_dice_variant = false;
    std::function<void(const CurveRow&)> on_step;
};

// Mean Dice over the foreground labels present in the reference map.
inline double foreground_dice(const LabelMap& pred, const LabelMap& truth) {
    std::vector<std::uint32_t> ids;
    for (const auto& [id, count] : truth.label_counts())
        if (id != 0 && count > 0) ids.push_back(id);
    if (ids.empty()) return 1.0;
    return mean_dice(dice_overlap(pred, truth, ids));
}

// Supervised loop: every step draws a fresh engine sample, runs forward,
// Dice loss, backward, and one Adam update. Validation segments a freshly
// generated sample from a disjoint seed stream.
inline std::vector<CurveRow> train_toy(const std::vector<LoadedSession>& sessions,
                                       const EngineConfig& cfg, GroupUNet& net,
                                       const LabelProtocol& protocol, const TrainOptions& opt) {
    if (sessions.empty()) throw std::invalid_argument("train_toy: no sessions");
    if (int(protocol.size()) != net.classes)
        throw std::invalid_argument("train_toy: protocol size does not match network classes");
    Adam adam;
    adam.lr = opt.lr;
    std::vector<CurveRow> curve;
    double last_val = std::nan("");
    for (long step = 0; step < opt.steps; ++step) {
        if (opt.lr_drop_step > 0 && step == opt.lr_drop_step) adam.lr = opt.lr_dropped;
        const std::uint64_t seed = sample_seed(cfg.master_seed, step);
        const std::size_t si =
            sessions.size() == 1
                ? 0
                : std::size_t(Rng(seed).split(98).uniform_int(0, int(sessions.size()) - 1));
        TrainingSample sample = generate_sample(sessions[si], cfg, seed);

        GroupFeatures gf;
        for (const auto& chan : sample.channels) gf.push_back(volume_to_tensor(chan));
        Tensor probs = net.forward(gf);
        const Tensor target = one_hot(sample.labels, protocol);
        Tensor dprobs = grad_like(probs);
        const double loss = dice_loss(probs, target, &dprobs, opt.mean_dice_variant);
        if (!std::isfinite(loss)) throw std::runtime_error("train_toy: non-finite loss");
        net.zero_grad();
        net.backward(dprobs);
        adam.step(net.parameters());

        if (opt.val_every > 0 && (step + 1) % opt.val_every == 0) {
            const std::uint64_t vseed = sample_seed(cfg.master_seed ^ opt.val_seed_offset, step);
            TrainingSample vs = generate_sample(sessions[si], cfg, vseed);
            GroupFeatures vgf;
            for (const auto& chan : vs.channels) vgf.push_back(volume_to_tensor(chan));
            const Tensor vprobs = net.forward(vgf);
            const LabelMap pred = argmax_labels(vprobs, protocol, vs.labels.shape,
                                                vs.labels.spacing, vs.labels.affine);
            last_val = foreground_dice(pred, vs.labels);
        }
        CurveRow row{step, loss, last_val};
        curve.push_back(row);
        if (opt.on_step) opt.on_step(row);
    }
    return curve;
}

inline void save_curve_csv(const std::vector<CurveRow>& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "step,loss,val_dice\n";
    for (const auto& row : curve) {
        out << row.step << "," << row.loss << ",";
        if (!std::isnan(row.val_dice)) out << row.val_dice;
        out << "\n";
    }
}

} // namespace babyseg

#endif // BABYSEG_TRAIN_HPP
