#ifndef BABYSEG_GMM_HPP
#define BABYSEG_GMM_HPP

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <vector>

#include "babyseg/rng.hpp"
#include "babyseg/volume.hpp"

namespace babyseg {

struct Gmm1D {
    std::vector<double> weight;
    std::vector<double> mean;
    std::vector<double> variance;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    int iterations = 0;

    int components() const { return int(mean.size()); }

    // Argmax-posterior component for a single value.
    int classify(double x) const {
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < components(); ++c) {
            const double d = x - mean[std::size_t(c)];
            const double score = std::log(weight[std::size_t(c)]) -
                                 0.5 * std::log(variance[std::size_t(c)]) -
                                 0.5 * d * d / variance[std::size_t(c)];
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        return best;
    }
};

namespace detail {

constexpr double kGmmVarFloor = 1e-10;

inline double gmm_log_likelihood(const std::vector<double>& values, const Gmm1D& g) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    double total = 0.0;
    for (double x : values) {
        double p = 0.0;
        for (int c = 0; c < g.components(); ++c) {
            const double d = x - g.mean[std::size_t(c)];
            p += g.weight[std::size_t(c)] * inv_sqrt_2pi / std::sqrt(g.variance[std::size_t(c)]) *
                 std::exp(-0.5 * d * d / g.variance[std::size_t(c)]);
        }
        total += std::log(std::max(p, 1e-300));
    }
    return total;
}

// k-means-style quantile init: means at evenly spaced quantiles, optionally
// jittered for restarts.
inline Gmm1D gmm_init(const std::vector<double>& sorted, int k, double jitter, Rng& rng) {
    Gmm1D g;
    g.weight.assign(std::size_t(k), 1.0 / k);
    g.mean.resize(std::size_t(k));
    g.variance.resize(std::size_t(k));
    double sum = 0.0, sum2 = 0.0;
    for (double v : sorted) {
        sum += v;
        sum2 += v * v;
    }
    const double n = double(sorted.size());
    const double var = std::max(sum2 / n - (sum / n) * (sum / n), kGmmVarFloor);
    for (int c = 0; c < k; ++c) {
        double q = (c + 0.5) / double(k);
        if (jitter > 0.0) q = std::clamp(q + rng.uniform(-jitter, jitter), 0.0, 1.0);
        const std::size_t idx =
            std::min(std::size_t(q * (n - 1) + 0.5), std::size_t(sorted.size() - 1));
        g.mean[std::size_t(c)] = sorted[idx];
        g.variance[std::size_t(c)] = std::max(var / double(k * k), kGmmVarFloor);
    }
    return g;
}

} // namespace detail

// EM fit of a k-component 1-D Gaussian mixture. Runs until the relative
// log-likelihood change drops below tol or max_iters, whichever first;
// `restarts` jittered re-initializations keep the best likelihood.
inline Gmm1D fit_gmm(const std::vector<double>& values, int k, Rng& rng, double tol = 1e-6,
                     int max_iters = 500, int restarts = 3) {
    if (k < 1) throw std::invalid_argument("fit_gmm: k must be >= 1");
    if (int(values.size()) < k) throw std::invalid_argument("fit_gmm: fewer values than components");
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());

    Gmm1D best;
    for (int r = 0; r < restarts; ++r) {
        Gmm1D g = detail::gmm_init(sorted, k, r == 0 ? 0.0 : 0.3, rng);
        double prev = detail::gmm_log_likelihood(values, g);
        std::vector<double> resp(values.size() * std::size_t(k));
        for (int iter = 0; iter < max_iters; ++iter) {
            // E step
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < values.size(); ++i) {
                double denom = 0.0;
                for (int c = 0; c < k; ++c) {
                    const double d = values[i] - g.mean[std::size_t(c)];
                    const double p = g.weight[std::size_t(c)] * inv_sqrt_2pi /
                                     std::sqrt(g.variance[std::size_t(c)]) *
                                     std::exp(-0.5 * d * d / g.variance[std::size_t(c)]);
                    resp[i * std::size_t(k) + std::size_t(c)] = p;
                    denom += p;
                }
                if (denom <= 0.0) {
                    for (int c = 0; c < k; ++c) resp[i * std::size_t(k) + std::size_t(c)] = 1.0 / k;
                } else {
                    for (int c = 0; c < k; ++c) resp[i * std::size_t(k) + std::size_t(c)] /= denom;
                }
            }
            // M step
            for (int c = 0; c < k; ++c) {
                double nk = 0.0, mk = 0.0;
                for (std::size_t i = 0; i < values.size(); ++i) {
                    nk += resp[i * std::size_t(k) + std::size_t(c)];
                    mk += resp[i * std::size_t(k) + std::size_t(c)] * values[i];
                }
                if (nk <= 1e-12) { // dead component: park it, keep weights sane
                    g.weight[std::size_t(c)] = 1e-12;
                    continue;
                }
                const double mean = mk / nk;
                double vk = 0.0;
                for (std::size_t i = 0; i < values.size(); ++i) {
                    const double d = values[i] - mean;
                    vk += resp[i * std::size_t(k) + std::size_t(c)] * d * d;
                }
                g.weight[std::size_t(c)] = nk / double(values.size());
                g.mean[std::size_t(c)] = mean;
                g.variance[std::size_t(c)] = std::max(vk / nk, detail::kGmmVarFloor);
            }
            double wsum = 0.0;
            for (double w : g.weight) wsum += w;
            for (auto& w : g.weight) w /= wsum;

            const double cur = detail::gmm_log_likelihood(values, g);
            g.iterations = iter + 1;
            const double rel = std::abs(cur - prev) / std::max(std::abs(prev), 1.0);
            prev = cur;
            if (rel < tol) break;
        }
        g.log_likelihood = prev;
        if (g.log_likelihood > best.log_likelihood) best = g;
    }
    return best;
}

// Labels non-zero intensities outside the brain with transient GMM component
// IDs (kNonBrainLabelBase + component). Brain voxels are untouched. When
// fewer eligible voxels than components exist, k shrinks with a warning.
inline LabelMap fit_nonbrain_gmm(const Volume& image, const LabelMap& lm, int k, Rng& rng) {
    if (!image.same_geometry(lm, 1e-6))
        throw std::invalid_argument("fit_nonbrain_gmm: image and label map not aligned");
    if (k < 1) throw std::invalid_argument("fit_nonbrain_gmm: k must be >= 1");

    std::vector<std::size_t> voxels;
    std::vector<double> values;
    for (std::size_t i = 0; i < lm.data.size(); ++i)
        if (lm.data[i] == 0 && image.data[i] != 0.0f) {
            voxels.push_back(i);
            values.push_back(double(image.data[i]));
        }
    if (values.empty()) throw DataError("fit_nonbrain_gmm: no non-zero voxels outside the brain");
    if (int(values.size()) < k) {
        std::cerr << "warning: fit_nonbrain_gmm: only " << values.size()
                  << " eligible voxels; reducing k from " << k << "\n";
        k = int(values.size());
    }

    const Gmm1D g = fit_gmm(values, k, rng);
    LabelMap out = lm;
    for (std::size_t j = 0; j < voxels.size(); ++j)
        out.data[voxels[j]] = kNonBrainLabelBase + std::uint32_t(g.classify(values[j]));
    return out;
}

} // namespace babyseg

#endif // BABYSEG_GMM_HPP
