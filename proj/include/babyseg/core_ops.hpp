#ifndef BABYSEG_CORE_OPS_HPP
#define BABYSEG_CORE_OPS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "babyseg/volume.hpp"

namespace babyseg {

// Percentile by linear interpolation between order statistics:
// h = q * (N - 1), result = x[floor(h)] + frac(h) * (x[floor(h)+1] - x[floor(h)]).
inline double percentile_sorted(const std::vector<float>& sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("percentile: empty input");
    const double h = q * double(sorted.size() - 1);
    const std::size_t lo = std::size_t(std::floor(h));
    if (lo + 1 >= sorted.size()) return double(sorted.back());
    const double f = h - double(lo);
    return double(sorted[lo]) + f * (double(sorted[lo + 1]) - double(sorted[lo]));
}

// Clips intensities to the [p1, p99] percentile range and min-max rescales to
// [0, 1]. A constant input maps to all zeros.
inline Volume normalize(const Volume& vol) {
    vol.validate();
    std::vector<float> sorted = vol.data;
    std::sort(sorted.begin(), sorted.end());
    const double p1 = percentile_sorted(sorted, 0.01);
    const double p99 = percentile_sorted(sorted, 0.99);
    Volume out = vol;
    if (!(p99 > p1)) {
        std::fill(out.data.begin(), out.data.end(), 0.0f);
        return out;
    }
    const double scale = 1.0 / (p99 - p1);
    for (auto& v : out.data) {
        const double c = std::clamp(double(v), p1, p99);
        v = float((c - p1) * scale);
    }
    return out;
}

// Per-voxel lookup through a total merge table; geometry is unchanged.
inline LabelMap remap_labels(const LabelMap& lm, const LabelMergeTable& table,
                             const LabelProtocol& target_protocol) {
    LabelMap out = lm;
    out.protocol = target_protocol;
    std::map<std::uint32_t, std::uint32_t> cache;
    for (auto& v : out.data) {
        auto it = cache.find(v);
        if (it == cache.end()) it = cache.emplace(v, table.lookup(v)).first;
        v = it->second;
    }
    return out;
}

inline LabelMap remap_labels(const LabelMap& lm, const LabelMergeTable& table) {
    return remap_labels(lm, table, lm.protocol);
}

// Hard-label Dice per label: 2|A,B overlap| / (|A| + |B|), defined as 1 when
// both sets are empty.
inline std::map<std::uint32_t, double> dice_overlap(const LabelMap& a, const LabelMap& b,
                                                    const std::vector<std::uint32_t>& labels) {
    if (!a.same_geometry(b, 1e-9)) throw std::invalid_argument("dice_overlap: geometry mismatch");
    std::map<std::uint32_t, std::size_t> count_a, count_b, inter;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        ++count_a[a.data[i]];
        ++count_b[b.data[i]];
        if (a.data[i] == b.data[i]) ++inter[a.data[i]];
    }
    std::map<std::uint32_t, double> out;
    for (std::uint32_t k : labels) {
        const std::size_t na = count_a.count(k) ? count_a[k] : 0;
        const std::size_t nb = count_b.count(k) ? count_b[k] : 0;
        const std::size_t ni = inter.count(k) ? inter[k] : 0;
        out[k] = (na + nb == 0) ? 1.0 : 2.0 * double(ni) / double(na + nb);
    }
    return out;
}

inline double mean_dice(const std::map<std::uint32_t, double>& scores) {
    if (scores.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& [id, s] : scores) acc += s;
    return acc / double(scores.size());
}

} // namespace babyseg

#endif // BABYSEG_CORE_OPS_HPP
