#ifndef BABYSEG_TENSOR_HPP
#define BABYSEG_TENSOR_HPP

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace babyseg {

// N-D float32 array with an optional gradient buffer of identical shape.
// Feature maps use [channels, x, y, z] with z fastest.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;
    std::vector<float> g;

    Tensor() = default;

    static Tensor zeros(const std::vector<int>& shape) {
        Tensor t;
        t.shape = shape;
        t.v.assign(t.count(shape), 0.0f);
        return t;
    }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive extent");
            n *= std::size_t(d);
        }
        return n;
    }

    std::size_t size() const { return v.size(); }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0f);
    }

    void zero_grad() {
        if (!g.empty()) std::fill(g.begin(), g.end(), 0.0f);
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void check_finite(const std::string& what) const {
        for (float x : v)
            if (!std::isfinite(x)) throw std::runtime_error(what + ": non-finite value");
    }
};

// Opt-in NaN check hook: when enabled, the network validates activations
// after every stage of the forward pass.
inline bool& nan_check_enabled() {
    static bool enabled = false;
    return enabled;
}

inline void nan_check(const Tensor& t, const char* where) {
    if (nan_check_enabled()) t.check_finite(where);
}

// Ordered list of per-entry feature maps with identical shapes.
using GroupFeatures = std::vector<Tensor>;

inline void check_group(const GroupFeatures& gf) {
    if (gf.empty()) throw std::invalid_argument("GroupFeatures: empty group");
    for (const auto& t : gf)
        if (!t.same_shape(gf.front()))
            throw std::invalid_argument("GroupFeatures: member shapes differ");
}

} // namespace babyseg

#endif // BABYSEG_TENSOR_HPP
