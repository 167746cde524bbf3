#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "babyseg/core_ops.hpp"
#include "babyseg/resample.hpp"
#include "babyseg/rng.hpp"
#include "oracles.hpp"

using namespace babyseg;

namespace {

Volume ramp_volume(const IVec3& shape) {
    Volume v = Volume::zeros(shape);
    std::size_t i = 0;
    for (int x = 0; x < shape[0]; ++x)
        for (int y = 0; y < shape[1]; ++y)
            for (int z = 0; z < shape[2]; ++z, ++i)
                v.data[i] = float(x + 2 * y + 3 * z);
    return v;
}

} // namespace

TEST_CASE("volume invariants") {
    Volume v = Volume::zeros({2, 3, 4});
    CHECK_NOTHROW(v.validate());
    v.data.pop_back();
    CHECK_THROWS(v.validate());

    Volume bad = Volume::zeros({2, 2, 2});
    bad.affine = Mat4(); // all zeros, singular
    CHECK_THROWS(bad.validate());

    Volume neg = Volume::zeros({2, 2, 2});
    neg.spacing = {1.0, -1.0, 1.0};
    CHECK_THROWS(neg.validate());
}

TEST_CASE("babyseg protocol shape") {
    const LabelProtocol& p = babyseg_protocol();
    CHECK(p.size() == 22);
    CHECK(p.labels[0].id == 0);
    CHECK(p.labels[0].laterality == Laterality::Background);
    int left = 0, right = 0, uni = 0;
    for (const auto& l : p.labels) {
        if (l.laterality == Laterality::Left) ++left;
        if (l.laterality == Laterality::Right) ++right;
        if (l.laterality == Laterality::Unilateral) ++uni;
    }
    CHECK(left == 10);
    CHECK(right == 10);
    CHECK(uni == 1); // brain stem
    for (const auto& l : p.labels)
        if (l.laterality == Laterality::Left) CHECK(p.find(l.partner).partner == l.id);
}

TEST_CASE("identity resample is bitwise equal") {
    Volume v = ramp_volume({5, 4, 3});
    Volume out = resample(v, v.shape, v.spacing, v.affine, Interp::Trilinear);
    CHECK(out.data == v.data);
}

TEST_CASE("upsample then downsample of a constant is constant") {
    // 7 half-spaced voxels span the same FOV as 4 unit voxels, so every
    // sample position stays inside the source hull
    Volume v = Volume::zeros({4, 4, 4});
    std::fill(v.data.begin(), v.data.end(), 3.25f);
    GridSpec up{{7, 7, 7}, {0.5, 0.5, 0.5}, "RAS"};
    Volume v2 = resample(v, up, Interp::Trilinear);
    for (float x : v2.data) CHECK(x == doctest::Approx(3.25f).epsilon(1e-6));
    GridSpec down{{4, 4, 4}, {1.0, 1.0, 1.0}, "RAS"};
    Volume v3 = resample(v2, down, Interp::Trilinear);
    for (float x : v3.data) CHECK(x == doctest::Approx(3.25f).epsilon(1e-6));
}

TEST_CASE("trilinear upsample matches direct interpolation oracle") {
    // 4^3 ramp resampled to 7^3 through the same world geometry
    Volume v = ramp_volume({4, 4, 4});
    v.affine = grid_affine(GridSpec{{4, 4, 4}, {1, 1, 1}, "RAS"});
    const GridSpec target{{7, 7, 7}, {0.5, 0.5, 0.5}, "RAS"};
    const Mat4 target_affine = grid_affine(target, v.world_center());
    Volume out = resample(v, target.shape, target.spacing, target_affine, Interp::Trilinear);

    oracle::Array3 src(4, 4, 4);
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y)
            for (int z = 0; z < 4; ++z) src.at(x, y, z) = v.at(x, y, z);
    const Mat4 to_src = affine_inverse(v.affine) * target_affine;
    for (int x = 0; x < 7; ++x)
        for (int y = 0; y < 7; ++y)
            for (int z = 0; z < 7; ++z) {
                const Vec3 s = transform_point(to_src, {double(x), double(y), double(z)});
                const double expect = oracle::trilinear_at(src, s[0], s[1], s[2]);
                CHECK(out.at(x, y, z) == doctest::Approx(expect).epsilon(1e-5));
            }
}

TEST_CASE("nearest resample never invents label IDs") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        LabelMap lm = LabelMap::zeros({6, 6, 6});
        std::set<std::uint32_t> input_ids;
        for (auto& v : lm.data) {
            v = std::uint32_t(rng.uniform_int(0, 21));
            input_ids.insert(v);
        }
        GridSpec target{{9, 9, 9}, {0.7, 0.7, 0.7}, "LIA"};
        LabelMap out = resample(lm, target);
        for (std::uint32_t v : out.data) CHECK(input_ids.count(v) == 1);
    }
}

TEST_CASE("normalize constant volume maps to zeros") {
    Volume v = Volume::zeros({3, 3, 3});
    std::fill(v.data.begin(), v.data.end(), 7.0f);
    Volume out = normalize(v);
    for (float x : out.data) CHECK(x == 0.0f);
}

TEST_CASE("normalize matches sort-based percentile oracle") {
    Rng rng(21);
    Volume v = Volume::zeros({10, 10, 10});
    for (auto& x : v.data) x = float(rng.uniform());
    // pin the tails so p1/p99 interpolate strictly inside
    v.data[0] = 0.0f;
    v.data[1] = 1.0f;
    Volume out = normalize(v);

    std::vector<double> values(v.data.begin(), v.data.end());
    const double p1 = oracle::percentile(values, 0.01);
    const double p99 = oracle::percentile(values, 0.99);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double c = std::clamp(double(v.data[i]), p1, p99);
        const double expect = (c - p1) / (p99 - p1);
        CHECK(double(out.data[i]) == doctest::Approx(expect).epsilon(1e-6));
        CHECK(out.data[i] >= 0.0f);
        CHECK(out.data[i] <= 1.0f);
    }
}

TEST_CASE("normalize clips an extreme outlier at p99") {
    Volume v = Volume::zeros({10, 10, 10});
    Rng rng(3);
    for (auto& x : v.data) x = float(rng.uniform()); // 1000 unit values
    v.data[500] = 1e6f;
    Volume out = normalize(v);
    std::vector<double> values(v.data.begin(), v.data.end());
    const double p99 = oracle::percentile(values, 0.99);
    CHECK(p99 < 1e6);
    CHECK(out.data[500] == 1.0f); // clipped to p99, rescales to the max
    for (float x : out.data) CHECK(x <= 1.0f);
}

TEST_CASE("normalize is idempotent when p1/p99 equal min/max") {
    Rng rng(31);
    for (int rep = 0; rep < 10; ++rep) {
        Volume v = Volume::zeros({8, 8, 8});
        // 5% mass pinned at each extreme makes p1 = min and p99 = max
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            const double u = rng.uniform();
            v.data[i] = u < 0.05 ? -2.0f : u > 0.95 ? 5.0f : float(rng.uniform(-2.0, 5.0));
        }
        Volume once = normalize(v);
        Volume twice = normalize(once);
        for (std::size_t i = 0; i < v.data.size(); ++i)
            CHECK(double(twice.data[i]) == doctest::Approx(double(once.data[i])).epsilon(1e-6));
    }
}

TEST_CASE("remap identity table") {
    LabelMap lm = LabelMap::zeros({4, 4, 4});
    Rng rng(5);
    for (auto& v : lm.data) v = std::uint32_t(rng.uniform_int(0, 21));
    LabelMergeTable table;
    for (const auto& l : babyseg_protocol().labels) table.map[l.id] = l.id;
    LabelMap out = remap_labels(lm, table);
    CHECK(out.data == lm.data);
}

TEST_CASE("remap merges left and right cerebellum, counts add") {
    LabelMap lm = LabelMap::zeros({4, 4, 4});
    for (std::size_t i = 0; i < 10; ++i) lm.data[i] = 7;
    for (std::size_t i = 10; i < 25; ++i) lm.data[i] = 8;
    LabelMergeTable table;
    for (const auto& l : babyseg_protocol().labels) table.map[l.id] = l.id;
    table.map[8] = 7;
    LabelMap out = remap_labels(lm, table);
    auto counts = out.label_counts();
    CHECK(counts[7] == 25);
    CHECK(counts.count(8) == 0);
}

TEST_CASE("evaluation-style merge matches brute-force tally") {
    // finer source protocol collapsing into the shipped one
    LabelMergeTable table;
    table.map[0] = 0;
    table.map[7] = 7;   // cerebellum WM left
    table.map[8] = 7;   // cerebellum cortex left -> cerebellum
    table.map[12] = 20; // putamen -> basal ganglia
    table.map[13] = 20; // pallidum -> basal ganglia
    table.map[26] = 20; // accumbens -> basal ganglia

    LabelMap lm = LabelMap::zeros({8, 8, 8});
    lm.protocol = LabelProtocol{}; // raw source IDs
    Rng rng(77);
    const std::vector<std::uint32_t> src = {0, 7, 8, 12, 13, 26};
    for (auto& v : lm.data) v = src[std::size_t(rng.uniform_int(0, 5))];

    std::map<std::uint32_t, std::size_t> tally;
    for (std::uint32_t v : lm.data) ++tally[table.map.at(v)];

    LabelMap out = remap_labels(lm, table, babyseg_protocol());
    auto counts = out.label_counts();
    for (const auto& [id, n] : tally) CHECK(counts[id] == n);

    // property: total voxel count per target equals the sum of its sources
    std::size_t total = 0;
    for (const auto& [id, n] : counts) total += n;
    CHECK(total == lm.data.size());
}

TEST_CASE("remap rejects unmapped IDs by name") {
    LabelMap lm = LabelMap::zeros({2, 2, 2});
    lm.data[3] = 42;
    LabelMergeTable table;
    table.map[0] = 0;
    CHECK_THROWS_WITH_AS(remap_labels(lm, table), doctest::Contains("42"), DataError);
}

TEST_CASE("dice of identical maps is 1") {
    LabelMap a = LabelMap::zeros({4, 4, 4});
    Rng rng(9);
    for (auto& v : a.data) v = std::uint32_t(rng.uniform_int(0, 3));
    auto scores = dice_overlap(a, a, {0, 1, 2, 3});
    for (const auto& [id, s] : scores) CHECK(s == 1.0);
}

TEST_CASE("dice of disjoint supports is 0, both-empty is 1") {
    LabelMap a = LabelMap::zeros({2, 2, 2});
    LabelMap b = LabelMap::zeros({2, 2, 2});
    a.data[0] = 1;
    b.data[1] = 1;
    auto scores = dice_overlap(a, b, {1, 2});
    CHECK(scores[1] == 0.0);
    CHECK(scores[2] == 1.0); // label 2 absent from both
}

TEST_CASE("dice half-overlap is 0.5") {
    LabelMap a = LabelMap::zeros({4, 1, 1});
    LabelMap b = LabelMap::zeros({4, 1, 1});
    a.data[0] = a.data[1] = 1;
    b.data[1] = b.data[2] = 1;
    auto scores = dice_overlap(a, b, {1});
    CHECK(scores[1] == 0.5);
}

TEST_CASE("dice is symmetric and invariant under consistent ID permutation") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        LabelMap a = LabelMap::zeros({5, 5, 5});
        LabelMap b = LabelMap::zeros({5, 5, 5});
        for (auto& v : a.data) v = std::uint32_t(rng.uniform_int(0, 4));
        for (auto& v : b.data) v = std::uint32_t(rng.uniform_int(0, 4));
        auto ab = dice_overlap(a, b, {0, 1, 2, 3, 4});
        auto ba = dice_overlap(b, a, {0, 1, 2, 3, 4});
        CHECK(ab == ba);

        // permutation pi(k) = (k + 2) mod 5 applied to both maps
        LabelMap ap = a, bp = b;
        for (auto& v : ap.data) v = (v + 2) % 5;
        for (auto& v : bp.data) v = (v + 2) % 5;
        auto pp = dice_overlap(ap, bp, {0, 1, 2, 3, 4});
        for (std::uint32_t k = 0; k < 5; ++k) CHECK(pp[(k + 2) % 5] == ab[k]);
    }
}

TEST_CASE("dice rejects geometry mismatch") {
    LabelMap a = LabelMap::zeros({2, 2, 2});
    LabelMap b = LabelMap::zeros({2, 2, 3});
    CHECK_THROWS(dice_overlap(a, b, {0}));
}
