#include <cmath>
#include <set>

#include "distillseg/error.hpp"
#include "distillseg/phantom.hpp"
#include "distillseg/preprocess.hpp"
#include "distillseg/random.hpp"
#include "doctest.h"

using namespace distillseg;

TEST_CASE("normalization of {2, 4, 6} among zeros") {
    TensorF t(Shape{4, 4, 4});
    t(0, 0, 1) = 2;
    t(1, 2, 3) = 4;
    t(3, 3, 3) = 6;
    const auto n = normalize_nonzero(ModalityVolume(Modality::T2, t)).data();
    const double z = 2.0 / std::sqrt(8.0 / 3.0);
    CHECK(n(0, 0, 1) == doctest::Approx(-z).epsilon(1e-6));
    CHECK(n(1, 2, 3) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(n(3, 3, 3) == doctest::Approx(z).epsilon(1e-6));
    CHECK(z == doctest::Approx(1.22474).epsilon(1e-5));
    int zeros = 0;
    for (auto v : n) zeros += v == 0.0f;
    CHECK(zeros == 64 - 2);  // 61 background plus the voxel that lands on the mean
}

TEST_CASE("normalized foreground has zero mean and unit variance") {
    const auto c = normalize_case(generate_phantom(4, {24, 24, 24}));
    for (auto m : kModalities) {
        double s = 0, ss = 0;
        long n = 0;
        for (auto v : c.modality(m).data())
            if (v != 0.0f) {
                s += v;
                ss += double(v) * v;
                ++n;
            }
        const double mean = s / double(n);
        CHECK(std::abs(mean) < 1e-5);
        CHECK(ss / double(n) - mean * mean == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("degenerate foreground cannot be normalized") {
    TensorF t(Shape{4, 4, 4});
    CHECK_THROWS_AS(normalize_nonzero(ModalityVolume(Modality::T1, t)), NormalizationError);
    t(0, 0, 0) = 3;
    t(1, 1, 1) = 3;
    CHECK_THROWS_AS(normalize_nonzero(ModalityVolume(Modality::T1, t)), NormalizationError);
}

TEST_CASE("region counts follow the label sets") {
    Tensor<std::uint8_t> lab(Shape{4, 4, 4});
    Index i = 0;
    for (int k = 0; k < 3; ++k) lab[i++] = kEnhancing;
    for (int k = 0; k < 5; ++k) lab[i++] = kNecroticCore;
    for (int k = 0; k < 7; ++k) lab[i++] = kEdema;
    const auto r = labels_to_regions(LabelMask(lab));
    std::array<int, 3> counts{};
    for (int k = 0; k < 3; ++k)
        for (Index j = 0; j < 64; ++j) counts[std::size_t(k)] += r.data()(k, j / 16, (j / 4) % 4, j % 4);
    CHECK(counts == std::array<int, 3>{3, 8, 15});
    CHECK(r.is_nested());
}

TEST_CASE("every 1x1x3 labeling maps to regions and back") {
    const std::array<std::uint8_t, 4> values{0, 1, 2, 4};
    const std::set<int> et{4}, tc{1, 4}, wt{1, 2, 4};
    for (int code = 0; code < 64; ++code) {
        Tensor<std::uint8_t> lab(Shape{1, 1, 3});
        for (int v = 0; v < 3; ++v) lab[v] = values[std::size_t((code >> (2 * v)) & 3)];
        const auto r = labels_to_regions(LabelMask(lab));
        for (int v = 0; v < 3; ++v) {
            CHECK(r.data()(0, 0, 0, v) == int(et.count(lab[v])));
            CHECK(r.data()(1, 0, 0, v) == int(tc.count(lab[v])));
            CHECK(r.data()(2, 0, 0, v) == int(wt.count(lab[v])));
        }
        const auto back = regions_to_labels(r);
        CHECK(std::equal(lab.begin(), lab.end(), back.data().begin()));
    }
}

TEST_CASE("non-nested regions are rejected") {
    Tensor<std::uint8_t> t(Shape{3, 1, 1, 2});
    t(0, 0, 0, 0) = 1;  // ET without TC
    const RegionMask r(t);
    CHECK_FALSE(r.is_nested());
    CHECK_THROWS_AS(regions_to_labels(r), IntegrityError);
    t(0, 0, 0, 1) = 2;
    CHECK_THROWS_AS(RegionMask{t}, IntegrityError);
}

TEST_CASE("patch extraction stays inside and copies the source window") {
    const auto c = generate_phantom(2, {40, 36, 32});
    const auto stacked = stack_modalities(c);
    const auto regions = labels_to_regions(*c.label()).data();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto p = extract_patch(c, 16, seed);
        CHECK(p.inputs.shape() == Shape{4, 16, 16, 16});
        REQUIRE(p.targets.has_value());
        for (int a = 0; a < 3; ++a) {
            CHECK(p.origin[std::size_t(a)] >= 0);
            CHECK(p.origin[std::size_t(a)] + 16 <= c.shape()[std::size_t(a)]);
        }
        const auto [z0, y0, x0] = p.origin;
        CHECK(p.inputs(3, 5, 6, 7) == stacked(3, z0 + 5, y0 + 6, x0 + 7));
        CHECK((*p.targets)(2, 15, 0, 9) == regions(2, z0 + 15, y0, x0 + 9));
    }
    CHECK(extract_patch(c, 16, 5).origin == extract_patch(c, 16, 5).origin);
}

TEST_CASE("short axes are zero-padded symmetrically") {
    const auto c = generate_phantom(2, {20, 32, 32});
    const auto p = extract_patch(c, 32, 1);
    CHECK(p.origin[0] == -6);
    CHECK(p.origin[1] == 0);
    const auto stacked = stack_modalities(c);
    for (Index z = 0; z < 6; ++z) CHECK(p.inputs(0, z, 16, 16) == 0.0f);
    for (Index z = 26; z < 32; ++z) CHECK(p.inputs(0, z, 16, 16) == 0.0f);
    CHECK(p.inputs(0, 16, 16, 16) == stacked(0, 10, 16, 16));
}

TEST_CASE("unlabeled cases yield input-only patches") {
    const auto c = generate_phantom(2, {32, 32, 32}).without_label();
    CHECK_THROWS_AS(extract_patch(c, 16, 0), ContractError);
    CHECK_FALSE(extract_patch(c, 16, 0, false).targets.has_value());
}

TEST_CASE("identity augmentation is a bit-exact no-op") {
    const auto p = extract_patch(generate_phantom(3, {32, 32, 32}), 24, 0);
    TensorF in = p.inputs;
    auto tg = *p.targets;
    apply_augmentation(in, tg, AugmentationParams::identity());
    CHECK(std::equal(in.begin(), in.end(), p.inputs.begin()));
    CHECK(std::equal(tg.begin(), tg.end(), p.targets->begin()));

    AugmentationRanges off;
    off.enabled = false;
    const auto q = draw_augmentation(off, 99);
    CHECK(q.scale == 1.0);
    CHECK(q.mirror == std::array<bool, 3>{false, false, false});
}

TEST_CASE("mirroring flips the axis and is an involution") {
    TensorF in(Shape{1, 2, 3, 4});
    Tensor<std::uint8_t> tg(Shape{1, 2, 3, 4});
    for (Index i = 0; i < 24; ++i) {
        in[i] = float(i);
        tg[i] = std::uint8_t(i % 2);
    }
    AugmentationParams p;
    p.mirror = {false, false, true};
    TensorF a = in;
    auto b = tg;
    apply_augmentation(a, b, p);
    for (Index z = 0; z < 2; ++z)
        for (Index y = 0; y < 3; ++y)
            for (Index x = 0; x < 4; ++x) {
                CHECK(a(0, z, y, x) == in(0, z, y, 3 - x));
                CHECK(b(0, z, y, x) == tg(0, z, y, 3 - x));
            }
    p.mirror = {true, true, true};
    TensorF c = in;
    auto d = tg;
    apply_augmentation(c, d, p);
    apply_augmentation(c, d, p);
    CHECK(std::equal(c.begin(), c.end(), in.begin()));
}

TEST_CASE("quarter turn about the depth axis permutes voxels") {
    const Index n = 6;
    TensorF in(Shape{1, n, n, n});
    Tensor<std::uint8_t> tg(Shape{1, n, n, n});
    Rng r(1);
    for (Index i = 0; i < in.size(); ++i) {
        in[i] = float(r.uniform());
        tg[i] = std::uint8_t(r.bernoulli(0.5));
    }
    AugmentationParams p;
    p.rotation_rad = {std::acos(0.0), 0, 0};
    TensorF a = in;
    auto b = tg;
    apply_augmentation(a, b, p);
    for (Index z = 0; z < n; ++z)
        for (Index y = 0; y < n; ++y)
            for (Index x = 0; x < n; ++x) {
                CHECK(b(0, z, y, x) == tg(0, z, x, n - 1 - y));
                CHECK(a(0, z, y, x) == doctest::Approx(in(0, z, x, n - 1 - y)).epsilon(1e-5));
            }
}

TEST_CASE("random augmentation keeps targets binary and nested") {
    const auto c = generate_phantom(8, {40, 40, 40});
    const AugmentationRanges ranges;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto p = extract_patch(c, 24, seed);
        const auto params = draw_augmentation(ranges, seed);
        const double lim = ranges.max_rotation_deg * std::acos(-1.0) / 180.0;
        for (double a : params.rotation_rad) CHECK(std::abs(a) <= lim);
        CHECK(params.scale >= ranges.scale_min);
        CHECK(params.scale <= ranges.scale_max);
        for (double v : params.contrast) CHECK((v >= ranges.contrast_min && v <= ranges.contrast_max));
        for (double v : params.shift) CHECK(std::abs(v) <= ranges.shift_max);
        apply_augmentation(p.inputs, *p.targets, params);
        CHECK(RegionMask(*p.targets).is_nested());
        for (auto v : p.inputs) CHECK(std::isfinite(v));
    }
}

TEST_CASE("intensity terms touch inputs only") {
    auto p = extract_patch(generate_phantom(3, {32, 32, 32}), 16, 2);
    const TensorF in0 = p.inputs;
    const auto tg0 = *p.targets;
    AugmentationParams q;
    q.contrast = {2, 1, 1, 0.5};
    q.shift = {0, 0.25, 0, 0};
    apply_augmentation(p.inputs, *p.targets, q);
    CHECK(std::equal(tg0.begin(), tg0.end(), p.targets->begin()));
    CHECK(p.inputs(0, 1, 2, 3) == 2 * in0(0, 1, 2, 3));
    CHECK(p.inputs(1, 1, 2, 3) == in0(1, 1, 2, 3) + 0.25f);
    CHECK(p.inputs(2, 1, 2, 3) == in0(2, 1, 2, 3));
    CHECK(p.inputs(3, 1, 2, 3) == 0.5f * in0(3, 1, 2, 3));
}

TEST_CASE("augmentation draws are deterministic") {
    const auto a = draw_augmentation({}, 17), b = draw_augmentation({}, 17), c = draw_augmentation({}, 18);
    CHECK(a.rotation_rad == b.rotation_rad);
    CHECK(a.shift == b.shift);
    CHECK(a.rotation_rad != c.rotation_rad);
}
