#include <cmath>
#include <vector>

#include "distillseg/error.hpp"
#include "distillseg/inference.hpp"
#include "distillseg/objectives.hpp"
#include "distillseg/phantom.hpp"
#include "distillseg/random.hpp"
#include "doctest.h"

using namespace distillseg;

TEST_CASE("soft dice worked example") {
    TensorD p(Shape{1, 1, 2, 2, 2}, 0.5), g(Shape{1, 1, 2, 2, 2});
    for (Index i = 0; i < 4; ++i) g[i] = 1;
    CHECK(soft_dice_similarity(p, g) == doctest::Approx(4.0 / 6.0).epsilon(1e-6));
}

TEST_CASE("cross-entropy at one half is ln 2") {
    TensorD p(Shape{2, 3, 4, 4, 4}, 0.5), g(Shape{2, 3, 4, 4, 4});
    Rng r(2);
    for (auto& v : g) v = r.bernoulli(0.4);
    CHECK(std::abs(bce_loss(p, g) - std::log(2.0)) < 1e-12);
}

TEST_CASE("cross-entropy clamps saturated predictions") {
    TensorD p(Shape{1, 1, 1, 1, 2}), g(Shape{1, 1, 1, 1, 2});
    p[0] = 0.0;
    g[0] = 1.0;
    p[1] = 1.0;
    g[1] = 1.0;
    const double expected = -std::log(kBceClamp) / 2 - std::log(1 - kBceClamp) / 2;
    CHECK(bce_loss(p, g) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(std::isfinite(bce_loss(p, g)));
}

TEST_CASE("total loss is dice loss plus cross-entropy") {
    TensorD p(Shape{1, 1, 2, 2, 2}, 0.5), g(Shape{1, 1, 2, 2, 2});
    for (Index i = 0; i < 4; ++i) g[i] = 1;
    const auto l = total_loss(p, g);
    CHECK(l.dice_loss == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    CHECK(l.bce == doctest::Approx(std::log(2.0)));
    CHECK(l.total == doctest::Approx(1.02648).epsilon(1e-5));
}

TEST_CASE("soft dice averages regions and pools the batch") {
    TensorD p(Shape{2, 2, 1, 1, 2}), g(Shape{2, 2, 1, 1, 2});
    // region 0: perfect in both items; region 1: disjoint
    p(0, 0, 0, 0, 0) = 1;
    g(0, 0, 0, 0, 0) = 1;
    p(1, 0, 0, 0, 1) = 1;
    g(1, 0, 0, 0, 1) = 1;
    p(0, 1, 0, 0, 0) = 1;
    g(1, 1, 0, 0, 1) = 1;
    const double perfect = (2 * 2 + kDiceSmooth) / (4 + kDiceSmooth);
    const double disjoint = kDiceSmooth / (2 + kDiceSmooth);
    CHECK(soft_dice_similarity(p, g) == doctest::Approx((perfect + disjoint) / 2).epsilon(1e-12));
}

TEST_CASE("loss gradient matches central differences in double") {
    TensorD p(Shape{1, 3, 3, 3, 3}), g(Shape{1, 3, 3, 3, 3});
    Rng r(5);
    for (auto& v : p) v = r.uniform(0.05, 0.95);
    for (auto& v : g) v = r.bernoulli(0.3);
    TensorD grad;
    total_loss_with_grad(p, g, grad);
    const double h = 1e-6;
    for (Index i = 0; i < p.size(); i += 5) {
        TensorD a = p, b = p;
        a[i] += h;
        b[i] -= h;
        const double fd = (total_loss(a, g).total - total_loss(b, g).total) / (2 * h);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("mismatched shapes are contract errors") {
    TensorD a(Shape{1, 3, 2, 2, 2}), b(Shape{1, 3, 2, 2, 3});
    CHECK_THROWS_AS(soft_dice_similarity(a, b), ContractError);
    CHECK_THROWS_AS(bce_loss(a, b), ContractError);
}

TEST_CASE("hard dice from voxel counts") {
    Tensor<std::uint8_t> p(Shape{4, 4, 4}), g(Shape{4, 4, 4});
    // 6 shared voxels, 2 only predicted, 6 only in the truth
    for (Index i = 0; i < 8; ++i) p[i] = 1;
    for (Index i = 2; i < 14; ++i) g[i] = 1;
    long np = 0, ng = 0, both = 0;
    for (Index z = 0; z < 4; ++z)
        for (Index y = 0; y < 4; ++y)
            for (Index x = 0; x < 4; ++x) {
                np += p(z, y, x) != 0;
                ng += g(z, y, x) != 0;
                both += p(z, y, x) && g(z, y, x);
            }
    REQUIRE(np == 8);
    REQUIRE(ng == 12);
    REQUIRE(both == 6);
    CHECK(dice_metric(p, g) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(dice_metric(g, p) == dice_metric(p, g));
}

TEST_CASE("hard dice edge cases") {
    Tensor<std::uint8_t> e(Shape{3, 3, 3}), f(Shape{3, 3, 3});
    CHECK(dice_metric(e, f) == 1.0);
    f[4] = 1;
    CHECK(dice_metric(e, f) == 0.0);
    CHECK(dice_metric(f, f) == 1.0);
    CHECK_THROWS_AS(dice_metric(e, Tensor<std::uint8_t>(Shape{3, 3, 4})), ContractError);
}

namespace {

MultiModalCase labeled(const Tensor<std::uint8_t>& lab) {
    auto vol = [&](Modality m) { return ModalityVolume(m, TensorF(lab.shape(), 1.0f)); };
    return MultiModalCase("x", {vol(Modality::T1), vol(Modality::T1Gd), vol(Modality::T2), vol(Modality::FLAIR)},
                          LabelMask(lab), CaseSource::Real);
}

}  // namespace

TEST_CASE("evaluation averages per-case dice") {
    Tensor<std::uint8_t> lab(Shape{2, 2, 4});
    for (Index i = 0; i < 5; ++i) lab[i] = kEnhancing;
    const std::vector<MultiModalCase> cases{labeled(lab), labeled(lab)};
    std::vector<TensorF> probs(2, TensorF(Shape{3, 2, 2, 4}));
    for (Index k = 0; k < 3; ++k) {
        for (Index i : {0, 1, 10, 11, 12}) probs[0].slab(k)[i] = 0.9f;  // 2 of 5 hit
        for (Index i : {0, 1, 2, 3, 12}) probs[1].slab(k)[i] = 0.9f;    // 4 of 5 hit
    }
    const auto rep = evaluate_probabilities(probs, cases, 0.5);
    CHECK(rep[kET] == doctest::Approx(0.6));
    CHECK(rep[kTC] == doctest::Approx(0.6));
    CHECK(rep[kWT] == doctest::Approx(0.6));
    CHECK(rep.mean == doctest::Approx(0.6));
    CHECK(rep.n_cases == 2);
}

TEST_CASE("evaluation needs labeled cases") {
    Tensor<std::uint8_t> lab(Shape{2, 2, 2});
    const std::vector<MultiModalCase> unlabeled{labeled(lab).without_label()};
    const std::vector<TensorF> probs{TensorF(Shape{3, 2, 2, 2})};
    CHECK_THROWS_AS(evaluate_probabilities(probs, unlabeled, 0.5), ContractError);
    CHECK_THROWS_AS(evaluate_probabilities({}, {}, 0.5), ContractError);
}

TEST_CASE("binarization keeps values strictly above the threshold") {
    TensorF prob(Shape{3, 1, 1, 3});
    for (Index k = 0; k < 3; ++k) {
        prob(k, 0, 0, 0) = 0.2f;
        prob(k, 0, 0, 1) = 0.7f;
        prob(k, 0, 0, 2) = 0.5f;
    }
    const auto m = binarize(prob, 0.5);
    CHECK(m.data()(0, 0, 0, 0) == 0);
    CHECK(m.data()(0, 0, 0, 1) == 1);
    CHECK(m.data()(2, 0, 0, 2) == 0);
}

TEST_CASE("window origins tile the axis") {
    const SlidingWindow w{32, 0.5};
    CHECK(window_origins(32, w) == std::vector<Index>{0});
    CHECK(window_origins(48, w) == std::vector<Index>{0, 16});
    CHECK(window_origins(50, w) == std::vector<Index>{0, 16, 18});
    CHECK(window_origins(20, w) == std::vector<Index>{-6});
    for (Index extent : {33, 40, 64, 97, 155, 240}) {
        std::vector<int> covered(std::size_t(extent), 0);
        for (Index o : window_origins(extent, w)) {
            CHECK(o >= 0);
            CHECK(o + 32 <= extent);
            for (Index i = o; i < o + 32; ++i) covered[std::size_t(i)]++;
        }
        for (int c : covered) CHECK(c >= 1);
    }
    CHECK(window_origins(100, {32, 0.99}).size() == 69);
}

TEST_CASE("single-window prediction equals a direct forward pass") {
    auto cfg = default_network_config(NetworkKind::UNet3D);
    cfg.base_channels = 4;
    cfg.depth = 2;
    cfg.num_groups = 2;
    const NetworkF net(cfg, 3);
    const auto c = generate_phantom(1, {16, 16, 16});
    TensorF in = stack_modalities(c);
    in.reshape(Shape{1, 4, 16, 16, 16});
    const TensorF direct = net.predict(in);
    const TensorF tiled = predict_case(net, c, {16, 0.5});
    REQUIRE(tiled.size() == direct.size());
    for (Index i = 0; i < tiled.size(); ++i) CHECK(tiled[i] == doctest::Approx(direct[i]).epsilon(1e-6));

    const TensorF odd = predict_case(net, generate_phantom(1, {16, 20, 24}), {16, 0.5});
    CHECK(odd.shape() == Shape{3, 16, 20, 24});
    for (auto v : odd) CHECK((v > 0.0f && v < 1.0f));
    CHECK_THROWS_AS(predict_case(net, c, {15, 0.5}), ShapeError);
    CHECK_THROWS_AS(predict_case(net, c, {16, 1.0}), ParameterError);
}
