#include <filesystem>
#include <vector>

#include "distillseg/distillation.hpp"
#include "distillseg/error.hpp"
#include "distillseg/phantom.hpp"
#include "doctest.h"

using namespace distillseg;

namespace {

NetworkConfig tiny(NetworkKind kind) {
    auto c = default_network_config(kind);
    c.base_channels = 2;
    c.depth = 2;
    c.num_groups = 2;
    return c;
}

TensorF constant(Shape s, float v) { return TensorF(std::move(s), v); }

std::vector<MultiModalCase> phantoms(int n, std::uint64_t base, const std::string& prefix) {
    std::vector<MultiModalCase> v;
    for (int i = 0; i < n; ++i)
        v.push_back(normalize_case(generate_phantom(base + std::uint64_t(i), {16, 16, 16}, {}, prefix + std::to_string(i))));
    return v;
}

}  // namespace

TEST_CASE("average fusion is the voxelwise mean") {
    const Shape s{3, 2, 2, 2};
    const std::vector<TensorF> maps{constant(s, 0.2f), constant(s, 0.6f), constant(s, 0.7f)};
    const auto f = fuse(maps, Fusion::Average);
    for (auto v : f) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("fusing identical members returns the member") {
    TensorF m(Shape{3, 2, 3, 4});
    for (Index i = 0; i < m.size(); ++i) m[i] = float(i) / float(m.size());
    const std::vector<TensorF> maps{m, m, m};
    const auto f = fuse(maps, Fusion::Average);
    for (Index i = 0; i < m.size(); ++i) CHECK(f[i] == doctest::Approx(m[i]).epsilon(1e-7));
}

TEST_CASE("majority fusion votes on binarized members") {
    const Shape s{3, 1, 1, 1};
    const std::vector<TensorF> yes{constant(s, 0.9f), constant(s, 0.8f), constant(s, 0.1f)};
    CHECK(fuse(yes, Fusion::Majority)[0] == 1.0f);
    const std::vector<TensorF> no{constant(s, 0.9f), constant(s, 0.3f), constant(s, 0.1f)};
    CHECK(fuse(no, Fusion::Majority)[0] == 0.0f);
    // a two-way split is not a majority
    const std::vector<TensorF> split{constant(s, 0.9f), constant(s, 0.1f)};
    CHECK(fuse(split, Fusion::Majority)[0] == 0.0f);
}

TEST_CASE("fusion names and bad inputs") {
    CHECK(parse_fusion(fusion_name(Fusion::Majority)) == Fusion::Majority);
    CHECK(parse_fusion("average") == Fusion::Average);
    CHECK_THROWS_AS(parse_fusion("median"), ConfigError);
    const std::vector<TensorF> mixed{constant(Shape{3, 1, 1, 1}, 0.5f), constant(Shape{3, 1, 1, 2}, 0.5f)};
    CHECK_THROWS_AS(fuse(mixed, Fusion::Average), ShapeError);
}

TEST_CASE("an ensemble needs two members") {
    const NetworkF a(tiny(NetworkKind::UNet3D), 1);
    EnsembleSpec spec;
    spec.members = {&a};
    CHECK_THROWS_AS(validate(spec), ParameterError);
    const NetworkF b(tiny(NetworkKind::ResidualUNet3D), 2);
    spec.members.push_back(&b);
    CHECK_NOTHROW(validate(spec));
}

TEST_CASE("ensemble prediction averages member sliding-window maps") {
    const NetworkF a(tiny(NetworkKind::UNet3D), 1), b(tiny(NetworkKind::CascadedUNet3D), 2);
    EnsembleSpec spec;
    spec.members = {&a, &b};
    spec.window = {16, 0.5};
    const auto c = phantoms(1, 5, "e")[0];
    const auto pa = predict_case(a, c, spec.window), pb = predict_case(b, c, spec.window);
    const auto pe = ensemble_predict(spec, c);
    for (Index i = 0; i < pe.size(); i += 97) CHECK(pe[i] == doctest::Approx(0.5 * (pa[i] + pb[i])).epsilon(1e-6));
}

TEST_CASE("nesting repair clears top-down") {
    Tensor<std::uint8_t> r(Shape{3, 1, 1, 2});
    r(kET, 0, 0, 0) = 1;
    r(kWT, 0, 0, 0) = 1;  // (ET, TC, WT) = (1, 0, 1)
    r(kET, 0, 0, 1) = 1;
    r(kTC, 0, 0, 1) = 1;  // (1, 1, 0)
    const Index n = repair_nesting(r);
    CHECK(r(kET, 0, 0, 0) == 0);
    CHECK(r(kTC, 0, 0, 0) == 0);
    CHECK(r(kWT, 0, 0, 0) == 1);
    CHECK(r(kET, 0, 0, 1) == 0);
    CHECK(r(kTC, 0, 0, 1) == 0);
    CHECK(n == 3);
    CHECK(RegionMask(r).is_nested());
}

TEST_CASE("nested masks need no repair") {
    const auto c = generate_phantom(3, {16, 16, 16});
    auto r = labels_to_regions(*c.label()).data();
    const auto before = r;
    CHECK(repair_nesting(r) == 0);
    CHECK(std::equal(r.begin(), r.end(), before.begin()));
}

TEST_CASE("confidence is the mean distance-weighted certainty") {
    TensorF p(Shape{3, 1, 1, 2});
    for (Index k = 0; k < 3; ++k) {
        p(k, 0, 0, 0) = 0.5f;
        p(k, 0, 0, 1) = 0.1f;
    }
    CHECK(mean_confidence(p) == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("pool truth stays hidden until the audit") {
    const NetworkF a(tiny(NetworkKind::UNet3D), 1), b(tiny(NetworkKind::ResidualUNet3D), 2);
    EnsembleSpec spec;
    spec.members = {&a, &b};
    spec.window = {16, 0.5};

    const UnlabeledPool pool(phantoms(4, 50, "pool_"));
    for (const auto& c : pool.view()) CHECK_FALSE(c.has_label());

    const auto pseudo = pseudo_label(spec, pool.view());
    REQUIRE(pseudo.size() == 4);
    for (const auto& p : pseudo) {
        CHECK(p.case_data.source() == CaseSource::PseudoLabeled);
        CHECK(p.region_target.is_nested());
        CHECK(p.mean_confidence >= 0.5);
        CHECK(p.mean_confidence <= 1.0);
        CHECK(std::equal(p.region_target.data().begin(), p.region_target.data().end(),
                         labels_to_regions(*p.case_data.label()).data().begin()));
    }

    const auto original = phantoms(10, 10, "orig_");
    const auto set = build_distill_set(original, pseudo);
    CHECK(set.size() == 14);
    int n_pseudo = 0;
    for (const auto& c : set) n_pseudo += c.source() == CaseSource::PseudoLabeled;
    CHECK(n_pseudo == 4);
    CHECK(std::is_sorted(set.begin(), set.end(), [](const auto& x, const auto& y) { return x.id() < y.id(); }));

    TrainConfig cfg = default_config(NetworkKind::UNet3D);
    cfg.epochs = 1;
    cfg.patch_size = 16;
    cfg.steps_per_epoch = 1;
    const auto student = distill(tiny(NetworkKind::UNet3D), set, {}, cfg);
    CHECK(student.history.size() == 1);
    CHECK(pool.truth_reads() == 0);

    const auto audit = audit_pseudo_labels(pseudo, pool);
    CHECK(pool.truth_reads() == 4);
    CHECK(audit.n_cases == 4);
}

TEST_CASE("pseudo-labeling contracts") {
    const NetworkF a(tiny(NetworkKind::UNet3D), 1), b(tiny(NetworkKind::ResidualUNet3D), 2);
    EnsembleSpec spec;
    spec.members = {&a, &b};
    spec.window = {16, 0.5};
    CHECK_THROWS_AS(pseudo_label(spec, {}), ContractError);
    const auto labeled = phantoms(1, 7, "x");
    CHECK_THROWS_AS(pseudo_label(spec, labeled), ContractError);
    const UnlabeledPool pool(phantoms(1, 7, "x"));
    CHECK_THROWS_AS(pool.audit_truth("nobody"), ContractError);
}

TEST_CASE("distill set rejects collisions and unlabeled cases") {
    const auto a = phantoms(2, 1, "c");
    const auto b = phantoms(1, 9, "c");  // reuses id c0
    const NetworkF m1(tiny(NetworkKind::UNet3D), 1), m2(tiny(NetworkKind::ResidualUNet3D), 2);
    EnsembleSpec spec;
    spec.members = {&m1, &m2};
    spec.window = {16, 0.5};
    const std::vector<MultiModalCase> pool{b[0].without_label()};
    const auto pseudo = pseudo_label(spec, pool);
    CHECK_THROWS_AS(build_distill_set(a, pseudo), ContractError);
    const std::vector<MultiModalCase> bare{a[1].without_label()};
    CHECK_THROWS_AS(build_distill_set(bare, {}), ContractError);
}

TEST_CASE("the student trains on its own seed stream") {
    const auto cs = phantoms(2, 30, "s");
    TrainConfig cfg = default_config(NetworkKind::UNet3D);
    cfg.epochs = 1;
    cfg.patch_size = 16;
    cfg.seed = 5;
    const auto standalone = train_model(tiny(NetworkKind::UNet3D), cs, {}, cfg);
    const auto student = distill(tiny(NetworkKind::UNet3D), cs, {}, cfg);
    CHECK(student.history[0].train.total != standalone.history[0].train.total);
}
