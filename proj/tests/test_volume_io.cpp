#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "distillseg/error.hpp"
#include "distillseg/nifti.hpp"
#include "distillseg/phantom.hpp"
#include "distillseg/random.hpp"
#include "distillseg/split.hpp"
#include "distillseg/volume_io.hpp"
#include "doctest.h"

using namespace distillseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("distillseg_vio_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Raw NIfTI-1 bytes assembled field by field, independent of the writer.
template <typename T>
void put(std::vector<char>& b, std::size_t off, T v, bool big_endian) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if (big_endian) std::reverse(raw, raw + sizeof(T));
    std::memcpy(b.data() + off, raw, sizeof(T));
}

std::vector<char> header(short nx, short ny, short nz, short datatype, short bitpix, float slope, float inter,
                         bool big_endian) {
    std::vector<char> b(352, 0);
    put<int>(b, 0, 348, big_endian);
    put<short>(b, 40, 3, big_endian);
    put<short>(b, 42, nx, big_endian);
    put<short>(b, 44, ny, big_endian);
    put<short>(b, 46, nz, big_endian);
    put<short>(b, 48, 1, big_endian);
    put<short>(b, 70, datatype, big_endian);
    put<short>(b, 72, bitpix, big_endian);
    put<float>(b, 108, 352.0f, big_endian);
    put<float>(b, 112, slope, big_endian);
    put<float>(b, 116, inter, big_endian);
    std::memcpy(b.data() + 344, "n+1", 4);
    return b;
}

void dump(const fs::path& p, const std::vector<char>& b) {
    std::ofstream f(p, std::ios::binary);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

MultiModalCase small_case(const std::string& id, VolumeShape shape = {16, 16, 16}) {
    return generate_phantom(3, shape, TumorSpec{}, id);
}

}  // namespace

TEST_CASE("hand-built int16 file with scaling reads with x fastest") {
    const auto dir = scratch("int16");
    auto b = header(4, 3, 2, 4, 16, 2.0f, 1.0f, false);
    for (short i = 0; i < 24; ++i) {
        b.resize(b.size() + 2);
        put<short>(b, b.size() - 2, static_cast<short>(i - 5), false);
    }
    dump(dir / "a.nii", b);
    const TensorF t = nifti::read_float(dir / "a.nii");
    CHECK(t.shape() == Shape{2, 3, 4});
    for (Index z = 0; z < 2; ++z)
        for (Index y = 0; y < 3; ++y)
            for (Index x = 0; x < 4; ++x) CHECK(t(z, y, x) == float(2 * ((z * 3 + y) * 4 + x - 5) + 1));
}

TEST_CASE("big-endian float32 file is byte-swapped") {
    const auto dir = scratch("be");
    auto b = header(2, 2, 2, 16, 32, 0.0f, 0.0f, true);
    for (int i = 0; i < 8; ++i) {
        b.resize(b.size() + 4);
        put<float>(b, b.size() - 4, 0.25f * float(i), true);
    }
    dump(dir / "b.nii", b);
    const TensorF t = nifti::read_float(dir / "b.nii");
    for (int i = 0; i < 8; ++i) CHECK(t[i] == 0.25f * float(i));
}

TEST_CASE("truncated or foreign files raise LoadError") {
    const auto dir = scratch("bad");
    dump(dir / "short.nii", std::vector<char>(100, 0));
    CHECK_THROWS_AS(nifti::read_float(dir / "short.nii"), LoadError);
    auto b = header(4, 4, 4, 16, 32, 1.0f, 0.0f, false);
    dump(dir / "cut.nii", b);
    CHECK_THROWS_AS(nifti::read_float(dir / "cut.nii"), LoadError);
    CHECK_THROWS_AS(nifti::read_float(dir / "absent.nii.gz"), LoadError);
}

TEST_CASE("gzip round trip is exact for float and u8") {
    const auto dir = scratch("rt");
    TensorF f(Shape{5, 6, 7});
    Rng r(11);
    for (auto& v : f) v = static_cast<float>(r.normal());
    nifti::write(dir / "f.nii.gz", f);
    const TensorF g = nifti::read_float(dir / "f.nii.gz");
    REQUIRE(g.shape() == f.shape());
    CHECK(std::memcmp(g.data(), f.data(), sizeof(float) * std::size_t(f.size())) == 0);

    Tensor<std::uint8_t> u(Shape{3, 4, 5});
    for (auto& v : u) v = static_cast<std::uint8_t>(r.below(5));
    nifti::write(dir / "u.nii", u);
    const auto w = nifti::read_u8(dir / "u.nii");
    CHECK(std::equal(u.begin(), u.end(), w.begin()));
}

TEST_CASE("full-size BraTS extent loads") {
    const auto dir = scratch("full");
    TensorF f(Shape{155, 240, 240});
    f(100, 17, 230) = 3.5f;
    nifti::write(dir / "big.nii.gz", f);
    const TensorF g = nifti::read_float(dir / "big.nii.gz");
    CHECK(g.shape() == Shape{155, 240, 240});
    CHECK(g(100, 17, 230) == 3.5f);
    CHECK(g.array().sum() == doctest::Approx(3.5));
}

TEST_CASE("case directory round trip keeps id, shapes and labels") {
    const auto dir = scratch("case");
    const auto c = small_case("Brats_007");
    save_case(c, dir / "Brats_007");
    CHECK(fs::exists(dir / "Brats_007" / "Brats_007_t1ce.nii.gz"));
    const auto back = load_case(dir / "Brats_007");
    CHECK(back.id() == "Brats_007");
    CHECK(back.shape() == c.shape());
    REQUIRE(back.has_label());
    CHECK(std::equal(c.label()->data().begin(), c.label()->data().end(), back.label()->data().begin()));
    for (auto m : kModalities) {
        const auto& a = c.modality(m).data();
        const auto& b = back.modality(m).data();
        CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * std::size_t(a.size())) == 0);
    }
}

TEST_CASE("unlabeled case loads without a mask") {
    const auto dir = scratch("nolabel");
    save_case(small_case("u1").without_label(), dir / "u1");
    const auto c = load_case(dir / "u1");
    CHECK_FALSE(c.has_label());
}

TEST_CASE("missing modality is a LoadError naming it") {
    const auto dir = scratch("missing");
    save_case(small_case("c1"), dir / "c1");
    fs::remove(dir / "c1" / "c1_t2.nii.gz");
    try {
        load_case(dir / "c1");
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("_t2") != std::string::npos);
    }
}

TEST_CASE("modality shape mismatch is an IntegrityError") {
    const auto dir = scratch("mismatch");
    save_case(small_case("c2"), dir / "c2");
    nifti::write(dir / "c2" / "c2_flair.nii.gz", TensorF(Shape{16, 16, 17}));
    CHECK_THROWS_AS(load_case(dir / "c2"), IntegrityError);
}

TEST_CASE("label value 3 is rejected") {
    Tensor<std::uint8_t> t(Shape{4, 4, 4});
    t(1, 2, 3) = 3;
    CHECK_THROWS_AS(LabelMask{t}, IntegrityError);
    const auto dir = scratch("label3");
    save_case(small_case("c3"), dir / "c3");
    Tensor<std::uint8_t> bad(Shape{16, 16, 16});
    bad(0, 0, 0) = 3;
    nifti::write(dir / "c3" / "c3_seg.nii.gz", bad);
    CHECK_THROWS_AS(load_case(dir / "c3"), IntegrityError);
}

TEST_CASE("mask save and load") {
    const auto dir = scratch("mask");
    const auto c = small_case("m");
    save_mask(*c.label(), dir / "m_seg.nii.gz");
    const auto back = load_mask(dir / "m_seg.nii.gz");
    CHECK(back.shape() == VolumeShape{16, 16, 16});
    CHECK(std::equal(back.data().begin(), back.data().end(), c.label()->data().begin()));
}

TEST_CASE("unwritable destination is an IoError") {
    const auto dir = scratch("ro");
    std::ofstream(dir / "plain_file") << "x";
    CHECK_THROWS_AS(save_case(small_case("c4"), dir / "plain_file" / "c4"), IoError);
    CHECK_THROWS_AS(nifti::write(dir / "plain_file" / "x.nii.gz", TensorF(Shape{2, 2, 2})), IoError);
}

TEST_CASE("phantoms are deterministic in the seed") {
    const auto a = generate_phantom(42, {32, 32, 32});
    const auto b = generate_phantom(42, {32, 32, 32});
    const auto c = generate_phantom(43, {32, 32, 32});
    const auto& fa = a.modality(Modality::FLAIR).data();
    CHECK(std::memcmp(fa.data(), b.modality(Modality::FLAIR).data().data(), sizeof(float) * std::size_t(fa.size())) ==
          0);
    CHECK(std::memcmp(fa.data(), c.modality(Modality::FLAIR).data().data(), sizeof(float) * std::size_t(fa.size())) !=
          0);
    CHECK(a.source() == CaseSource::Phantom);
}

TEST_CASE("phantom labels nest and background stays zero") {
    const auto c = generate_phantom(5, {32, 32, 32});
    const auto& lab = c.label()->data();
    for (Index i = 0; i < lab.size(); ++i) {
        CHECK(is_valid_label(lab[i]));
        if (lab[i] != 0) CHECK(c.modality(Modality::T1).data()[i] > 0.0f);
    }
    CHECK(c.modality(Modality::T2).data()(0, 0, 0) == 0.0f);
}

TEST_CASE("zero tumor radii give an all-background mask") {
    TumorSpec spec;
    spec.whole_tumor = spec.tumor_core = spec.enhancing = {0, 0, 0};
    const auto c = generate_phantom(9, {24, 24, 24}, spec);
    for (auto v : c.label()->data()) CHECK(v == 0);
}

TEST_CASE("whole-tumor voxel count matches an ellipsoid scan") {
    const VolumeShape shape{32, 32, 32};
    const auto g = phantom_geometry(7, shape, TumorSpec{});
    const auto c = generate_phantom(7, shape);
    const auto& e = g.whole_tumor;
    long expected = 0;
    for (int z = 0; z < 32; ++z)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const double q = std::pow((z - e.center[0]) / e.radii[0], 2) +
                                 std::pow((y - e.center[1]) / e.radii[1], 2) +
                                 std::pow((x - e.center[2]) / e.radii[2], 2);
                expected += q <= 1.0;
            }
    long got = 0;
    for (auto v : c.label()->data()) got += v != 0;
    CHECK(expected > 0);
    CHECK(got == expected);
}

TEST_CASE("non-nested tumor radii are a ParameterError") {
    TumorSpec spec;
    spec.enhancing = {0.3, 0.1, 0.1};
    CHECK_THROWS_AS(generate_phantom(1, {32, 32, 32}, spec), ParameterError);
    CHECK_THROWS_AS(generate_phantom(1, {8, 32, 32}), ParameterError);
}

namespace {

std::vector<std::string> ids(int n) {
    std::vector<std::string> v;
    for (int i = 0; i < n; ++i) v.push_back("case_" + std::to_string(i));
    return v;
}

}  // namespace

TEST_CASE("unlabeled pool carving on the 335/66/191 partition") {
    const double n = 592;
    const auto s = make_split(ids(592), {335 / n, 66 / n, 191 / n}, UnlabeledRule{}, 3);
    CHECK(s.unlabeled_pool.size() == 71);
    CHECK(s.validation.size() == 33);
    CHECK(s.test.size() == 153);
    CHECK(s.train.size() == 335);
}

TEST_CASE("split partitions the ids exactly once") {
    const auto all = ids(20);
    const auto s = make_split(all, {}, UnlabeledRule{}, 7);
    std::vector<std::string> seen;
    for (const auto* part : {&s.train, &s.validation, &s.test, &s.unlabeled_pool})
        seen.insert(seen.end(), part->begin(), part->end());
    std::sort(seen.begin(), seen.end());
    auto sorted = all;
    std::sort(sorted.begin(), sorted.end());
    CHECK(seen == sorted);
    CHECK(s.train.size() == 12);
    CHECK(s.test.size() == 4);
    CHECK(s.validation.size() == 2);
    CHECK(s.unlabeled_pool.size() == 2);
}

TEST_CASE("disabled rule leaves the pool empty") {
    UnlabeledRule rule;
    rule.enabled = false;
    const auto s = make_split(ids(20), {}, rule, 7);
    CHECK(s.unlabeled_pool.empty());
    CHECK(s.validation.size() == 4);
}

TEST_CASE("split is deterministic and seed-sensitive") {
    const auto a = make_split(ids(50), {}, UnlabeledRule{}, 1);
    CHECK(a == make_split(ids(50), {}, UnlabeledRule{}, 1));
    CHECK_FALSE(a == make_split(ids(50), {}, UnlabeledRule{}, 2));
    nlohmann::json j = a;
    CHECK(j.get<DatasetSplit>() == a);
}

TEST_CASE("bad fractions are ConfigErrors") {
    CHECK_THROWS_AS(make_split(ids(10), {0.5, 0.2, 0.2}, UnlabeledRule{}, 1), ConfigError);
    CHECK_THROWS_AS(make_split(ids(10), {1.2, -0.1, -0.1}, UnlabeledRule{}, 1), ConfigError);
    UnlabeledRule rule;
    rule.validation_share = 1.5;
    CHECK_THROWS_AS(make_split(ids(10), {}, rule, 1), ConfigError);
}
