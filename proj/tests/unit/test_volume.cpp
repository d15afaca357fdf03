#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "alamo/rng.hpp"
#include "alamo/volume.hpp"
#include "oracles.hpp"

using namespace alamo;

namespace {

Volume random_volume(Dims3 d, std::uint64_t seed, Spacing sp = {1, 1, 1}) {
    Rng rng(seed);
    Volume v{Grid3<float>(d), sp};
    for (auto& x : v.voxels.values()) x = static_cast<float>(rng.normal());
    return v;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Mvol, ZeroVolumeLoads) {
    const auto dir = oracle::temp_dir("mvol");
    save_volume(Volume{Grid3<float>({2, 2, 2}), {1, 1, 1}}, dir / "z.mvol");
    const Volume v = load_volume(dir / "z.mvol");
    EXPECT_EQ(v.dims(), (Dims3{2, 2, 2}));
    for (float x : v.voxels.values()) EXPECT_EQ(x, 0.0f);
}

TEST(Mvol, PayloadLengthMismatch) {
    const auto dir = oracle::temp_dir("mvol");
    save_volume(Volume{Grid3<float>({3, 3, 3}), {1, 1, 1}}, dir / "v.mvol");
    std::string bytes = read_bytes(dir / "v.mvol");
    bytes.resize(bytes.size() - 4);  // 26 voxels left
    std::ofstream(dir / "v.mvol", std::ios::binary | std::ios::trunc) << bytes;
    try {
        (void)load_volume(dir / "v.mvol");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("payload length mismatch"), std::string::npos);
    }
}

TEST(Mvol, RoundTripIsBitExact) {
    const auto dir = oracle::temp_dir("mvol");
    const Volume v = random_volume({5, 6, 7}, 3, {1.5, 0.7, 2.25});
    save_volume(v, dir / "a.mvol");
    const Volume w = load_volume(dir / "a.mvol");
    EXPECT_EQ(w.spacing, v.spacing);
    ASSERT_EQ(w.voxels.size(), v.voxels.size());
    EXPECT_EQ(std::memcmp(w.voxels.storage().data(), v.voxels.storage().data(), v.voxels.size() * sizeof(float)), 0);
    save_volume(w, dir / "b.mvol");
    EXPECT_EQ(read_bytes(dir / "a.mvol"), read_bytes(dir / "b.mvol"));
}

TEST(Mvol, LabelRoundTripAndRangeCheck) {
    const auto dir = oracle::temp_dir("mvol");
    LabelMap l{Grid3<ClassId>({1, 1, 11}), {1, 1, 1}};
    for (ClassId i = 0; i < 11; ++i) l.voxels(0, 0, i) = i;
    save_labels(l, dir / "l.mvol");
    EXPECT_EQ(load_labels(dir / "l.mvol").voxels, l.voxels);
    l.voxels(0, 0, 3) = 11;
    try {
        save_labels(l, dir / "bad.mvol");
        FAIL() << "expected out_of_range";
    } catch (const std::out_of_range& e) {
        EXPECT_NE(std::string(e.what()).find("class id out of range"), std::string::npos);
    }
}

TEST(Mvol, EmptyDimsRejected) {
    const auto dir = oracle::temp_dir("mvol");
    EXPECT_THROW(save_volume(Volume{Grid3<float>({0, 2, 2}), {1, 1, 1}}, dir / "e.mvol"), ShapeError);
}

TEST(Mvol, BadMagicAndMissingFile) {
    const auto dir = oracle::temp_dir("mvol");
    std::ofstream(dir / "junk.mvol") << "not a volume at all";
    EXPECT_THROW((void)load_volume(dir / "junk.mvol"), IoError);
    EXPECT_THROW((void)load_volume(dir / "missing.mvol"), IoError);
}

TEST(Resample, ConstantStaysConstant) {
    Volume v{Grid3<float>({4, 5, 6}, 3.5f), {2.0, 1.3, 0.8}};
    const Volume r = resample_isotropic(v, 1.2);
    EXPECT_TRUE(r.spacing.is_isotropic());
    for (float x : r.voxels.values()) EXPECT_FLOAT_EQ(x, 3.5f);
}

TEST(Resample, LinearRampMatchesAnalytic) {
    Volume v{Grid3<float>({2, 2, 8}), {1, 1, 1}};
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t x = 0; x < 8; ++x) v.voxels(z, y, x) = static_cast<float>(x);
    const Volume r = resample_isotropic(v, 0.5);
    ASSERT_EQ(r.dims().x, 16u);
    // Output index i sits at physical i * 0.5, i.e. source index i / 2; the last one clamps.
    for (std::size_t x = 0; x + 1 < r.dims().x; ++x) {
        EXPECT_NEAR(r.voxels(1, 1, x), 0.5 * static_cast<double>(x), 1e-6) << "x=" << x;
    }
}

TEST(Resample, NearestLabelsKeepValueSet) {
    LabelMap l{Grid3<ClassId>({6, 6, 6}), {1.0, 2.0, 0.7}};
    for (std::size_t z = 0; z < 6; ++z)
        for (std::size_t y = 0; y < 6; ++y)
            for (std::size_t x = 0; x < 6; ++x) l.voxels(z, y, x) = x < 3 ? 2 : 7;
    const LabelMap r = resample_labels_isotropic(l, 0.9);
    bool saw2 = false, saw7 = false;
    for (ClassId c : r.voxels.values()) {
        ASSERT_TRUE(c == 2 || c == 7);
        saw2 |= c == 2;
        saw7 |= c == 7;
    }
    EXPECT_TRUE(saw2 && saw7);
}

TEST(Standardize, TwoVoxels) {
    Volume v{Grid3<float>({1, 1, 2}, std::vector<float>{1, 3}), {1, 1, 1}};
    const Volume s = standardize(v);
    EXPECT_NEAR(s.voxels(0, 0, 0), -1.0, 1e-6);
    EXPECT_NEAR(s.voxels(0, 0, 1), 1.0, 1e-6);
}

TEST(Standardize, ConstantThrows) {
    EXPECT_THROW((void)standardize(Volume{Grid3<float>({2, 2, 2}, 4.0f), {1, 1, 1}}), std::invalid_argument);
}

TEST(Standardize, RecomputedMomentsAreZeroOne) {
    const Volume s = standardize(random_volume({8, 8, 8}, 9));
    double mean = 0, sq = 0;
    for (float x : s.voxels.values()) mean += x;
    mean /= 512.0;
    for (float x : s.voxels.values()) sq += (x - mean) * (x - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(sq / 512.0), 1.0, 1e-6);
}

TEST(Reslice, TransversalIsIdentity) {
    const Volume v = random_volume({3, 4, 5}, 1);
    EXPECT_EQ(reslice(v, ViewAxis::Transversal).voxels, v.voxels);
}

TEST(Reslice, InverseRestoresOriginal) {
    const Volume v = random_volume({4, 5, 6}, 2);
    for (ViewAxis view : kAllViews) EXPECT_EQ(unreslice(reslice(v, view), view).voxels, v.voxels);
}

TEST(Reslice, MarkedVoxelFollowsPermutationTable) {
    Grid3<float> g({3, 4, 5});
    g(1, 2, 3) = 1.0f;
    const auto c = reslice(g, ViewAxis::Coronal);  // out[y][z][x]
    EXPECT_EQ(c.dims(), (Dims3{4, 3, 5}));
    EXPECT_EQ(c(2, 1, 3), 1.0f);
    const auto s = reslice(g, ViewAxis::Sagittal);  // out[x][z][y]
    EXPECT_EQ(s.dims(), (Dims3{5, 3, 4}));
    EXPECT_EQ(s(3, 1, 2), 1.0f);
}

TEST(Reslice, RequiresIsotropicSpacing) {
    EXPECT_THROW((void)reslice(random_volume({2, 2, 2}, 0, {1, 2, 1}), ViewAxis::Coronal), std::invalid_argument);
}

TEST(Views, ParseNames) {
    EXPECT_EQ(parse_view("t"), ViewAxis::Transversal);
    EXPECT_EQ(parse_view("coronal"), ViewAxis::Coronal);
    EXPECT_EQ(parse_view("s"), ViewAxis::Sagittal);
    EXPECT_THROW((void)parse_view("q"), ConfigError);
}

TEST(RngTest, DeterministicAndDerivedStreamsDiffer) {
    Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(Rng::derive(42, 0).next_u64(), Rng::derive(42, 1).next_u64());
    Rng r(1);
    for (int i = 0; i < 1000; ++i) {
        const auto v = r.uniform_int(3, 7);
        ASSERT_GE(v, 3);
        ASSERT_LE(v, 7);
    }
}
