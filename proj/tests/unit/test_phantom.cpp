#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <set>

#include "alamo/phantom.hpp"

using namespace alamo;
using namespace alamo::phantom;

TEST(Phantom, EmptySpecIsBackground) {
    PhantomSpec spec;
    spec.dims = {4, 8, 8};
    spec.intensity_mean[0] = 0.25;
    const auto [v, l] = generate(spec);
    for (ClassId c : l.voxels.values()) EXPECT_EQ(c, 0);
    for (float x : v.voxels.values()) EXPECT_FLOAT_EQ(x, 0.25f);
}

TEST(Phantom, SameSeedSameOutput) {
    const PhantomSpec spec = default_spec({16, 32, 32}, 10, 5);
    const auto a = generate(spec);
    const auto b = generate(spec);
    EXPECT_EQ(a.first.voxels, b.first.voxels);
    EXPECT_EQ(a.second.voxels, b.second.voxels);
    const auto c = generate(default_spec({16, 32, 32}, 10, 6));
    EXPECT_NE(a.first.voxels, c.first.voxels);
}

TEST(Phantom, EllipsoidMatchesEnumeration) {
    PhantomSpec spec;
    spec.dims = {16, 16, 16};
    Shape s;
    s.class_id = 1;
    s.center = {7.5, 7.5, 7.5};
    s.radii = {3, 3, 3};
    spec.shapes = {s};
    const auto [v, l] = generate(spec);
    std::size_t expected = 0, got = 0;
    for (int z = 0; z < 16; ++z)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const double dz = (z - 7.5) / 3, dy = (y - 7.5) / 3, dx = (x - 7.5) / 3;
                expected += dz * dz + dy * dy + dx * dx <= 1.0;
            }
    for (ClassId c : l.voxels.values()) got += c == 1;
    EXPECT_EQ(got, expected);
    EXPECT_GT(got, 0u);
}

TEST(Phantom, DefaultSpecUsesFirstOrgans) {
    const PhantomSpec spec = default_spec({24, 64, 64}, 4, 0);
    EXPECT_EQ(spec.organ_count(), 4u);
    const auto [v, l] = generate(spec);
    std::set<int> seen(l.voxels.values().begin(), l.voxels.values().end());
    EXPECT_EQ(seen, (std::set<int>{0, 1, 2, 3, 4}));
}

TEST(Phantom, AllTenOrgansPresent) {
    const auto [v, l] = generate(default_spec({32, 64, 64}, 10, 2));
    std::set<int> seen(l.voxels.values().begin(), l.voxels.values().end());
    EXPECT_EQ(seen.size(), 11u);
}

TEST(Phantom, ValidateRejectsBadSpecs) {
    PhantomSpec spec = default_spec({16, 32, 32}, 2, 0);
    spec.shapes[1].class_id = spec.shapes[0].class_id;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec = default_spec({16, 32, 32}, 2, 0);
    spec.shapes[0].center = {100, 100, 100};
    EXPECT_THROW(spec.validate(), ConfigError);
    EXPECT_THROW((void)default_spec({16, 32, 32}, 11, 0), ConfigError);
}

TEST(Phantom, SpecJsonRoundTrip) {
    const PhantomSpec spec = default_spec({16, 32, 32}, 10, 3, 0.02, 0.05);
    const PhantomSpec back = nlohmann::json(spec).get<PhantomSpec>();
    EXPECT_EQ(generate(back).first.voxels, generate(spec).first.voxels);
}

TEST(Split, PublishedCohortSizes) {
    const Split s = split_dataset(102, 0);
    EXPECT_EQ(s.train.size(), 66u);
    EXPECT_EQ(s.val.size(), 16u);
    EXPECT_EQ(s.test.size(), 20u);
}

TEST(Split, ProportionalRounding) {
    const Split s = split_dataset(51, 0);
    EXPECT_EQ(s.train.size(), 33u);
    EXPECT_EQ(s.val.size(), 8u);
    EXPECT_EQ(s.test.size(), 10u);
}

TEST(Split, MinimumCase) {
    const Split s = split_dataset(3, 0);
    EXPECT_EQ(s.train.size(), 1u);
    EXPECT_EQ(s.val.size(), 1u);
    EXPECT_EQ(s.test.size(), 1u);
    EXPECT_THROW((void)split_dataset(2, 0), std::invalid_argument);
}

TEST(Split, PartitionIsDisjointAndComplete) {
    for (std::size_t n : {3u, 7u, 20u, 102u}) {
        const Split s = split_dataset(n, 11);
        std::set<std::size_t> all;
        for (const auto* part : {&s.train, &s.val, &s.test}) {
            EXPECT_TRUE(std::is_sorted(part->begin(), part->end()));
            all.insert(part->begin(), part->end());
        }
        EXPECT_EQ(all.size(), n);
        EXPECT_EQ(*all.rbegin(), n - 1);
    }
}
