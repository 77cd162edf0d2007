#include <kakeya/rng.hpp>
#include <kakeya/shading.hpp>

#include <gtest/gtest.h>

using namespace kakeya;

namespace {

std::vector<Solid> bush(int n, double delta, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Solid> out;
    for (int i = 0; i < n; ++i) {
        Vec3 d(rng.normal(), rng.normal(), std::abs(rng.normal()) + 0.2);
        out.push_back(make_tube(Vec3::Zero(), d, delta));
    }
    return out;
}

CellList random_subset(const CellList& s, double p, Rng& rng)
{
    CellList out;
    for (auto c : s)
        if (rng.uniform() < p)
            out.push_back(c);
    return out;
}

} // namespace

TEST(Density, FullAndEmpty)
{
    int k = 5;
    auto solids = bush(6, 1.0 / 32, 1);
    ShadedFamily f = full_shading(solids, k);
    DensityReport r = density(f);
    EXPECT_DOUBLE_EQ(r.aggregate, 1.0);
    for (double v : r.per_solid)
        EXPECT_DOUBLE_EQ(v, 1.0);
    EXPECT_TRUE(r.uniformly_dense(1.0));
    for (auto& y : f.shadings)
        y.clear();
    EXPECT_DOUBLE_EQ(density(f).aggregate, 0.0);
    EXPECT_FALSE(density(f).uniformly_dense(0.1));
    EXPECT_THROW(density(ShadedFamily{k, {}, {}}), std::invalid_argument);
}

TEST(Density, UpperHalfOfVerticalTubes)
{
    int k = 5;
    double d = 1.0 / 32;
    std::vector<Solid> solids;
    for (int i = 0; i < 4; ++i)
        solids.push_back(make_tube(Vec3(0.1 * i - 0.15, 0.05, 0.0), Vec3::UnitZ(), 2 * d));
    ShadedFamily f = shade_where(solids, k, [](std::size_t, const Vec3& p) { return p.z() >= 0.0; });
    validate(f);
    DensityReport r = density(f);
    for (std::size_t i = 0; i < solids.size(); ++i) {
        // one layer of the cross-section is the tolerance
        CellList all = rasterize_cells(solids[i], k);
        double layer = 0;
        Voxels g(k);
        for (auto c : all)
            layer += std::abs(g.center_flat(c).z() - 0.5 * d) < 1e-12;
        EXPECT_NEAR(r.per_solid[i], 0.5, layer / all.size() + 1e-12);
    }
}

TEST(Multiplicity, CopiesAndDisjoint)
{
    int k = 5;
    Solid t = make_tube(Vec3(0.1, 0.1, 0), Vec3(1, 0, 1), 1.0 / 32);
    ShadedFamily f = full_shading({t, t, t}, k);
    MultiplicityField m = multiplicity(f);
    EXPECT_EQ(m.max, 3u);
    for (auto c : f.shadings[0])
        EXPECT_EQ(m.at(c), 3u);
    std::size_t nz = 0;
    for (auto c : m.counts)
        nz += c != 0;
    EXPECT_EQ(nz, f.shadings[0].size());

    ShadedFamily g = full_shading({make_tube(Vec3(-0.5, 0, 0), Vec3::UnitZ(), 1.0 / 32),
                                   make_tube(Vec3(0.5, 0, 0), Vec3::UnitZ(), 1.0 / 32)},
                                  k);
    EXPECT_EQ(multiplicity(g).max, 1u);
}

TEST(Multiplicity, BushJointMatchesExhaustiveCount)
{
    int k = 5, n = 12;
    ShadedFamily f = full_shading(bush(n, 1.0 / 32, 2), k);
    MultiplicityField m = multiplicity(f);
    EXPECT_EQ(m.max, static_cast<std::uint32_t>(n));
    // exhaustive oracle over every cell and every solid
    Voxels g(k);
    std::size_t mass = 0;
    for (std::size_t c = 0; c < g.cells(); ++c) {
        std::uint32_t cnt = 0;
        for (const auto& s : f.solids)
            cnt += ball_inside(g.center_flat(c), 0.0, as_shape(s));
        ASSERT_EQ(cnt, m.counts[c]);
        mass += cnt;
    }
    EXPECT_EQ(mass, f.mass_cells());
}

TEST(Multiplicity, IntegratesToMass)
{
    Rng rng(3);
    int k = 5;
    ShadedFamily f = full_shading(bush(20, 1.0 / 32, 4), k);
    for (auto& y : f.shadings)
        y = random_subset(y, 0.6, rng);
    MultiplicityField m = multiplicity(f);
    std::size_t sum = std::accumulate(m.counts.begin(), m.counts.end(), std::size_t{0});
    EXPECT_EQ(sum, f.mass_cells());
    std::size_t band_sum = std::accumulate(m.band_mass.begin(), m.band_mass.end(), std::size_t{0});
    EXPECT_EQ(band_sum, f.mass_cells());
}

TEST(Pigeonhole, DisjointAndDoubled)
{
    int k = 5;
    Solid a = make_tube(Vec3(-0.5, 0, 0), Vec3::UnitZ(), 1.0 / 32);
    Solid b = make_tube(Vec3(0.5, 0, 0), Vec3::UnitZ(), 1.0 / 32);
    ShadedFamily f = full_shading({a, b}, k);
    Pigeonhole p = pigeonhole_uniform(f);
    EXPECT_EQ(p.mu, 1u);
    EXPECT_EQ(p.refined.shadings, f.shadings);
    ShadedFamily g = full_shading({a, a}, k);
    Pigeonhole q = pigeonhole_uniform(g);
    EXPECT_EQ(q.mu, 2u);
    EXPECT_EQ(q.refined.shadings, g.shadings);
    EXPECT_DOUBLE_EQ(q.retained, 1.0);
}

TEST(Pigeonhole, BushRetainsBandShare)
{
    int k = 5;
    for (int n : {4, 16, 40}) {
        ShadedFamily f = full_shading(bush(n, 1.0 / 32, 10 + n), k);
        Pigeonhole p = pigeonhole_uniform(f);
        // exhaustive band scan oracle
        MultiplicityField m = multiplicity(f);
        std::size_t best = 0;
        for (std::uint32_t mu = 1; mu <= m.max; mu *= 2) {
            std::size_t mass = 0;
            for (auto c : m.counts)
                if (c >= mu && c < 2 * mu)
                    mass += c;
            best = std::max(best, mass);
        }
        EXPECT_EQ(p.refined.mass_cells(), best);
        EXPECT_GE(p.retained, pigeonhole_floor(n));
        for (const auto& y : p.refined.shadings)
            for (auto c : y) {
                EXPECT_GE(m.counts[c], p.mu);
                EXPECT_LT(m.counts[c], 2 * p.mu);
            }
    }
}

TEST(Pigeonhole, ZeroDensityThrows)
{
    ShadedFamily f{5, {make_tube(Vec3::Zero(), Vec3::UnitZ(), 1.0 / 32)}, {CellList{}}};
    EXPECT_THROW(pigeonhole_uniform(f), std::invalid_argument);
}

TEST(Regularize, FullShadingUnchanged)
{
    int k = 6;
    Solid t = make_tube(Vec3(0.1, 0, 0), Vec3(1, 1, 2), 1.0 / 64);
    CellList y = rasterize_cells(t, k);
    EXPECT_TRUE(is_regular(y, t, k));
    EXPECT_EQ(regularize(y, t, k), y);
}

TEST(Regularize, ConcentrationSurvivesIsolatedCellDeleted)
{
    int k = 6;
    Solid cube = make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(1, 1, 1));
    Voxels g(k);
    CellList y;
    // a 16^3 block in one corner of the cube and a lone cell in the opposite corner
    int base = g.n(0) / 4;
    for (int l = base; l < base + 16; ++l)
        for (int j = base; j < base + 16; ++j)
            for (int i = base; i < base + 16; ++i)
                y.push_back(static_cast<std::uint32_t>(g.index(i, j, l)));
    std::uint32_t lone = static_cast<std::uint32_t>(g.index(3 * base - 1, 3 * base - 1, 3 * base - 1));
    y.push_back(lone);
    std::sort(y.begin(), y.end());
    EXPECT_FALSE(is_regular(y, cube, k));
    CellList out = regularize(y, cube, k);
    EXPECT_TRUE(is_regular(out, cube, k));
    EXPECT_EQ(out.size(), y.size() - 1);
    EXPECT_FALSE(std::binary_search(out.begin(), out.end(), lone));
}

TEST(Regularize, DiffuseSprinkleAroundBlock)
{
    int k = 6;
    Rng rng(5);
    Solid cube = make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(1, 1, 1));
    CellList s = rasterize_cells(cube, k);
    Voxels g(k);
    CellList y;
    for (auto c : s) {
        Vec3 p = g.center_flat(c);
        bool block = (p - Vec3(-0.3, -0.3, -0.3)).lpNorm<Eigen::Infinity>() < 0.1;
        if (block || rng.uniform() < 0.01)
            y.push_back(c);
    }
    CellList out = regularize(y, cube, k);
    EXPECT_TRUE(is_regular(out, cube, k));
    EXPECT_GE(2 * out.size(), y.size());
    // the block itself is never touched
    for (auto c : y) {
        if ((g.center_flat(c) - Vec3(-0.3, -0.3, -0.3)).lpNorm<Eigen::Infinity>() < 0.1) {
            EXPECT_TRUE(std::binary_search(out.begin(), out.end(), c));
        }
    }
}

TEST(Regularize, HalfMassRegularAndIdempotent)
{
    int k = 6;
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        Solid t = make_tube(Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 0),
                            Vec3(rng.normal(), rng.normal(), 1), 1.0 / 32);
        CellList all = rasterize_cells(t, k);
        // sparse tail plus a dense window
        Voxels g(k);
        CellList y;
        double z0 = rng.uniform(-0.4, 0.2);
        for (auto c : all) {
            double along = (g.center_flat(c) - std::get<Tube>(t).anchor).dot(std::get<Tube>(t).dir);
            if ((along > z0 && along < z0 + 0.2) || rng.uniform() < 0.05)
                y.push_back(c);
        }
        CellList out = regularize(y, t, k);
        EXPECT_TRUE(is_regular(out, t, k));
        EXPECT_GE(2 * out.size(), y.size());
        EXPECT_EQ(regularize(out, t, k), out);
        EXPECT_TRUE(std::includes(y.begin(), y.end(), out.begin(), out.end()));
    }
}

TEST(Regularize, VoxelOverload)
{
    Solid t = make_tube(Vec3::Zero(), Vec3::UnitZ(), 1.0 / 16);
    Voxels y = rasterize(t, 1.0 / 32);
    EXPECT_EQ(regularize(y, t), y);
}

TEST(Archive, RoundTrip)
{
    int k = 4;
    Rng rng(7);
    ShadedFamily f = full_shading(bush(3, 1.0 / 16, 8), k);
    f.shadings[1] = random_subset(f.shadings[1], 0.5, rng);
    std::string z = archive_bytes(f);
    EXPECT_EQ(z.substr(0, 2), "PK");
    ShadedFamily g = family_from_archive(z);
    EXPECT_EQ(g.k, f.k);
    EXPECT_EQ(g.shadings, f.shadings);
    ASSERT_EQ(g.solids.size(), f.solids.size());
    std::string bad = z;
    bad[100] ^= 1;
    EXPECT_THROW(family_from_archive(bad), std::exception);
}
