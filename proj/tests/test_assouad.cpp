#include "kakeya/assouad.hpp"
#include "kakeya/generators.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace kakeya;

namespace {

Voxels full_cube(int k)
{
    Voxels v(k);
    for (int l = 0; l < v.n(2); ++l)
        for (int j = 0; j < v.n(1); ++j)
            for (int i = 0; i < v.n(0); ++i)
                v.set(i, j, l);
    return v;
}

Voxels random_tubes(int k, int n, unsigned seed)
{
    Voxels v(k);
    for (const auto& t : gen_random_lines(std::ldexp(1.0, -k), n, seed))
        rasterize_into(v, Solid{t});
    return v;
}

// brute force: enumerate every cell, Chebyshev distance to e in cells
double density_oracle(const Voxels& e, const Vec3& c, double r, double rho)
{
    const int w = static_cast<int>(std::ceil(rho / e.delta() - 1e-9));
    std::size_t hit = 0, total = 0;
    for (int l = 0; l < e.n(2); ++l)
        for (int j = 0; j < e.n(1); ++j)
            for (int i = 0; i < e.n(0); ++i) {
                if ((e.center(i, j, l) - c).squaredNorm() > r * r * (1 + 1e-12))
                    continue;
                ++total;
                bool near = false;
                for (int dl = -w; dl <= w && !near; ++dl)
                    for (int dj = -w; dj <= w && !near; ++dj)
                        for (int di = -w; di <= w && !near; ++di)
                            near = e.in_range(i + di, j + dj, l + dl) && e.get(i + di, j + dj, l + dl);
                hit += near;
            }
    return total ? static_cast<double>(hit) / total : 0.0;
}

ShadedFamily cube_family(int k)
{
    std::vector<Solid> s{make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(2, 2, 2))};
    return full_shading(s, k);
}

} // namespace

TEST(Zeta, FullCubeIsZero)
{
    Voxels e = full_cube(5);
    double d = e.delta();
    EXPECT_EQ(zeta(e, Vec3(0.1, -0.2, 0.3), 0.5, d), 0.0);
    EXPECT_EQ(zeta(e, Vec3(-1, -1, -1), 1.0, 4 * d), 0.0);
}

TEST(Zeta, SingleCellMatchesDirectCount)
{
    const int k = 6;
    Voxels e(k);
    e.set(32, 32, 32);
    double d = e.delta();
    Vec3 c = e.center(32, 32, 32);
    double r = 16 * d;
    double z = zeta(e, c, r, d);
    double oracle = std::log(density_oracle(e, c, r, d)) / std::log(d / r);
    EXPECT_NEAR(z, oracle, 1e-12);
    EXPECT_NEAR(z, oracle, 0.2);
    // 27 dilated cells in a ball of ~17000
    EXPECT_GT(z, 2.2);
    EXPECT_LT(z, 3.2);
}

TEST(Zeta, SlabMatchesAnalyticVolume)
{
    const int k = 6;
    Voxels e(k);
    for (int j = 0; j < e.n(1); ++j)
        for (int i = 0; i < e.n(0); ++i)
            e.set(i, j, 32);
    double d = e.delta();
    Vec3 c = e.center(31, 31, 32);
    double z = zeta(e, c, 1.0, d);
    // three cell layers: |z| <= 1.5 delta inside the unit ball
    double h = 1.5 * d;
    double analytic = std::log(1.5 * h * (1 - h * h / 3)) / std::log(d);
    EXPECT_NEAR(z, analytic, 0.05);
    EXPECT_GT(z, 0.7);
    EXPECT_LT(z, 1.1);
}

TEST(Zeta, Errors)
{
    Voxels e(5);
    e.set(0, 0, 0);
    double d = e.delta();
    EXPECT_THROW(
        {
            try {
                zeta(e, Vec3(0.9, 0.9, 0.9), 0.1, d);
            } catch (const std::invalid_argument& ex) {
                EXPECT_STREQ(ex.what(), "undefined zeta");
                throw;
            }
        },
        std::invalid_argument);
    EXPECT_THROW(zeta(e, Vec3::Zero(), 0.1, d / 2), std::invalid_argument);
    EXPECT_THROW(zeta(e, Vec3::Zero(), d, d), std::invalid_argument);
}

TEST(AssouadScan, FullCubeFirstTriple)
{
    Voxels e = full_cube(5);
    ScanResult s = assouad_scan(e, 4.0);
    double d = e.delta();
    EXPECT_EQ(s.zeta, 0.0);
    EXPECT_DOUBLE_EQ(s.rho, d);
    EXPECT_DOUBLE_EQ(s.r, 4 * d);
    EXPECT_TRUE(s.ball_center.isApprox(Vec3(-1, -1, -1)));
    EXPECT_DOUBLE_EQ(s.dimension_witnessed(), 3.0);
    EXPECT_DOUBLE_EQ(s.separation(), 4.0);
}

TEST(AssouadScan, MatchesBruteForce)
{
    const int k = 4;
    Voxels e(k);
    std::mt19937_64 g(11);
    for (int q = 0; q < 6; ++q)
        e.set(6 + static_cast<int>(g() % 4), 6 + static_cast<int>(g() % 4), 6 + static_cast<int>(g() % 4));
    const double d = e.delta();
    const int n = e.n(0);
    std::vector<Vec3> centers;
    for (std::size_t q = 0; q < e.cells(); ++q)
        centers.push_back(e.center_flat(q));
    const double A = 8.0;
    double best = std::numeric_limits<double>::infinity();
    for (double rho = d; rho * A <= 1.0 + 1e-12; rho *= 2) {
        const int w = static_cast<int>(std::lround(rho / d));
        std::vector<char> near(static_cast<std::size_t>(n) * n * n, 0);
        for (int l = 0; l < n; ++l)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i)
                    if (e.get(i, j, l))
                        for (int dl = -w; dl <= w; ++dl)
                            for (int dj = -w; dj <= w; ++dj)
                                for (int di = -w; di <= w; ++di)
                                    if (e.in_range(i + di, j + dj, l + dl))
                                        near[e.index(i + di, j + dj, l + dl)] = 1;
        for (double r = rho * A; r <= 1.0 + 1e-12; r *= 2) {
            int m = static_cast<int>(std::lround(4.0 / r));
            for (int ix = 0; ix <= m; ++ix)
                for (int iy = 0; iy <= m; ++iy)
                    for (int iz = 0; iz <= m; ++iz) {
                        Vec3 c = Vec3(-1, -1, -1) + 0.5 * r * Vec3(ix, iy, iz);
                        std::size_t hit = 0, total = 0;
                        for (std::size_t q = 0; q < near.size(); ++q)
                            if ((centers[q] - c).squaredNorm() <= r * r * (1 + 1e-12)) {
                                ++total;
                                hit += near[q];
                            }
                        if (hit == 0)
                            continue;
                        double dens = static_cast<double>(hit) / total;
                        best = std::min(best, dens >= 1 ? 0.0 : std::log(dens) / std::log(rho / r));
                    }
        }
    }
    ScanResult s = assouad_scan(e, A);
    EXPECT_GT(best, 0.3);
    EXPECT_NEAR(s.zeta, best, 1e-12);
}

TEST(AssouadScan, ReevaluationReproducesZeta)
{
    for (unsigned seed : {1u, 2u, 3u}) {
        Voxels e = random_tubes(5, 4, seed);
        ScanResult s = assouad_scan(e, 4.0);
        EXPECT_GE(s.rho, e.delta());
        EXPECT_GE(s.r, 4 * s.rho - 1e-12);
        EXPECT_LE(s.r, 1.0);
        Voxels n = dilate_set(e, s.rho);
        BallCount bc = ball_count(RowRank<3>(n), n, s.ball_center, s.r);
        double predicted = std::pow(s.rho / s.r, s.zeta) * bc.total;
        EXPECT_LE(std::abs(predicted - static_cast<double>(bc.hit)), 1.0);
        EXPECT_NEAR(ball_density(e, s.ball_center, s.r, s.rho), s.density, 1e-12);
    }
}

TEST(AssouadScan, MonotoneInSeparation)
{
    for (unsigned seed : {4u, 5u}) {
        Voxels e = random_tubes(5, 6, seed);
        double prev = -1;
        for (double A : {2.0, 4.0, 8.0, 16.0}) {
            double z = assouad_scan(e, A).zeta;
            EXPECT_GE(z, prev - 1e-12) << "A=" << A;
            prev = z;
        }
    }
}

TEST(AssouadScan, RejectsBadInput)
{
    Voxels e = full_cube(4);
    EXPECT_THROW(assouad_scan(e, 1.5), std::invalid_argument);
    EXPECT_THROW(assouad_scan(Voxels(4), 4.0), std::invalid_argument);
}

TEST(AssouadScan, DirectionSeparatedSmallZeta)
{
    const int k = 6;
    Voxels u(k);
    for (const auto& t : gen_direction_separated(std::ldexp(1.0, -k), 1))
        rasterize_into(u, Solid{t});
    EXPECT_LE(assouad_scan(u, 4.0).zeta, 0.5);
}

TEST(AssouadScan, CoplanarSlabLargeZeta)
{
    const int k = 6;
    Voxels u(k);
    for (const auto& t : gen_coplanar(std::ldexp(1.0, -k)))
        rasterize_into(u, Solid{t});
    ScanResult s = assouad_scan(u, 4.0);
    RecordProperty("zeta", std::to_string(s.zeta));
    EXPECT_GE(s.zeta, 0.8) << s.to_json().dump();
}

TEST(TwoScaleAmplify, FullCubeOneIteration)
{
    ShadedFamily f = cube_family(5);
    AmplifyResult a = two_scale_amplify(f, 4.0);
    ASSERT_EQ(a.trace.size(), 1u);
    EXPECT_EQ(a.trace[0].zeta, 0.0);
    EXPECT_GE(a.r, 4 * a.rho);
    // only the cube boundary and the clipped r-neighbourhood contribute
    EXPECT_LT(a.ratio_exponent, 0.2);
    EXPECT_GE(a.ratio_exponent, 0.0);
}

TEST(TwoScaleAmplify, Invariants)
{
    const int k = 5;
    const double d = std::ldexp(1.0, -k);
    for (unsigned seed : {7u, 8u, 9u}) {
        std::vector<Solid> solids;
        for (const auto& t : gen_random_lines(d, 40, seed))
            solids.push_back(t);
        // keep a random half-space slice of each tube so the shading is partial
        std::mt19937_64 g(seed);
        std::uniform_real_distribution<double> cut(-0.5, 0.5);
        std::vector<double> cuts;
        for (std::size_t i = 0; i < solids.size(); ++i)
            cuts.push_back(cut(g));
        ShadedFamily f = shade_where(solids, k, [&](std::size_t i, const Vec3& p) { return p.x() > cuts[i]; });
        AmplifyResult a = two_scale_amplify(f, 4.0);

        double L = std::log2(1.0 / d);
        EXPECT_GE(static_cast<double>(a.retained_mass), f.mass_cells() / (64.0 * L * L));
        for (const auto& t : a.trace)
            EXPECT_GE(t.r, 4 * t.rho - 1e-12);
        for (std::size_t i = 0; i < a.selected.size(); ++i)
            for (std::size_t j = i + 1; j < a.selected.size(); ++j)
                EXPECT_GT((a.trace[a.selected[i]].center - a.trace[a.selected[j]].center).norm(), 2 * a.r);
        ASSERT_EQ(a.refined.size(), f.size());
        for (std::size_t i = 0; i < f.size(); ++i)
            EXPECT_TRUE(std::includes(f.shadings[i].begin(), f.shadings[i].end(), a.refined.shadings[i].begin(),
                                      a.refined.shadings[i].end()));
        EXPECT_GE(a.ratio_exponent, -1e-12);
        // every kept cell lies in a selected ball
        Voxels grid(k);
        for (const auto& y : a.refined.shadings)
            for (auto c : y) {
                bool in = false;
                for (auto s : a.selected)
                    in = in || (grid.center_flat(c) - a.trace[s].center).norm() <= a.r * (1 + 1e-9);
                EXPECT_TRUE(in);
            }
    }
}

TEST(TwoScaleAmplify, TraceCsv)
{
    AmplifyResult a = two_scale_amplify(cube_family(4), 2.0);
    std::string csv = a.trace_csv();
    EXPECT_EQ(csv.rfind("iteration,rho,r,cx,cy,cz,zeta,removed,remaining,selected\n", 0), 0u);
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), a.trace.size() + 1);
}

TEST(TwoScaleAmplify, ZeroMassRejected)
{
    ShadedFamily f = cube_family(4);
    f.shadings[0].clear();
    EXPECT_THROW(two_scale_amplify(f, 4.0), std::invalid_argument);
}
