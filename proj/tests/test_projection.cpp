#include "kakeya/projection.hpp"
#include "kakeya/rng.hpp"

#include <gtest/gtest.h>

using namespace kakeya;

namespace {

double f_adm(double z) { return 1.5 * z + z * z / 300.0; }
double f_adm_prime(double z) { return 1.5 + z / 150.0; }

SlopeFunction admissible(int k) { return SlopeFunction::sample(f_adm, std::ldexp(1.0, -k)); }

int row_count(const Voxels2& v, int j) { return static_cast<int>(v.count_row_range(j, 0, v.n(0) - 1)); }

int row_runs(const Voxels2& v, int j)
{
    int runs = 0;
    bool prev = false;
    for (int i = 0; i < v.n(0); ++i) {
        bool on = v.get(i, j);
        runs += on && !prev;
        prev = on;
    }
    return runs;
}

// exhaustive oracle: every net centre of [0,1]^n, every point
double brute_nonconcentration(const ParamPointSet& p, double s, Concentration mode)
{
    const int n = p.dim, bits = p.bits();
    std::vector<std::uint64_t> keys;
    for (const auto& q : p.points) {
        std::uint64_t key = 0;
        for (int a = 0; a < n; ++a) {
            auto i = std::min<std::int64_t>(static_cast<std::int64_t>(q[a] / p.delta), (std::int64_t{1} << bits) - 1);
            key = key * 65536 + static_cast<std::uint64_t>(i);
        }
        keys.push_back(key);
    }
    std::vector<std::uint64_t> all = keys;
    std::sort(all.begin(), all.end());
    const double total = static_cast<double>(std::unique(all.begin(), all.end()) - all.begin());
    double best = 0;
    for (double r = p.delta; r <= 1.0; r *= 2) {
        const int m = static_cast<int>(std::lround(2.0 / r));
        std::vector<int> c(n, 0);
        for (;;) {
            std::vector<std::uint64_t> in;
            for (std::size_t i = 0; i < p.size(); ++i) {
                double d2 = 0;
                for (int a = 0; a < n; ++a)
                    d2 += std::pow(p.points[i][a] - c[a] * r / 2, 2);
                if (d2 <= r * r * (1 + 1e-12))
                    in.push_back(keys[i]);
            }
            std::sort(in.begin(), in.end());
            double cnt = static_cast<double>(std::unique(in.begin(), in.end()) - in.begin());
            double bound = mode == Concentration::KatzTao ? std::pow(r / p.delta, s) : std::pow(r, s) * total;
            best = std::max(best, cnt / bound);
            int a = 0;
            while (a < n && ++c[a] > m)
                c[a++] = 0;
            if (a == n)
                break;
        }
    }
    return best;
}

ParamPointSet grid_1d(int bits)
{
    ParamPointSet p{1, std::ldexp(1.0, -bits), {}};
    for (int i = 0; i < (1 << bits); ++i)
        p.add({(i + 0.5) * p.delta});
    return p;
}

ParamPointSet full_grid(int dim, int bits)
{
    ParamPointSet p{dim, std::ldexp(1.0, -bits), {}};
    const int n = 1 << bits;
    std::vector<int> c(dim, 0);
    for (;;) {
        std::array<double, 4> q{};
        for (int a = 0; a < dim; ++a)
            q[a] = (c[a] + 0.5) * p.delta;
        p.points.push_back(q);
        int a = 0;
        while (a < dim && ++c[a] == n)
            c[a++] = 0;
        if (a == dim)
            break;
    }
    return p;
}

ParamPointSet random_points(int dim, int bits, std::size_t count, std::uint64_t seed)
{
    Rng rng(seed);
    ParamPointSet p{dim, std::ldexp(1.0, -bits), {}};
    for (std::size_t i = 0; i < count; ++i) {
        std::array<double, 4> q{};
        for (int a = 0; a < dim; ++a)
            q[a] = rng.uniform();
        p.points.push_back(q);
    }
    return p;
}

} // namespace

TEST(SlopeFunction, CertifiedBounds)
{
    SlopeFunction f = admissible(7);
    EXPECT_TRUE(f.admissible());
    EXPECT_GE(f.min_slope(), 1.49);
    EXPECT_LE(f.max_slope(), 1.51);
    EXPECT_NEAR(f.max_curvature(), 1.0 / 150, 1e-6);
    EXPECT_NEAR(f(0.3), f_adm(0.3), 1e-6);

    EXPECT_TRUE(SlopeFunction::sample([](double z) { return z; }, 1.0 / 64).admissible());
    EXPECT_FALSE(SlopeFunction::sample([](double) { return 0.0; }, 1.0 / 64).admissible());
    EXPECT_FALSE(SlopeFunction::sample([](double z) { return z * z; }, 1.0 / 64).admissible());
    EXPECT_FALSE(SlopeFunction::sample([](double z) { return 3 * z; }, 1.0 / 64).admissible());
}

TEST(SlopeFunction, JsonRoundTrip)
{
    SlopeFunction f = admissible(5);
    SlopeFunction g = SlopeFunction::from_json(json::parse(f.to_json().dump()));
    EXPECT_EQ(g.samples(), f.samples());
    EXPECT_EQ(g.max_curvature(), f.max_curvature());
    EXPECT_THROW(SlopeFunction({1.0, 2.0}, 1.0 / 4), std::invalid_argument);
}

TEST(TwistedProject, DirectFormula)
{
    SlopeFunction f = SlopeFunction::sample([](double z) { return z; }, 1.0 / 8);
    auto q = twisted_point(Vec3(1, 2, 0.5), f);
    EXPECT_DOUBLE_EQ(q[0], 2.0);
    EXPECT_DOUBLE_EQ(q[1], 0.5);
}

TEST(TwistedProject, ZeroSlopeIsShadow)
{
    const int k = 5;
    Rng rng(4);
    Voxels e(k);
    for (int i = 0; i < 300; ++i)
        e.set(static_cast<int>(rng.below(64)), static_cast<int>(rng.below(64)), static_cast<int>(rng.below(64)));
    SlopeFunction zero = SlopeFunction::sample([](double) { return 0.0; }, 1.0 / 32);
    EXPECT_THROW(twisted_project(e, zero), std::invalid_argument);
    Voxels2 p = twisted_project(e, zero, true);
    Voxels2 shadow(k);
    const int off = 3 << k;
    for (int l = 0; l < 64; ++l)
        for (int j = 0; j < 64; ++j)
            for (int i = 0; i < 64; ++i)
                if (e.get(i, j, l))
                    shadow.set(i + off, l);
    EXPECT_TRUE(p == shadow);
}

TEST(TwistedProject, CellListsAgree)
{
    const int k = 5;
    SlopeFunction f = admissible(k);
    Tube t = tube_of_line({0.1, -0.2, 0.3, 0.25}, 1.0 / 32);
    CellList cells = rasterize_cells(Solid{t}, k);
    Voxels e(k);
    for (auto c : cells)
        e.set_flat(c);
    EXPECT_TRUE(to_voxels2(twisted_project_cells(cells, k, f), k) == twisted_project(e, f));
}

TEST(Cinematic, HorizontalStrip)
{
    const int k = 6;
    const double d = 1.0 / 64;
    SlopeFunction f = admissible(k);
    Voxels2 g = rasterize_cinematic(1, 0, 0, f, d, k);
    for (int j = 0; j < g.n(1); ++j) {
        ASSERT_EQ(row_count(g, j), 2);
        for (int i = 0; i < g.n(0); ++i)
            if (g.get(i, j)) {
                EXPECT_NEAR(std::abs(g.coord(0, i) - 1.0), d / 2, 1e-12);
            }
    }
}

TEST(Cinematic, DiagonalStrip)
{
    const int k = 6;
    const double d = 1.0 / 64;
    SlopeFunction f = SlopeFunction::sample([](double t) { return t; }, d);
    Voxels2 g = rasterize_cinematic(0, 1, 0, f, d, k);
    for (int j = 0; j < g.n(1); ++j)
        for (int i = 0; i < g.n(0); ++i) {
            double off = std::abs(g.coord(0, i) - g.coord(1, j));
            if (off <= d) {
                EXPECT_TRUE(g.get(i, j));
            }
            if (g.get(i, j)) {
                EXPECT_LE(off, 1.5 * d + 1e-12);
            }
        }
}

TEST(Cinematic, AreaTracksArcLength)
{
    const int k = 7;
    const double d = std::ldexp(1.0, -k);
    SlopeFunction f = admissible(k);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1), dd = rng.uniform(-1, 1);
        // Simpson quadrature of sqrt(1 + g'^2)
        auto gp = [&](double t) { return b * f_adm_prime(t) + dd * (f_adm(t) + t * f_adm_prime(t)); };
        const int n = 20000;
        double len = 0;
        for (int i = 0; i <= n; ++i) {
            double t = -1.0 + 2.0 * i / n;
            double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
            len += w * std::sqrt(1 + gp(t) * gp(t));
        }
        len *= 2.0 / n / 3.0;
        EXPECT_GE(len, 2.0);
        EXPECT_LE(len, 10.0);
        double area = rasterize_cinematic(a, b, dd, f, d, k).volume();
        EXPECT_LE(area, 4 * 2 * d * len) << trial;
        EXPECT_GE(area, 2 * d * len / 4) << trial;
    }
}

TEST(Cinematic, RejectsLargeParameters)
{
    EXPECT_THROW(rasterize_cinematic(1.5, 0, 0, admissible(5), 1.0 / 32, 5), std::invalid_argument);
}

TEST(Cinematic, ProjectionCompatibility)
{
    const int k = 6;
    const double d = std::ldexp(1.0, -k);
    SlopeFunction f = admissible(k);
    Rng rng(2024);
    for (int i = 0; i < 100; ++i) {
        LineParams p{rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45),
                     rng.uniform(-0.45, 0.45)};
        Tube t = tube_of_line(p, d);
        auto back = line_params(t);
        ASSERT_TRUE(back);
        EXPECT_NEAR(back->c, p.c, 1e-12);
        EXPECT_NEAR(back->a, p.a, 1e-12);
        EXPECT_TRUE(projection_compatible(t, f, k)) << i;
    }
}

TEST(Cinematic, TranslationCovariance)
{
    const int k = 7;
    SlopeFunction f = admissible(k);
    const double d = std::ldexp(1.0, -k);
    Rng rng(8);
    std::vector<LineParams> ps;
    for (int i = 0; i < 8; ++i)
        ps.push_back({rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 0.2, rng.uniform(-0.4, 0.4)});
    for (const LineParams& sh : {LineParams{0.013, -0.031, 0, 0.021}, LineParams{-0.2, 0.1, 0, -0.15}}) {
        Voxels2 u(k), v(k);
        for (const auto& p : ps) {
            u |= rasterize_cinematic(p.a, p.b, p.d, f, 2 * d, k, p.c);
            v |= rasterize_cinematic(p.a + sh.a, p.b + sh.b, p.d + sh.d, f, 2 * d, k, p.c);
        }
        for (int j = 0; j < u.n(1); ++j)
            EXPECT_LE(std::abs(row_count(u, j) - row_count(v, j)), std::max(row_runs(u, j), row_runs(v, j)))
                << "row " << j;
    }
}

TEST(LpCountingNorm, TrivialCases)
{
    const int k = 5;
    const double d = 1.0 / 32;
    SlopeFunction f = admissible(k);
    Voxels2 g = rasterize_cinematic(0, 0, 0, f, d, k);
    double A = g.volume();
    for (double p : {1.0, 1.5, 2.0}) {
        EXPECT_NEAR(lp_counting_norm({g}, p), std::pow(A, 1 / p), 1e-12);
        std::vector<Voxels2> same(5, g);
        EXPECT_NEAR(lp_counting_norm(same, p), 5 * std::pow(A, 1 / p), 1e-10);
        std::vector<Voxels2> apart;
        for (double a : {-0.9, -0.3, 0.3, 0.9})
            apart.push_back(rasterize_cinematic(a, 0, 0, f, d, k));
        EXPECT_NEAR(lp_counting_norm(apart, p), std::pow(4 * A, 1 / p), 1e-12);
    }
    EXPECT_THROW(lp_counting_norm({g}, 0.0), std::invalid_argument);
    EXPECT_THROW(lp_counting_norm({g, Voxels2(6)}, 1.5), std::invalid_argument);
}

TEST(ProjectionChain, HoldsOnShadedFamilies)
{
    const int k = 6;
    const double d = std::ldexp(1.0, -k);
    SlopeFunction f = admissible(k);
    for (std::uint64_t seed : {1, 2, 3}) {
        Rng rng(seed);
        std::vector<Solid> ts;
        for (int i = 0; i < 40; ++i)
            ts.push_back(tube_of_line({rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45),
                                       rng.uniform(-0.45, 0.45)},
                                      d));
        ShadedFamily fam = shade_where(ts, k, [&](std::size_t, const Vec3& p) { return p.z() > rng.uniform(-1, 1); });
        ProjectionChain c = projection_experiment(fam, f);
        EXPECT_TRUE(c.holds()) << c.to_json().dump();
        EXPECT_EQ(c.compatible, c.tubes);
        EXPECT_EQ(c.skipped, 0u);
        EXPECT_LE(c.union_area(), c.sum_area());
    }
}

TEST(Nonconcentration, SinglePoint)
{
    ParamPointSet p{3, 1.0 / 64, {}};
    p.add({0.3, 0.6, 0.2});
    for (double s : {0.5, 1.0, 2.0, 3.0}) {
        auto r = nonconcentration_error(p, s, Concentration::Frostman);
        EXPECT_NEAR(r.C, std::pow(p.delta, -s), 1e-9 * r.C);
        EXPECT_DOUBLE_EQ(r.r, p.delta);
        EXPECT_NEAR(nonconcentration_error(p, s, Concentration::KatzTao).C, 1.0, 1e-12);
    }
}

TEST(Nonconcentration, WorkedExamples)
{
    ParamPointSet grid = grid_1d(8);
    double cf = nonconcentration_error(grid, 1.0, Concentration::Frostman).C;
    EXPECT_LE(cf, 4.0);
    EXPECT_NEAR(cf, brute_nonconcentration(grid, 1.0, Concentration::Frostman), 1e-12);

    ParamPointSet sparse{1, 1.0 / 256, {}};
    for (int i = 0; i < 16; ++i)
        sparse.add({i / 16.0 + 1.0 / 512});
    double ck = nonconcentration_error(sparse, 1.0, Concentration::KatzTao).C;
    EXPECT_LE(ck, 4.0);
    EXPECT_NEAR(ck, brute_nonconcentration(sparse, 1.0, Concentration::KatzTao), 1e-12);
}

TEST(Nonconcentration, MatchesExhaustiveOracle1D)
{
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        ParamPointSet p = random_points(1, 12, seed == 4 ? 4096 : 300 * seed, seed);
        for (auto mode : {Concentration::Frostman, Concentration::KatzTao})
            for (double s : {0.5, 1.0})
                EXPECT_NEAR(nonconcentration_error(p, s, mode).C, brute_nonconcentration(p, s, mode), 1e-9)
                    << seed << ' ' << concentration_name(mode) << ' ' << s;
    }
}

TEST(Nonconcentration, MatchesExhaustiveOracle3D)
{
    ParamPointSet full = full_grid(3, 4);
    ASSERT_EQ(full.size(), 4096u);
    for (const ParamPointSet& p : {full, random_points(3, 4, 500, 3), random_points(3, 5, 2000, 4)})
        for (auto mode : {Concentration::Frostman, Concentration::KatzTao})
            for (double s : {1.0, 2.5})
                EXPECT_NEAR(nonconcentration_error(p, s, mode).C, brute_nonconcentration(p, s, mode), 1e-9);
}

TEST(Nonconcentration, ScaleCovariance)
{
    for (std::uint64_t seed : {5, 6, 7}) {
        ParamPointSet p = random_points(1, 9, 200, seed);
        ParamPointSet q{1, p.delta / 2, {}};
        for (const auto& x : p.points)
            q.add({x[0] / 2});
        double a = nonconcentration_error(p, 0.7, Concentration::Frostman).C;
        double b = nonconcentration_error(q, 0.7, Concentration::Frostman).C;
        EXPECT_LE(b, 2 * a);
        EXPECT_GE(b, a / 2);
    }
}

TEST(Nonconcentration, Errors)
{
    ParamPointSet empty{2, 1.0 / 8, {}};
    EXPECT_THROW(nonconcentration_error(empty, 1, Concentration::Frostman), std::invalid_argument);
    ParamPointSet p{2, 1.0 / 8, {}};
    p.add({0.5, 0.5});
    EXPECT_THROW(nonconcentration_error(p, 2.5, Concentration::Frostman), std::invalid_argument);
    EXPECT_THROW(nonconcentration_error(p, 0, Concentration::KatzTao), std::invalid_argument);
    p.add({1.5, 0.5});
    EXPECT_THROW(nonconcentration_error(p, 1, Concentration::KatzTao), std::invalid_argument);
}

TEST(KatzTaoPrune, FullGrid)
{
    ParamPointSet p = full_grid(3, 4);
    PruneResult r = katz_tao_prune(p, 1.0);
    EXPECT_LE(r.katz_tao_C, 100.0);
    EXPECT_LT(r.output_cells, r.input_cells);
    EXPECT_TRUE(r.retained_ok()) << r.to_json().dump();
    EXPECT_GE(static_cast<double>(r.output_cells), std::pow(p.delta, -1.0) / (4 * r.frostman_C * 8));
}

TEST(KatzTaoPrune, ClusteredLine)
{
    // dense cluster on [0, 1/16) plus a sparse comb
    ParamPointSet p{1, std::ldexp(1.0, -14), {}};
    for (int i = 0; i < 1024; ++i)
        p.add({(i + 0.5) * p.delta});
    for (int i = 1; i < 16; ++i)
        p.add({i / 16.0 + 0.01});
    const double s = 0.5;
    PruneResult r = katz_tao_prune(p, s);
    EXPECT_LE(r.katz_tao_C, 100.0);
    EXPECT_TRUE(r.retained_ok()) << r.to_json().dump();
    // the comb survives
    std::size_t comb = 0;
    for (const auto& x : r.set.points)
        comb += x[0] > 1.0 / 16;
    EXPECT_EQ(comb, 15u);
}

TEST(KatzTaoPrune, AlreadyKatzTaoUntouched)
{
    ParamPointSet p = grid_1d(6);
    PruneResult r = katz_tao_prune(p, 1.0);
    EXPECT_EQ(r.output_cells, r.input_cells);
}

TEST(UniformRefine, FullGridUnchanged)
{
    for (auto [dim, bits, eta] : {std::tuple{1, 8, 0.25}, std::tuple{2, 6, 1.0 / 3}}) {
        ParamPointSet p = full_grid(dim, bits);
        UniformResult r = uniform_refine(p, eta);
        EXPECT_FALSE(r.snapped);
        EXPECT_EQ(r.set.points, p.points);
        EXPECT_DOUBLE_EQ(uniformity_ratio(r.set, r.step_bits), 1.0);
    }
}

TEST(UniformRefine, RandomSetsBecomeUniform)
{
    for (std::uint64_t seed : {1, 2, 3}) {
        ParamPointSet p = random_points(2, 8, 600, seed);
        // one completely full 1/16-cell among sparse ones
        for (int i = 0; i < 256; ++i)
            p.add({(i % 16 + 0.5) / 256.0, (i / 16 + 0.5) / 256.0});
        EXPECT_GT(uniformity_ratio(p, 4), 100.0);
        UniformResult r = uniform_refine(p, 0.25);
        EXPECT_EQ(r.levels, 2);
        EXPECT_LE(uniformity_ratio(r.set, r.step_bits), 100.0);
        EXPECT_GE(r.retained_fraction(), r.retained_floor()) << r.to_json().dump();
        for (const auto& q : r.set.points)
            EXPECT_NE(std::find(p.points.begin(), p.points.end(), q), p.points.end());
    }
}

TEST(UniformRefine, HalfGridHalfSingleton)
{
    ParamPointSet p{1, 1.0 / 256, {}};
    for (int i = 0; i < 128; ++i)
        p.add({(i + 0.5) / 256});
    p.add({0.75});
    UniformResult r = uniform_refine(p, 0.25);
    EXPECT_EQ(r.output_cells, 128u);
    for (const auto& q : r.set.points)
        EXPECT_LT(q[0], 0.5);
    EXPECT_EQ(r.branching, (std::vector<std::size_t>{8, 16}));
}

TEST(UniformRefine, SnapsScale)
{
    ParamPointSet p = grid_1d(7);
    UniformResult r = uniform_refine(p, 0.25);
    EXPECT_TRUE(r.snapped);
    EXPECT_DOUBLE_EQ(r.delta_used, 1.0 / 256);
    EXPECT_EQ(r.levels, 2);
    EXPECT_LE(uniformity_ratio(r.set, r.step_bits), 100.0);
}

TEST(SpacingScan, FullGridIsSpaced)
{
    ParamPointSet p = full_grid(2, 6);
    SpacingResult r = spacing_scan(p, 2.0, 0.2);
    EXPECT_TRUE(r.holds) << r.to_json().dump();
    EXPECT_GT(r.rho, std::pow(p.delta, 0.8));
    EXPECT_FALSE(r.table.empty());
    for (const auto& row : r.table)
        EXPECT_GE(row.worst_C, r.C);
}

TEST(ParamPoints, FromTubes)
{
    std::vector<Tube> ts{tube_of_line({0.2, -0.4, 0.6, -1.0}, 1.0 / 32), make_tube(Vec3::Zero(), Vec3::UnitX(), 1.0 / 32)};
    ParamPointSet p = param_points(ts, 1.0 / 32);
    ASSERT_EQ(p.size(), 1u);
    EXPECT_NEAR(p.points[0][0], 0.6, 1e-12);
    EXPECT_NEAR(p.points[0][3], 0.0, 1e-12);
    ParamPointSet q = ParamPointSet::from_json(json::parse(p.to_json().dump()));
    EXPECT_EQ(q.points, p.points);
}
