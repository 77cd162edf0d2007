#include <kakeya/geometry.hpp>
#include <kakeya/rng.hpp>

#include <gtest/gtest.h>

using namespace kakeya;

namespace {

// Uniform sample from a capsule by rejection in its bounding box.
Vec3 sample_in(const Tube& t, Rng& rng)
{
    Mat3 f = frame_from_axis(t.dir);
    double h = 0.5 * t.length + t.radius;
    for (;;) {
        Vec3 q(rng.uniform(-t.radius, t.radius), rng.uniform(-t.radius, t.radius), rng.uniform(-h, h));
        Vec3 p = t.anchor + f * q;
        if (ball_inside(p, 0.0, t))
            return p;
    }
}

// Monte-Carlo containment oracle: false as soon as a sample escapes.
bool mc_contained(const Tube& t, const Shape& w, Rng& rng, int samples = 10000)
{
    for (int i = 0; i < samples; ++i)
        if (!ball_inside(sample_in(t, rng), 0.0, w))
            return false;
    return true;
}

Tube z_tube(double delta, Vec3 anchor = Vec3::Zero())
{
    return make_tube(anchor, Vec3::UnitZ(), delta);
}

} // namespace

TEST(EssentiallyDistinct, IdenticalTubesAreNot)
{
    Tube t = z_tube(1.0 / 64);
    EXPECT_FALSE(essentially_distinct(t, t));
}

TEST(EssentiallyDistinct, ParallelOffsetTenDelta)
{
    double d = 1.0 / 64;
    Tube a = z_tube(d), b = z_tube(d, Vec3(10 * d, 0, 0));
    EXPECT_TRUE(essentially_distinct(a, b));
    EXPECT_TRUE(essentially_distinct(b, a));
    Rng rng(1);
    EXPECT_FALSE(mc_contained(a, dilate(b, 2.0), rng));
    EXPECT_FALSE(mc_contained(b, dilate(a, 2.0), rng));
}

TEST(EssentiallyDistinct, CoaxialShiftAlongAxis)
{
    double d = 1.0 / 64;
    Tube a = z_tube(d), b = z_tube(d, Vec3(0, 0, d / 10));
    EXPECT_FALSE(essentially_distinct(a, b));
    Rng rng(2);
    EXPECT_TRUE(mc_contained(a, dilate(b, 2.0), rng));
}

TEST(EssentiallyDistinct, ScaleMismatchThrows)
{
    Tube a = z_tube(1.0 / 64), b = z_tube(1.0 / 32);
    EXPECT_THROW(
        {
            try {
                essentially_distinct(a, b);
            } catch (const std::invalid_argument& e) {
                EXPECT_STREQ(e.what(), "scale mismatch");
                throw;
            }
        },
        std::invalid_argument);
}

TEST(EssentiallyDistinct, SymmetricOnRandomPairs)
{
    Rng rng(3);
    double d = 1.0 / 32;
    for (int i = 0; i < 2000; ++i) {
        Vec3 a(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
        Vec3 u(rng.normal() * 0.05, rng.normal() * 0.05, 1.0);
        Vec3 b(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
        Vec3 v(rng.normal() * 0.05, rng.normal() * 0.05, 1.0);
        Tube s = make_tube(a * 0.3, u, d), t = make_tube(b * 0.3, v, d);
        EXPECT_EQ(essentially_distinct(s, t), essentially_distinct(t, s));
    }
}

TEST(Containment, AxisTubeInsideScaledBoundingPrism)
{
    double d = 1.0 / 64;
    Tube t = z_tube(d);
    Prism box = make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(2 * d, 2 * d, 1 + 2 * d));
    EXPECT_TRUE(contained_in_convex(t, make_witness(dilate(box, 1.01))));
}

TEST(Containment, RotatedPrismRejects)
{
    double d = 1.0 / 64;
    Tube t = z_tube(d);
    Prism box = make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(2 * d, 2 * d, 1 + 2 * d));
    Mat3 rx = Eigen::AngleAxisd(kPi / 2, Vec3::UnitX()).toRotationMatrix();
    Prism rot = box;
    rot.frame = rx;
    EXPECT_FALSE(contained_in_convex(t, make_witness(dilate(rot, 1.01))));
}

TEST(Containment, TiltedTubeEscapesThinPrism)
{
    double d = 1.0 / 64, t = 1.0 / 8;
    Tube tube = make_tube(Vec3::Zero(), Vec3(0, 2 * t, 1), d);
    Prism box = make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(d, t, 1));
    EXPECT_FALSE(contained_in_convex(tube, make_witness(box)));
    Rng rng(4);
    EXPECT_FALSE(mc_contained(tube, box, rng));
    // endpoint offset along v exceeds t/2
    EXPECT_GT(std::abs(tube.end(1).y()), t / 2);
}

TEST(Containment, AnalyticAgreesWithSamplingOracle)
{
    Rng rng(5);
    double d = 1.0 / 32;
    int agree = 0, total = 0;
    for (int i = 0; i < 300; ++i) {
        Tube t = make_tube(Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0),
                           Vec3(rng.normal() * 0.1, rng.normal() * 0.1, 1), d);
        Prism w = make_prism(Vec3::Zero(), frame_from_axis(Vec3(rng.normal() * 0.05, rng.normal() * 0.05, 1)),
                             Vec3(0.2, 0.3, 1.2));
        bool a = contained_in(Solid{t}, w);
        bool m = mc_contained(t, w, rng, 3000);
        if (a) {
            EXPECT_TRUE(m);
        }
        agree += a == m;
        ++total;
    }
    EXPECT_GE(agree, total * 9 / 10);
}

TEST(Containment, MonotoneUnderWitnessDilation)
{
    Rng rng(6);
    double d = 1.0 / 32;
    for (int i = 0; i < 500; ++i) {
        Tube t = make_tube(Vec3(rng.uniform(-0.1, 0.1), 0, 0), Vec3(rng.normal() * 0.2, 0, 1), d);
        Prism w = make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(0.15, 0.3, 1.1));
        if (!contained_in(Solid{t}, w))
            continue;
        for (double k : {1.0, 1.5, 2.0, 7.0})
            EXPECT_TRUE(contained_in(Solid{t}, dilate(w, k)));
    }
}

TEST(Dilate, IdentityAndTubeDoubling)
{
    double d = 1.0 / 16;
    Tube t = make_tube(Vec3(0.1, 0.2, 0.3), Vec3(1, 1, 0), d);
    Tube same = std::get<Tube>(dilate_solid(t, 1.0));
    EXPECT_EQ(same.radius, t.radius);
    EXPECT_EQ(same.length, t.length);
    Tube two = std::get<Tube>(dilate_solid(t, 2.0));
    EXPECT_DOUBLE_EQ(two.radius, 2 * d);
    EXPECT_DOUBLE_EQ(two.length, 2.0);
    EXPECT_EQ(two.anchor, t.anchor);
    EXPECT_EQ(two.dir, t.dir);
}

TEST(Dilate, VolumeScalesCubically)
{
    Prism p = make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(0.1, 0.2, 1));
    Tube t = z_tube(0.05);
    for (double k : {0.5, 1.0, 2.0, 3.0}) {
        EXPECT_NEAR(solid_volume(dilate_solid(p, k)), k * k * k * p.volume(), 1e-12);
        EXPECT_NEAR(solid_volume(dilate_solid(t, k)), k * k * k * t.volume(), 1e-12);
    }
    EXPECT_THROW(dilate_solid(p, 0.0), std::invalid_argument);
    EXPECT_THROW(dilate_solid(t, -1.0), std::invalid_argument);
}

TEST(Witness, VolumeMatchesFormula)
{
    ConvexWitness b = make_witness(Ball{Vec3::Zero(), 0.5});
    EXPECT_NEAR(b.volume, 4.0 / 3.0 * kPi / 8, 1e-12);
    ConvexWitness t = make_witness(z_tube(0.1));
    EXPECT_NEAR(t.volume, kPi * 0.01 + 4.0 / 3.0 * kPi * 0.001, 1e-12);
}

TEST(UnitRescale, SelfRescaleIsComparableToUnitBall)
{
    double rho = 1.0 / 8;
    Tube t = make_tube(Vec3(0.1, -0.1, 0.05), Vec3(1, 2, 3), rho);
    auto [img, map] = unit_rescale({Solid{t}}, make_witness(t));
    const Tube& u = std::get<Tube>(img[0]);
    double half_len = 0.5 * u.length + u.radius;
    for (double h : {u.radius, half_len}) {
        EXPECT_GE(h, 0.5);
        EXPECT_LE(h, 2.0);
    }
    EXPECT_NEAR(u.anchor.norm(), 0.0, 1e-12);
}

TEST(UnitRescale, CoaxialTubesBecomeThinAxisTubes)
{
    double rho = 1.0 / 8, d = 1.0 / 64;
    Vec3 c(0.2, 0.1, -0.1);
    Vec3 dir = Vec3(0.3, -0.2, 1).normalized();
    Tube big = make_tube(c, dir, rho);
    std::vector<Solid> small;
    for (double s : {-0.05, 0.0, 0.05})
        small.push_back(make_tube(c + s * dir, dir, d));
    auto [img, map] = unit_rescale(small, make_witness(big));
    // direct coordinates: transverse scale 1/(sqrt(1.5) rho), axial 1/(sqrt(3)(1/2 + rho))
    double ka = 1.0 / (std::sqrt(1.5) * rho), kc = 1.0 / (std::sqrt(3.0) * (0.5 + rho));
    for (std::size_t i = 0; i < img.size(); ++i) {
        const Tube& u = std::get<Tube>(img[i]);
        EXPECT_NEAR(std::abs(u.dir.z()), 1.0, 1e-12);
        EXPECT_NEAR(u.anchor.head<2>().norm(), 0.0, 1e-12);
        EXPECT_NEAR(u.length, kc, 1e-12);
        double expect_r = d * std::sqrt(ka * ka * kc / kc);
        EXPECT_NEAR(u.radius, expect_r, 1e-12);
        EXPECT_GE(u.radius, 0.5 * d / rho);
        EXPECT_LE(u.radius, 2.0 * d / rho);
    }
}

TEST(UnitRescale, RoundTripRestoresSolids)
{
    Rng rng(7);
    Tube ref = make_tube(Vec3::Zero(), Vec3(0.2, 0.1, 1), 0.5);
    Prism pref = make_prism(Vec3(0.1, 0, 0), frame_from_axis(Vec3(1, 1, 1)), Vec3(0.4, 0.6, 1.5));
    for (int i = 0; i < 100; ++i) {
        Tube t = make_tube(Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)),
                           Vec3(rng.normal(), rng.normal(), rng.normal()), 0.01);
        for (const Shape& ref_shape : {Shape{ref}, Shape{pref}}) {
            AffineMap m = rescaling_map(ref_shape);
            Tube back = transform(m.inverse(), transform(m, t));
            EXPECT_LT((back.anchor - t.anchor).norm(), 1e-9);
            EXPECT_LT((back.dir - t.dir).norm(), 1e-9);
            EXPECT_NEAR(back.radius, t.radius, 1e-9);
            EXPECT_NEAR(back.length, t.length, 1e-9);
        }
        // prisms aligned with the reference frame round-trip exactly
        Prism p = make_prism(pref.center, pref.frame, Vec3(0.05, 0.1, 0.3));
        AffineMap m = rescaling_map(pref);
        Prism back = transform(m.inverse(), transform(m, p));
        EXPECT_LT((back.center - p.center).norm(), 1e-9);
        EXPECT_LT((back.half - p.half).norm(), 1e-9);
        EXPECT_LT((back.frame - p.frame).norm(), 1e-9);
    }
}

TEST(UnitRescale, DeterminantTimesEllipsoidVolumeIsUnitBall)
{
    for (const Shape& s : {Shape{make_tube(Vec3::Zero(), Vec3(1, 0, 1), 0.03)},
                           Shape{make_prism(Vec3(0.1, 0.2, 0), frame_from_axis(Vec3(0, 1, 1)), Vec3(0.1, 0.2, 1))},
                           Shape{Ball{Vec3(0.3, 0, 0), 0.2}}}) {
        AffineMap m = rescaling_map(s);
        double v = std::abs(m.det()) * circumscribed_ellipsoid(s).volume();
        EXPECT_NEAR(v / (4.0 / 3.0 * kPi), 1.0, 1e-6);
        // the ellipsoid contains the shape: all footprint points map into the unit ball
        if (!std::holds_alternative<Ball>(s)) {
            Solid sol = std::holds_alternative<Tube>(s) ? Solid{std::get<Tube>(s)} : Solid{std::get<Prism>(s)};
            Footprint fp = footprint(sol);
            for (const auto& p : fp.points)
                EXPECT_LE(m(p).norm(), 1.0 + 1e-9);
        }
    }
}

TEST(UnitRescale, PreservesContainment)
{
    Rng rng(8);
    Prism ref = make_prism(Vec3(0.05, 0, 0), Mat3::Identity(), Vec3(0.5, 0.8, 1.6));
    AffineMap m = rescaling_map(ref);
    auto random_box = [&](double scale) {
        Vec3 c(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
        double s = rng.uniform(0.02, 0.2) * scale, t = s + rng.uniform(0.0, 0.2) * scale;
        return make_prism(c, Mat3::Identity(), Vec3(s, t, rng.uniform(0.1, 1.0) * scale));
    };
    int hits = 0;
    for (int i = 0; i < 2000; ++i) {
        Prism a = random_box(0.5), b = random_box(1.0);
        bool before = contained_in(Solid{a}, b);
        bool after = contained_in(transform(m, Solid{a}), std::get<Prism>(transform(m, Solid{b})));
        EXPECT_EQ(before, after);
        hits += before;
    }
    EXPECT_GT(hits, 0);
}

TEST(UnitRescale, RejectsOffender)
{
    Tube ref = make_tube(Vec3::Zero(), Vec3::UnitZ(), 0.1);
    Tube out = make_tube(Vec3(0.5, 0, 0), Vec3::UnitZ(), 0.01);
    try {
        unit_rescale({Solid{out}}, make_witness(ref));
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("solid 0"), std::string::npos);
    }
}

TEST(Json, TubeAndPrismRoundTrip)
{
    Tube t = make_tube(Vec3(0.1, 0.2, 0.3), Vec3(0, 0.6, 0.8), 1.0 / 64);
    Tube t2 = tube_from_json(to_json(t));
    EXPECT_EQ(t2.anchor, t.anchor);
    EXPECT_EQ(t2.dir, t.dir);
    EXPECT_EQ(t2.radius, t.radius);
    Prism p = make_prism(Vec3(0, 0, 0.1), frame_from_axis(Vec3(1, 2, 3)), Vec3(0.1, 0.2, 1));
    Prism p2 = prism_from_json(to_json(p));
    EXPECT_LT((p2.frame - p.frame).norm(), 1e-15);
    EXPECT_LT((p2.half - p.half).norm(), 1e-15);
    json j = to_json(p);
    EXPECT_EQ(j["dims"].size(), 3u);
    EXPECT_EQ(j["frame"].size(), 3u);
}

TEST(Types, InvariantsEnforced)
{
    EXPECT_THROW(make_tube(Vec3::Zero(), Vec3::Zero(), 0.1), std::invalid_argument);
    EXPECT_THROW(make_tube(Vec3::Zero(), Vec3::UnitZ(), 0.0), std::invalid_argument);
    EXPECT_NEAR(make_tube(Vec3::Zero(), Vec3(3, 4, 0), 0.1).dir.norm(), 1.0, 1e-12);
    EXPECT_THROW(make_prism(Vec3::Zero(), Mat3::Identity(), Vec3(0.5, 0.1, 1)), std::invalid_argument);
    Mat3 left = Mat3::Identity();
    left(2, 2) = -1;
    EXPECT_THROW(make_prism(Vec3::Zero(), left, Vec3(0.1, 0.2, 1)), std::invalid_argument);
}
