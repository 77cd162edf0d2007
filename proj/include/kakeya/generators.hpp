#pragma once

#include "axioms.hpp"
#include "geometry.hpp"
#include "projection.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace kakeya {

enum class GeneratorKind { DirectionSeparated, Sticky, Coplanar, PrismClustered, RandomLines, TiledPointSet };

inline const char* generator_name(GeneratorKind k)
{
    switch (k) {
    case GeneratorKind::DirectionSeparated: return "direction_separated";
    case GeneratorKind::Sticky: return "sticky";
    case GeneratorKind::Coplanar: return "coplanar";
    case GeneratorKind::PrismClustered: return "prism_clustered";
    case GeneratorKind::RandomLines: return "random_lines";
    case GeneratorKind::TiledPointSet: return "tiled_pointset";
    }
    return "unknown";
}

inline GeneratorKind generator_kind(const std::string& s)
{
    for (auto k : {GeneratorKind::DirectionSeparated, GeneratorKind::Sticky, GeneratorKind::Coplanar,
                   GeneratorKind::PrismClustered, GeneratorKind::RandomLines, GeneratorKind::TiledPointSet})
        if (s == generator_name(k))
            return k;
    throw std::invalid_argument("unknown generator kind: " + s);
}

// Fibonacci spiral on the cap z >= z_min: n points spread evenly by area.
inline std::vector<Vec3> hemisphere_net(std::size_t n, double z_min)
{
    std::vector<Vec3> out;
    out.reserve(n);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n; ++i) {
        double z = 1.0 - (1.0 - z_min) * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double th = golden * static_cast<double>(i);
        out.emplace_back(r * std::cos(th), r * std::sin(th), z);
    }
    return out;
}

inline Vec3 uniform_in_ball(Rng& rng, double radius)
{
    for (;;) {
        Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        if (p.squaredNorm() <= 1.0)
            return radius * p;
    }
}

// delta^-2 tubes pointing along a Fibonacci net of the upper hemisphere,
// anchors uniform in B(0, 1/2) so every tube lies in B(0, 1).
inline std::vector<Tube> gen_direction_separated(double delta, std::uint64_t seed)
{
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("scale must lie in (0, 1)");
    Rng rng(seed);
    auto n = static_cast<std::size_t>(std::llround(1.0 / (delta * delta)));
    std::vector<Tube> out;
    out.reserve(n);
    for (const auto& d : hemisphere_net(n, delta))
        out.push_back(make_tube(uniform_in_ball(rng, 0.5 - delta), d, delta));
    return out;
}

inline std::vector<Tube> gen_random_lines(double delta, std::size_t count, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Tube> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Vec3 d(rng.normal(), rng.normal(), rng.normal());
        if (d.norm() < 1e-12)
            d = Vec3::UnitZ();
        out.push_back(make_tube(uniform_in_ball(rng, 0.5 - delta), d, delta));
    }
    return out;
}

// delta x 1 x 1 slabs with uniformly random orientation, centres in B(0, 1/4)
inline std::vector<Prism> gen_slabs(double delta, std::size_t count, std::uint64_t seed)
{
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("scale must lie in (0, 1)");
    Rng rng(seed);
    std::vector<Prism> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        if (q.norm() < 1e-12)
            q = Eigen::Quaterniond::Identity();
        q.normalize();
        out.push_back(make_prism(uniform_in_ball(rng, 0.25), q.toRotationMatrix(), Vec3(delta, 1.0, 1.0)));
    }
    return out;
}

struct StickyFamily {
    std::vector<Tube> tubes;
    std::vector<std::vector<Tube>> levels; // level i holds the b^{-i}-tubes
    int branching = 4;
    int depth = 0;
};

// Level by level: a rho-tube spawns b children of radius rho/b whose endpoints
// sit on a q x q lattice (q^2 = b, spacing 4 rho/b) around each parent
// endpoint. children = b^2 uses both endpoint lattices, children = b moves both
// endpoints together.
inline StickyFamily gen_sticky_levels(double delta, int b, int children = 0)
{
    int q = static_cast<int>(std::lround(std::sqrt(static_cast<double>(b))));
    if (b < 4 || q * q != b)
        throw std::invalid_argument("branching must be a perfect square >= 4");
    if (children == 0)
        children = b * b;
    if (children != b && children != b * b)
        throw std::invalid_argument("children must be b or b^2");
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("scale must lie in (0, 1)");
    int m = static_cast<int>(std::lround(std::log(1.0 / delta) / std::log(static_cast<double>(b))));
    m = std::max(m, 1);
    StickyFamily out;
    out.branching = b;
    out.depth = m;
    out.levels.push_back({make_tube(Vec3::Zero(), Vec3::UnitZ(), 1.0)});
    for (int lvl = 1; lvl <= m; ++lvl) {
        double rho = std::pow(static_cast<double>(b), -lvl);
        double g = 4.0 * rho;
        std::vector<Vec3> lattice;
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j)
                lattice.emplace_back((i - 0.5 * (q - 1)) * g, (j - 0.5 * (q - 1)) * g, 0.0);
        std::vector<Tube> next;
        for (const auto& p : out.levels.back()) {
            Mat3 fr = frame_from_axis(p.dir);
            Vec3 lo = p.end(-1), hi = p.end(1);
            for (std::size_t a = 0; a < lattice.size(); ++a)
                for (std::size_t c = 0; c < lattice.size(); ++c) {
                    if (children == b && a != c)
                        continue;
                    Vec3 e0 = lo + fr * lattice[a];
                    Vec3 e1 = hi + fr * lattice[c];
                    next.push_back(make_tube(0.5 * (e0 + e1), e1 - e0, rho));
                }
        }
        out.levels.push_back(std::move(next));
    }
    out.tubes = out.levels.back();
    return out;
}

inline std::vector<Tube> gen_sticky(double delta, int b = 4, std::uint64_t seed = 0)
{
    (void)seed; // the construction is deterministic; the seed only labels the spec
    return gen_sticky_levels(delta, b).tubes;
}

// delta^-2 tubes with axes in the plane y = 0: directions spaced 2 delta apart
// on the half circle, an even number of offsets gridded across [-1/2, 1/2].
inline std::vector<Tube> gen_coplanar(double delta)
{
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("scale must lie in (0, 1)");
    auto total = static_cast<std::size_t>(std::llround(1.0 / (delta * delta)));
    auto ndir = static_cast<std::size_t>(std::floor(kPi / (2.0 * delta)));
    std::size_t noff = (total + ndir - 1) / ndir;
    noff += noff % 2;
    std::vector<Tube> out;
    out.reserve(total);
    for (std::size_t i = 0; i < ndir && out.size() < total; ++i) {
        double th = (static_cast<double>(i) + 0.5) * kPi / static_cast<double>(ndir);
        Vec3 d(std::cos(th), 0.0, std::sin(th));
        Vec3 nrm(-std::sin(th), 0.0, std::cos(th));
        for (std::size_t j = 0; j < noff && out.size() < total; ++j) {
            double u = -0.5 + (static_cast<double>(j) + 0.5) / static_cast<double>(noff);
            out.push_back(make_tube(u * nrm, d, delta));
        }
    }
    return out;
}

struct PrismCluster {
    std::vector<Tube> tubes;
    std::vector<Prism> prisms;
    std::vector<std::size_t> host; // host prism per tube
    std::size_t tries = 0;
    double prism_cwa = 0.0;
};

// Host prisms are the nominal s x t x 1 box thickened by delta on every side,
// so radius-delta tubes whose axes lie in the nominal box fit inside.
inline PrismCluster gen_prism_clustered(double delta, double s, double t, std::size_t count_per_prism,
                                        std::uint64_t seed, std::size_t n_prisms = 0, double cwa_budget = 4.0,
                                        std::size_t max_tries = 10000)
{
    if (!(delta > 0.0 && delta <= s && s <= t && t <= 1.0))
        throw std::invalid_argument("need delta <= s <= t <= 1");
    if (n_prisms == 0)
        n_prisms = static_cast<std::size_t>(std::ceil(1.0 / (s * t)));
    Rng rng(seed);
    PrismCluster out;
    Vec3 dims(s + 2.0 * delta, t + 2.0 * delta, 1.0 + 2.0 * delta);
    double reach = 0.5 * dims.norm();
    for (out.tries = 1; out.tries <= max_tries; ++out.tries) {
        out.prisms.clear();
        for (std::size_t i = 0; i < n_prisms; ++i) {
            Vec3 w(rng.normal(), rng.normal(), rng.normal());
            Mat3 fr = frame_from_axis(w);
            double roll = rng.uniform(0.0, 2.0 * kPi);
            Mat3 f2;
            f2.col(0) = std::cos(roll) * fr.col(0) + std::sin(roll) * fr.col(1);
            f2.col(1) = -std::sin(roll) * fr.col(0) + std::cos(roll) * fr.col(1);
            f2.col(2) = fr.col(2);
            out.prisms.push_back(make_prism(uniform_in_ball(rng, std::max(0.0, 1.0 - reach)), f2, dims));
        }
        CatalogOptions opt;
        opt.budget = 1e7;
        out.prism_cwa = convex_wolff_error(to_solids(out.prisms), cwa_budget, opt).error_constant;
        if (out.prism_cwa <= cwa_budget)
            break;
    }
    if (out.tries > max_tries)
        throw std::runtime_error("could not meet CWA budget");
    // endpoint lattices of spacing 2 delta across the nominal section at both
    // ends; pairs with an unused offset difference (a new direction) first,
    // then parallel translates
    auto axis = [&](double w) {
        int n = static_cast<int>(std::floor(w / (2.0 * delta) + 1e-9)) + 1;
        std::vector<double> v;
        for (int i = 0; i < n; ++i)
            v.push_back((i - 0.5 * (n - 1)) * 2.0 * delta);
        return v;
    };
    std::vector<std::pair<double, double>> lattice;
    for (double x : axis(s))
        for (double y : axis(t))
            lattice.emplace_back(x, y);
    const std::size_t nl = lattice.size();
    if (count_per_prism > nl * nl)
        throw std::invalid_argument("count_per_prism exceeds host capacity");
    for (std::size_t p = 0; p < out.prisms.size(); ++p) {
        const Prism& P = out.prisms[p];
        std::vector<std::size_t> order(nl * nl);
        for (std::size_t i = 0; i < order.size(); ++i)
            order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
        std::vector<std::size_t> pick;
        std::set<std::pair<long, long>> used;
        for (std::size_t o : order) {
            const auto& a = lattice[o / nl];
            const auto& b = lattice[o % nl];
            std::pair<long, long> diff{std::lround((b.first - a.first) / delta), std::lround((b.second - a.second) / delta)};
            if (used.insert(diff).second)
                pick.push_back(o);
        }
        for (std::size_t o : order)
            if (pick.size() < count_per_prism && std::find(pick.begin(), pick.end(), o) == pick.end())
                pick.push_back(o);
        pick.resize(count_per_prism);
        for (std::size_t o : pick) {
            const auto& a = lattice[o / nl];
            const auto& b = lattice[o % nl];
            Vec3 e0 = P.center - 0.5 * P.w() + a.first * P.u() + a.second * P.v();
            Vec3 e1 = P.center + 0.5 * P.w() + b.first * P.u() + b.second * P.v();
            out.tubes.push_back(make_tube(0.5 * (e0 + e1), e1 - e0, delta));
            out.host.push_back(p);
        }
    }
    return out;
}

struct TiledPointSet {
    ParamPointSet set;
    double rho = 0.0;
    double side = 0.0; // tile side, the largest dyadic <= rho^{s/n}
    double base_C = 0.0;
    std::size_t copies = 0;
    json to_json() const
    {
        return {{"rho", rho}, {"side", side}, {"base_katz_tao_C", base_C}, {"copies", copies}, {"points", set.to_json()}};
    }
};

// Translates of a base set living in one dyadic rho-cube, one per tile of
// [0,1]^n, centre of the base cube to centre of the tile.
inline TiledPointSet gen_tiled_pointset(const ParamPointSet& base, double rho, double s)
{
    if (base.empty())
        throw std::invalid_argument("empty point set");
    const int rb = scale_exponent(rho);
    if (!(rho >= 2.0 * base.delta))
        throw std::invalid_argument("need rho >= 2 delta");
    if (!(s > 0.0 && s <= base.dim))
        throw std::invalid_argument("s must lie in (0, n]");
    const std::uint64_t cube = detail::cell_key(base.points.front(), base.dim, rb);
    for (const auto& q : base.points)
        if (detail::cell_key(q, base.dim, rb) != cube)
            throw std::invalid_argument("base does not lie in one rho-cube");
    const double need = std::pow(rho / base.delta, s) / 8.0;
    if (static_cast<double>(covering_number(base)) < need)
        throw std::invalid_argument("precondition failed: base covering number below (rho/delta)^s / 8");

    TiledPointSet out;
    out.rho = rho;
    out.base_C = nonconcentration_error(base, s, Concentration::KatzTao).C;
    const int tb = static_cast<int>(std::ceil(std::log2(1.0 / rho) * s / base.dim - 1e-12));
    out.side = std::ldexp(1.0, -tb);
    const int per_axis = 1 << tb;
    std::array<double, 4> c0{};
    for (int a = 0; a < base.dim; ++a)
        c0[a] = (static_cast<double>((cube >> (16 * a)) & 0xffff) + 0.5) * rho;
    out.set = ParamPointSet{base.dim, base.delta, {}};
    std::vector<int> idx(base.dim, 0);
    for (;;) {
        for (const auto& q : base.points) {
            std::array<double, 4> r{};
            for (int a = 0; a < base.dim; ++a)
                r[a] = q[a] - c0[a] + (idx[a] + 0.5) * out.side;
            out.set.points.push_back(r);
        }
        ++out.copies;
        int a = 0;
        while (a < base.dim && ++idx[a] == per_axis)
            idx[a++] = 0;
        if (a == base.dim)
            break;
    }
    return out;
}

struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::DirectionSeparated;
    double scale = 1.0 / 32;
    std::uint64_t seed = 0;
    json params = json::object();

    json to_json() const { return {{"kind", generator_name(kind)}, {"scale", scale}, {"seed", seed}, {"params", params}}; }

    static GeneratorSpec from_json(const json& j)
    {
        GeneratorSpec s;
        s.kind = generator_kind(j.at("kind").get<std::string>());
        s.scale = j.at("scale").get<double>();
        s.seed = j.value("seed", std::uint64_t{0});
        s.params = j.value("params", json::object());
        return s;
    }
};

struct GeneratedFamily {
    std::vector<Solid> solids;
    std::vector<Prism> hosts;
    double delta = 0.0;
    json to_json() const
    {
        json j = family_to_json(solids, delta);
        if (!hosts.empty())
            j["hosts"] = family_to_json(to_solids(hosts), delta)["solids"];
        return j;
    }
};

inline GeneratedFamily generate_tubes(const GeneratorSpec& spec)
{
    GeneratedFamily g;
    g.delta = spec.scale;
    const json& p = spec.params;
    switch (spec.kind) {
    case GeneratorKind::DirectionSeparated:
        g.solids = to_solids(gen_direction_separated(spec.scale, spec.seed));
        break;
    case GeneratorKind::Sticky: {
        auto f = gen_sticky_levels(spec.scale, p.value("branching", 4), p.value("children", 0));
        g.delta = f.tubes.front().scale;
        g.solids = to_solids(f.tubes);
        break;
    }
    case GeneratorKind::Coplanar:
        g.solids = to_solids(gen_coplanar(spec.scale));
        break;
    case GeneratorKind::PrismClustered: {
        auto c = gen_prism_clustered(spec.scale, p.at("s").get<double>(), p.at("t").get<double>(),
                                     p.value("count_per_prism", std::size_t{8}), spec.seed,
                                     p.value("prisms", std::size_t{0}));
        g.solids = to_solids(c.tubes);
        g.hosts = c.prisms;
        break;
    }
    case GeneratorKind::RandomLines:
        g.solids = to_solids(gen_random_lines(spec.scale, p.value("count", std::size_t{1000}), spec.seed));
        break;
    case GeneratorKind::TiledPointSet:
        throw std::invalid_argument("tiled_pointset produces a point set, not a tube family");
    }
    return g;
}

// params: dim, rho, s, base (list of points; default the centre of [0, rho)^n)
inline TiledPointSet generate_points(const GeneratorSpec& spec)
{
    if (spec.kind != GeneratorKind::TiledPointSet)
        throw std::invalid_argument("only tiled_pointset produces a point set");
    const json& p = spec.params;
    ParamPointSet base{p.value("dim", 3), spec.scale, {}};
    double rho = p.at("rho").get<double>();
    if (p.contains("base")) {
        base = ParamPointSet::from_json({{"dim", base.dim}, {"delta", spec.scale}, {"points", p.at("base")}});
    } else {
        std::array<double, 4> q{};
        for (int a = 0; a < base.dim; ++a)
            q[a] = 0.5 * rho;
        base.points.push_back(q);
    }
    return gen_tiled_pointset(base, rho, p.at("s").get<double>());
}

} // namespace kakeya
