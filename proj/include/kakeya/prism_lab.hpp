#pragma once

#include "assouad.hpp"
#include "axioms.hpp"
#include "shading.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kakeya {

// L2 overlap and the Cauchy-Schwarz chain

namespace detail {

// sum over cells of (number of lists containing the cell)^2
inline std::uint64_t sum_sq_multiplicity(const std::vector<CellList>& ys)
{
    std::vector<std::uint32_t> all;
    for (const auto& y : ys)
        all.insert(all.end(), y.begin(), y.end());
    std::sort(all.begin(), all.end());
    std::uint64_t q = 0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j] == all[i])
            ++j;
        q += static_cast<std::uint64_t>(j - i) * (j - i);
        i = j;
    }
    return q;
}

inline std::vector<CellList> rasterize_all(const std::vector<Solid>& r, int k)
{
    std::vector<CellList> out;
    out.reserve(r.size());
    for (const auto& s : r)
        out.push_back(rasterize_cells(s, k));
    return out;
}

} // namespace detail

// ||sum_R chi_R||_2^2 on the 2^-k grid, in volume units
inline double l2_overlap(const std::vector<Solid>& r, int k)
{
    double cell = std::ldexp(1.0, -3 * k);
    return static_cast<double>(detail::sum_sq_multiplicity(detail::rasterize_all(r, k))) * cell;
}

inline double l2_overlap(const std::vector<Prism>& r, int k)
{
    return l2_overlap(std::vector<Solid>(r.begin(), r.end()), k);
}

// (sum |Y(R)|)^2 <= |U Y(R)| * ||sum chi_R||_2^2, all in cell counts
struct CauchySchwarz {
    std::uint64_t mass = 0;       // sum |Y(R)|
    std::uint64_t union_cells = 0; // |U Y(R)|
    std::uint64_t l2_cells = 0;    // sum of squared multiplicities of the solids
    int k = 0;

    bool holds() const
    {
        using u128 = unsigned __int128;
        return u128(mass) * mass <= u128(union_cells) * l2_cells;
    }
    double union_volume() const { return std::ldexp(static_cast<double>(union_cells), -3 * k); }
    double l2() const { return std::ldexp(static_cast<double>(l2_cells), -3 * k); }
    json to_json() const
    {
        return {{"mass_cells", mass},
                {"union_cells", union_cells},
                {"l2_cells", l2_cells},
                {"union_volume", union_volume()},
                {"l2_overlap", l2()},
                {"holds", holds()}};
    }
};

inline CauchySchwarz cauchy_schwarz_chain(const ShadedFamily& f)
{
    validate(f);
    CauchySchwarz c;
    c.k = f.k;
    c.mass = f.mass_cells();
    c.union_cells = union_voxels(f).count();
    c.l2_cells = detail::sum_sq_multiplicity(detail::rasterize_all(f.solids, f.k));
    return c;
}

// Spread fields

enum class SpreadKind { PlaneSpread, LineSpread };

inline const char* spread_name(SpreadKind k) { return k == SpreadKind::PlaneSpread ? "plane" : "line"; }

inline Vec3 plane_normal(const Solid& s)
{
    if (const auto* p = std::get_if<Prism>(&s))
        return p->u();
    throw std::invalid_argument("plane spread needs prisms");
}

inline Vec3 axis_line(const Solid& s)
{
    if (const auto* t = std::get_if<Tube>(&s))
        return t->dir.normalized();
    return std::get<Prism>(s).w();
}

// unsigned angle between two lines, in [0, pi/2]
inline double line_angle(const Vec3& a, const Vec3& b)
{
    return std::acos(std::clamp(std::abs(a.normalized().dot(b.normalized())), 0.0, 1.0));
}

struct SpreadField {
    SpreadKind kind = SpreadKind::LineSpread;
    int k = 0;
    CellList cells; // every cell met by at least one shading
    std::vector<double> values;
    double threshold_meaningful = 0.0;

    double at(std::uint32_t cell) const
    {
        auto it = std::lower_bound(cells.begin(), cells.end(), cell);
        return it != cells.end() && *it == cell ? values[it - cells.begin()] : 0.0;
    }
    double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
    json to_json() const
    {
        return {{"kind", spread_name(kind)},
                {"cells", cells.size()},
                {"max", max()},
                {"threshold_meaningful", threshold_meaningful}};
    }
};

// Per-cell maximum pairwise angle between the normals (plane spread) or the
// axes (line spread) of the solids whose shading contains the cell.
inline SpreadField spread_field(const ShadedFamily& f, SpreadKind kind)
{
    validate(f);
    SpreadField out;
    out.kind = kind;
    out.k = f.k;
    std::vector<Vec3> dirs;
    for (const auto& s : f.solids) {
        dirs.push_back(kind == SpreadKind::PlaneSpread ? plane_normal(s) : axis_line(s));
        double tm;
        if (const auto* p = std::get_if<Prism>(&s))
            tm = kind == SpreadKind::PlaneSpread ? p->half.x() / p->half.y() : 2.0 * p->half.y();
        else
            tm = 2.0 * std::get<Tube>(s).radius;
        out.threshold_meaningful = std::max(out.threshold_meaningful, tm);
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> inc;
    for (std::size_t i = 0; i < f.size(); ++i)
        for (auto c : f.shadings[i])
            inc.emplace_back(c, static_cast<std::uint32_t>(i));
    std::sort(inc.begin(), inc.end());
    std::vector<std::uint32_t> here;
    for (std::size_t i = 0; i < inc.size();) {
        std::size_t j = i;
        here.clear();
        while (j < inc.size() && inc[j].first == inc[i].first)
            here.push_back(inc[j++].second);
        double best = 0.0;
        double min_dot = 1.0;
        for (std::size_t a = 0; a < here.size(); ++a)
            for (std::size_t b = a + 1; b < here.size(); ++b)
                min_dot = std::min(min_dot, std::abs(dirs[here[a]].dot(dirs[here[b]])));
        if (here.size() > 1)
            best = std::acos(std::clamp(min_dot, 0.0, 1.0));
        out.cells.push_back(inc[i].first);
        out.values.push_back(best);
        i = j;
    }
    return out;
}

// Heavy rectangles

struct HeavyRectangle {
    Prism prism; // 2 delta x 2 rho x 2
    std::size_t count = 0;
    double threshold = 0.0;
    double rho = 0.0;
    std::size_t anchor = 0;

    json to_json() const
    {
        return {{"prism", kakeya::to_json(prism)},
                {"count", count},
                {"threshold", threshold},
                {"rho", rho},
                {"anchor", anchor}};
    }
};

struct HeavyReport {
    std::vector<HeavyRectangle> rects;
    double fraction_in_heavy = 0.0;
    CatalogStats stats;

    // fewer than half the tubes sit in heavy rectangles
    bool few_heavy() const { return fraction_in_heavy < 0.5; }
    json to_json() const
    {
        json r = json::array();
        for (const auto& h : rects)
            r.push_back(h.to_json());
        return {{"heavy", r},
                {"fraction_in_heavy", fraction_in_heavy},
                {"few_heavy", few_heavy()},
                {"catalog", stats.to_json()}};
    }
};

// Scans the anchored 2 delta x 2 rho x 2 catalog (dyadic rho, best roll per
// anchor) and keeps rectangles holding more than delta^-eps (rho/delta) tubes.
inline HeavyReport detect_heavy(const std::vector<Tube>& f, double eps, CatalogOptions opt = {})
{
    HeavyReport out;
    if (f.empty())
        return out;
    require_distinct(f);
    double delta = 0.0;
    for (const auto& t : f)
        delta = std::max(delta, t.radius);
    std::vector<Solid> solids(f.begin(), f.end());
    opt.tubes = false;
    opt.self = false;
    opt.prisms = true;
    opt.fixed_s = 2.0 * delta;
    scan_catalog(
        solids, opt,
        [&](const PrismHit& h) {
            double rho = 0.5 * h.t;
            double thr = std::pow(delta, -eps) * rho / delta;
            if (static_cast<double>(h.count) > thr) {
                Prism p = detail::roll_prism(detail::make_member(solids[h.anchor]), h.s, h.t, h.phi);
                out.rects.push_back({p, h.count, thr, rho, h.anchor});
            }
        },
        [](const TubeHit&) {}, [](const SelfHit&) {}, &out.stats);
    std::vector<char> in(f.size(), 0);
    for (const auto& h : out.rects)
        for (std::size_t i = 0; i < f.size(); ++i)
            if (!in[i] && (f[i].anchor - h.prism.center).norm() <= 2.0 && contained_in(solids[i], h.prism))
                in[i] = 1;
    out.fraction_in_heavy =
        static_cast<double>(std::count(in.begin(), in.end(), 1)) / static_cast<double>(f.size());
    return out;
}

// Clustering tubes of a thin host into prisms

struct ClusterOptions {
    // force a spread band instead of the pigeonholed one
    std::optional<int> band;
};

struct ClusterBand {
    double theta = 0.0;
    double fraction_sum = 0.0; // sum over tubes of |Z(T)|/|T|
};

struct ClusterResult {
    double theta = 0.0;
    double omega = 0.0;
    int band = 0;
    std::vector<ClusterBand> bands;
    std::vector<Prism> prisms;
    std::vector<double> fullness; // |U_{T in R} Y(T)| / |R|
    std::vector<std::size_t> retained; // tubes with a large band fraction
    double coverage = 0.0;
    double coverage_floor = 0.0;

    json to_json() const
    {
        json b = json::array();
        for (const auto& x : bands)
            b.push_back({{"theta", x.theta}, {"fraction_sum", x.fraction_sum}});
        json p = json::array();
        for (std::size_t i = 0; i < prisms.size(); ++i)
            p.push_back({{"prism", kakeya::to_json(prisms[i])}, {"fullness", fullness[i]}});
        return {{"theta", theta},  {"omega", omega},       {"band", band},
                {"bands", b},      {"prisms", p},          {"retained", retained.size()},
                {"coverage", coverage}, {"coverage_floor", coverage_floor}};
    }
};

inline ClusterResult cluster_into_prisms(const ShadedFamily& f, const Prism& host, double K, ClusterOptions opt = {})
{
    validate(f);
    std::vector<Tube> tubes;
    double delta = 0.0;
    for (const auto& s : f.solids) {
        const auto* t = std::get_if<Tube>(&s);
        if (!t)
            throw std::invalid_argument("cluster_into_prisms needs tubes");
        if (!contained_in(s, host))
            throw std::invalid_argument("tube outside host");
        tubes.push_back(*t);
        delta = std::max(delta, t->radius);
    }
    const double rho = 2.0 * host.half.y();
    const std::size_t N = tubes.size();
    if (N == 0 || static_cast<double>(N) < K * rho / delta)
        throw std::invalid_argument("hypothesis violated");

    ShadedFamily full = full_shading(f.solids, f.k);
    SpreadField L = spread_field(full, SpreadKind::LineSpread);

    // band 0 is [0, 2 delta), band j >= 1 is [delta 2^j, delta 2^(j+1))
    const int J = std::max(0, static_cast<int>(std::floor(std::log2(rho / delta) + 1e-9)));
    auto band_of = [&](double v) {
        if (v < 2.0 * delta)
            return 0;
        return std::min(J, static_cast<int>(std::floor(std::log2(v / delta))));
    };
    std::vector<std::vector<double>> frac(N, std::vector<double>(J + 1, 0.0));
    for (std::size_t i = 0; i < N; ++i) {
        const auto& y = full.shadings[i];
        for (auto c : y)
            frac[i][band_of(L.at(c))] += 1.0;
        for (auto& v : frac[i])
            v /= std::max<std::size_t>(1, y.size());
    }
    ClusterResult out;
    for (int j = 0; j <= J; ++j) {
        ClusterBand b{std::ldexp(delta, j), 0.0};
        for (std::size_t i = 0; i < N; ++i)
            b.fraction_sum += frac[i][j];
        out.bands.push_back(b);
    }
    int best = 0;
    for (int j = 1; j <= J; ++j)
        if (out.bands[j].fraction_sum > out.bands[best].fraction_sum)
            best = j;
    if (opt.band)
        best = std::clamp(*opt.band, 0, J);
    out.band = best;
    out.theta = out.bands[best].theta;
    out.omega = 4.0 * out.theta;

    const double nb = J + 1;
    for (std::size_t i = 0; i < N; ++i)
        if (frac[i][best] >= 1.0 / (2.0 * nb))
            out.retained.push_back(i);

    // R(T1): the host slice of width omega along T1; keep one only when T1 is
    // not already inside a kept prism
    const Vec3 n = host.u();
    for (std::size_t i : out.retained) {
        const Tube& t = tubes[i];
        bool covered = false;
        for (const auto& p : out.prisms)
            covered = covered || contained_in(Solid{t}, p);
        if (covered)
            continue;
        Vec3 z = t.dir - t.dir.dot(n) * n;
        if (z.norm() < 1e-9)
            continue;
        z.normalize();
        Mat3 fr;
        fr.col(0) = n;
        fr.col(1) = z.cross(n);
        fr.col(2) = z;
        Vec3 c = t.anchor - (t.anchor - host.center).dot(n) * n;
        double w = std::max(out.omega, 2.0 * t.radius * (1.0 + 1e-9));
        Vec3 dims(2.0 * host.half.x(), std::max(w, 2.0 * host.half.x()), t.length + 2.0 * t.radius * (1.0 + 1e-9));
        out.prisms.push_back(Prism{c, fr, dims / 2.0});
    }

    std::vector<char> in(N, 0);
    for (const auto& p : out.prisms) {
        Voxels u(f.k);
        for (std::size_t i = 0; i < N; ++i)
            if (contained_in(f.solids[i], p)) {
                in[i] = 1;
                for (auto c : f.shadings[i])
                    u.set_flat(c);
            }
        std::size_t vol = rasterize_cells(Solid{p}, f.k).size();
        out.fullness.push_back(vol ? static_cast<double>(u.count()) / vol : 0.0);
    }
    out.coverage = static_cast<double>(std::count(in.begin(), in.end(), 1)) / static_cast<double>(N);
    out.coverage_floor = 1.0 / (2.0 * std::log2(1.0 / delta) + 2.0);
    return out;
}

// The prism dichotomy: one coarsening step

enum class Branch { A, B, Inconclusive };

inline const char* branch_name(Branch b)
{
    switch (b) {
    case Branch::A:
        return "A";
    case Branch::B:
        return "B";
    default:
        return "inconclusive";
    }
}

struct DichotomyConfig {
    double eta = 0.0;
    double tau = 0.5;
    // ball centres tried per spread region in step 3
    std::size_t max_centers = 64;
};

struct DichotomyStep {
    Branch branch = Branch::Inconclusive;
    std::optional<ScanResult> witness; // branch A
    ShadedFamily coarse;               // branch B
    double s = 0, t = 0, s_new = 0, t_new = 0;
    double theta = 0;
    double mu = 0;
    double min_density = 0; // branch B: smallest |Y'(R')|/|R'|
    json trace = json::array();

    json record() const
    {
        json j = {{"branch", branch_name(branch)}, {"theta", theta}, {"mu", mu},      {"s", s},
                  {"t", t},                         {"s_new", s_new}, {"t_new", t_new}, {"min_density", min_density},
                  {"prisms_out", coarse.size()}};
        if (witness)
            j["witness"] = witness->to_json();
        return j;
    }
};

class DichotomyInconclusive : public std::runtime_error {
public:
    explicit DichotomyInconclusive(json trace)
        : std::runtime_error("dichotomy inconclusive"), trace_(std::move(trace))
    {
    }
    const json& trace() const { return trace_; }

private:
    json trace_;
};

namespace detail {

inline ShadedFamily keep_cells(const ShadedFamily& f, const std::vector<std::size_t>& which,
                               const std::function<bool(std::uint32_t)>& keep)
{
    ShadedFamily out{f.k, f.solids, std::vector<CellList>(f.size())};
    for (std::size_t i : which)
        for (auto c : f.shadings[i])
            if (keep(c))
                out.shadings[i].push_back(c);
    return out;
}

inline double ball_fraction(const RowRank<3>& rank, const Voxels& u, const Vec3& c, double r)
{
    BallCount b = ball_count(rank, u, c, r);
    return b.total ? static_cast<double>(b.hit) / b.total : 0.0;
}

} // namespace detail

// Decision procedure following the proof of the bigger-rectangle dichotomy on
// the actual input. Every pigeonhole loss is the explicit factor
// 1/(2 log2(1/delta) + 2).
inline DichotomyStep coarsen_step(const ShadedFamily& f, double eps, DichotomyConfig cfg = {})
{
    validate(f);
    if (f.solids.empty())
        throw std::invalid_argument("empty family");
    Vec3 dims = Vec3::Zero();
    for (const auto& s : f.solids) {
        const auto* p = std::get_if<Prism>(&s);
        if (!p)
            throw std::invalid_argument("coarsen_step needs prisms");
        if (dims.isZero())
            dims = p->dims();
        else if (!p->dims().isApprox(dims, 1e-9))
            throw std::invalid_argument("coarsen_step needs prisms of one size");
    }
    const double delta = f.delta();
    const double s = dims.x(), t = dims.y();
    if (s > std::pow(delta, eps) * t * (1.0 + 1e-9))
        throw std::invalid_argument("need s <= delta^eps * t");
    if (f.mass_cells() == 0)
        throw std::invalid_argument("zero density");
    const double lf = 1.0 / (2.0 * std::log2(1.0 / delta) + 2.0);
    const double eta = cfg.eta;
    const std::size_t N = f.size();

    DichotomyStep out;
    out.s = s;
    out.t = t;
    std::vector<std::size_t> all(N);
    for (std::size_t i = 0; i < N; ++i)
        all[i] = i;
    std::vector<std::size_t> cells_of(N);
    for (std::size_t i = 0; i < N; ++i)
        cells_of[i] = rasterize_cells(f.solids[i], f.k).size();

    Voxels U = union_voxels(f);
    RowRank<3> urank(U);

    // Step 1
    Pigeonhole ph = pigeonhole_uniform(f);
    out.mu = ph.mu;
    double mu_thr = std::pow(delta, -eps * eps + 3.0 * eta) * s * t * static_cast<double>(N);
    ShadedFamily Y2 = regularize_family(ph.refined);
    {
        double d = detail::ball_fraction(urank, U, Vec3::Zero(), 1.0);
        json rec = {{"step", 1}, {"mu", ph.mu}, {"mu_threshold", mu_thr}, {"unit_ball_density", d}};
        out.trace.push_back(rec);
        if (ph.mu <= mu_thr && d > 0.0) {
            double z = zeta_from_density(d, s, 1.0);
            if (z <= eps) {
                out.branch = Branch::A;
                out.witness = ScanResult{z, s, 1.0, Vec3::Zero(), d};
                return out;
            }
        }
    }

    // Steps 2 and 3: plane spread
    SpreadField P = spread_field(Y2, SpreadKind::PlaneSpread);
    const double theta3 = std::pow(delta, -4.0 * eta / eps) * s / t;
    {
        json rec = {{"step", 3}, {"theta_min", theta3}, {"max_plane_spread", P.max()}};
        json tried = json::array();
        for (double theta = theta3; theta <= kPi / 2.0; theta *= 2.0) {
            double r = std::min(1.0, t * theta);
            if (r <= s || r < std::pow(delta, -eta) * s)
                continue;
            for (std::size_t i = 0; i < N; ++i) {
                CellList E;
                for (auto c : rasterize_cells(f.solids[i], f.k)) {
                    double v = P.at(c);
                    if (v >= theta && v < 2.0 * theta)
                        E.push_back(c);
                }
                double need = lf * lf * std::pow(delta, eta) * static_cast<double>(cells_of[i]);
                if (static_cast<double>(E.size()) < need || E.empty())
                    continue;
                Voxels g(f.k);
                double best = 0.0;
                Vec3 bc = Vec3::Zero();
                std::size_t stride = std::max<std::size_t>(1, E.size() / cfg.max_centers);
                for (std::size_t q = 0; q < E.size(); q += stride) {
                    Vec3 c = g.center_flat(E[q]);
                    double d = detail::ball_fraction(urank, U, c, r);
                    if (d > best) {
                        best = d;
                        bc = c;
                    }
                }
                double z = zeta_from_density(best, s, r);
                tried.push_back({{"prism", i}, {"theta", theta}, {"r", r}, {"density", best}, {"zeta", z}});
                if (z <= eps) {
                    rec["tried"] = tried;
                    out.trace.push_back(rec);
                    out.branch = Branch::A;
                    out.theta = theta;
                    out.witness = ScanResult{z, s, r, bc, best};
                    return out;
                }
            }
        }
        rec["tried"] = tried;
        out.trace.push_back(rec);
    }

    // Step 4: low plane spread, then pigeonhole the line spread
    const double s1 = std::min(t, std::pow(delta, -4.0 * eta / eps) * s);
    ShadedFamily Y3 = detail::keep_cells(Y2, all, [&](std::uint32_t c) { return P.at(c) <= s1 / t * (1.0 + 1e-9); });
    std::vector<std::size_t> R0;
    for (std::size_t i = 0; i < N; ++i)
        if (static_cast<double>(Y3.shadings[i].size()) >= lf * std::pow(delta, eta) * cells_of[i] &&
            !Y3.shadings[i].empty())
            R0.push_back(i);
    if (R0.empty()) {
        out.trace.push_back({{"step", 4}, {"R0", 0}});
        throw DichotomyInconclusive(out.trace);
    }
    ShadedFamily Y3r = detail::keep_cells(Y3, R0, [](std::uint32_t) { return true; });
    SpreadField Lsp = spread_field(Y3r, SpreadKind::LineSpread);
    const double theta_lo = std::pow(delta, -eps * eps / 2.0) * t;
    // band 0 is [0, 2 theta_lo)
    int J = 0;
    while (std::ldexp(theta_lo, J + 1) <= kPi / 4.0)
        ++J;
    auto band_of = [&](double v) {
        if (v < 2.0 * theta_lo)
            return 0;
        return std::min(J, static_cast<int>(std::floor(std::log2(v / theta_lo))));
    };
    std::vector<std::size_t> band_mass(J + 1, 0);
    for (std::size_t i : R0)
        for (auto c : Y3r.shadings[i])
            ++band_mass[band_of(Lsp.at(c))];
    int jb = static_cast<int>(std::max_element(band_mass.begin(), band_mass.end()) - band_mass.begin());
    out.theta = std::ldexp(theta_lo, jb);
    out.trace.push_back({{"step", 4},
                         {"s1", s1},
                         {"R0", R0.size()},
                         {"theta_lo", theta_lo},
                         {"band_mass", band_mass},
                         {"band", jb},
                         {"theta", out.theta}});

    // Step 5: coarse prisms around the prisms with a dense band shading
    const double sp = s1 * out.theta / t;
    const double tp = std::min(1.0, t * sp / s);
    out.s_new = sp;
    out.t_new = tp;
    std::vector<std::size_t> R1;
    for (std::size_t i : R0) {
        std::size_t m = 0;
        for (auto c : Y3r.shadings[i])
            m += band_of(Lsp.at(c)) == jb;
        if (m > 0 && static_cast<double>(m) >= lf * lf * std::pow(delta, 2.0 * eta) * cells_of[i])
            R1.push_back(i);
    }
    ShadedFamily coarse{f.k, {}, {}};
    json dens = json::array();
    double min_d = 1.0;
    const double floor_d = std::pow(delta, cfg.tau);
    for (std::size_t i : R1) {
        const Prism& p = std::get<Prism>(f.solids[i]);
        Prism np{p.center, p.frame, Vec3(0.5 * std::max(sp, s), 0.5 * std::max(tp, t), p.half.z())};
        if (np.half.x() > np.half.y())
            np.half.y() = np.half.x();
        Prism two{np.center, np.frame, 2.0 * np.half};
        Voxels src(f.k);
        for (std::size_t q = 0; q < N; ++q)
            if ((std::get<Prism>(f.solids[q]).center - np.center).norm() <= 2.0 * np.half.norm() &&
                contained_in(f.solids[q], two))
                for (auto c : f.shadings[q])
                    src.set_flat(c);
        Voxels nb = dilate_set(src, sp);
        CellList y;
        for (auto c : rasterize_cells(Solid{np}, f.k))
            if (nb.get_flat(c))
                y.push_back(c);
        std::size_t vol = rasterize_cells(Solid{np}, f.k).size();
        double d = vol ? static_cast<double>(y.size()) / vol : 0.0;
        dens.push_back(d);
        if (d >= floor_d) {
            min_d = std::min(min_d, d);
            coarse.solids.push_back(np);
            coarse.shadings.push_back(std::move(y));
        }
    }
    out.trace.push_back({{"step", 5},
                         {"s_new", sp},
                         {"t_new", tp},
                         {"R1", R1.size()},
                         {"density_floor", floor_d},
                         {"densities", dens},
                         {"s_new_cap", std::pow(delta, eps / 2.0)}});
    if (coarse.solids.empty())
        throw DichotomyInconclusive(out.trace);
    out.branch = Branch::B;
    out.min_density = min_d;
    out.coarse = std::move(coarse);
    return out;
}

// Iterates coarsen_step until branch A, t' = 1, an inconclusive step, or the
// round limit.
struct DichotomyRun {
    std::vector<DichotomyStep> rounds;
    Branch final_branch = Branch::Inconclusive;
    std::string stop_reason;

    std::string jsonl() const
    {
        std::ostringstream os;
        for (std::size_t i = 0; i < rounds.size(); ++i) {
            json j = rounds[i].record();
            j["round"] = i;
            os << j.dump() << '\n';
        }
        return os.str();
    }
};

inline DichotomyRun run_dichotomy(const ShadedFamily& f, double eps, std::size_t max_rounds = 8, DichotomyConfig cfg = {})
{
    DichotomyRun run;
    ShadedFamily cur = f;
    for (std::size_t r = 0; r < max_rounds; ++r) {
        DichotomyStep st;
        try {
            st = coarsen_step(cur, eps, cfg);
        } catch (const DichotomyInconclusive& e) {
            st.branch = Branch::Inconclusive;
            st.trace = e.trace();
            run.rounds.push_back(st);
            run.final_branch = Branch::Inconclusive;
            run.stop_reason = "inconclusive";
            return run;
        } catch (const std::invalid_argument& e) {
            run.stop_reason = e.what();
            return run;
        }
        run.rounds.push_back(st);
        run.final_branch = st.branch;
        if (st.branch == Branch::A) {
            run.stop_reason = "branch A";
            return run;
        }
        if (st.t_new >= 1.0 - 1e-12) {
            run.stop_reason = "t reached 1";
            return run;
        }
        // prisms of one size are needed for the next round
        cur = st.coarse;
    }
    run.stop_reason = "round limit";
    return run;
}

// Four-way classification of a shaded tube family by direct measurement

struct FourWayConfig {
    double eps = 0.5;
    double eta = 0.2;   // scale separation delta^-eta, at least 2
    double tau = 0.05;
    double eta1 = 0.5;
    CatalogOptions catalog = {};
};

struct FourWayResult {
    bool a = false, b = false, c = false, d = false;
    json details;

    std::string label() const
    {
        std::string s;
        if (a)
            s += 'A';
        if (b)
            s += 'B';
        if (c)
            s += 'C';
        if (d)
            s += 'D';
        return s.empty() ? "none" : s;
    }
};

inline FourWayResult four_way_classify(const ShadedFamily& f, FourWayConfig cfg = {})
{
    validate(f);
    std::vector<Tube> tubes;
    for (const auto& s : f.solids) {
        const auto* t = std::get_if<Tube>(&s);
        if (!t)
            throw std::invalid_argument("four_way_classify needs tubes");
        tubes.push_back(*t);
    }
    if (tubes.size() < 2)
        throw std::invalid_argument("need at least two tubes");
    require_distinct(tubes);
    const double delta = f.delta();
    const double beta = std::log(static_cast<double>(tubes.size())) / std::log(1.0 / delta);
    FourWayResult out;
    out.details["beta"] = beta;

    {
        double A = std::max(2.0, std::pow(delta, -cfg.eta));
        Voxels u = union_voxels(f);
        ScanResult s = assouad_scan(u, A);
        out.a = s.zeta <= cfg.eps;
        out.details["A"] = {{"min_separation", A}, {"scan", s.to_json()}, {"holds", out.a}};
    }
    {
        AxiomReport r = check_self_similar(tubes, std::pow(delta, -cfg.eps), cfg.catalog);
        out.b = r.passed;
        out.details["B"] = {{"self_similar", r.to_json()}, {"holds", out.b}};
    }
    {
        HeavyReport h = detect_heavy(tubes, cfg.eps, cfg.catalog);
        out.details["heavy"] = {{"rectangles", h.rects.size()}, {"fraction_in_heavy", h.fraction_in_heavy}};
    }
    json cj = json::array(), dj = json::array();
    for (double rho = 2.0 * delta; rho <= 1.0 + 1e-12; rho *= 2.0) {
        Cover cov = build_partitioning_cover(tubes, rho);
        if (rho <= std::pow(delta, cfg.eps) * (1.0 + 1e-12)) {
            double need = std::pow(rho, -beta - cfg.tau);
            bool big = static_cast<double>(cov.tubes.size()) >= need;
            json row = {{"rho", rho}, {"count", cov.tubes.size()}, {"need", need}};
            if (big && cov.tubes.size() > 1) {
                std::vector<Solid> ts(cov.tubes.begin(), cov.tubes.end());
                AxiomReport r = convex_wolff_error(ts, std::pow(rho, -cfg.eta1), cfg.catalog);
                row["cwa"] = r.error_constant;
                row["holds"] = r.passed;
                out.c = out.c || r.passed;
            }
            cj.push_back(row);
        }
        if (rho >= std::pow(delta, 1.0 - cfg.eps) * (1.0 - 1e-12)) {
            double need = std::pow(delta / rho, -beta - cfg.tau);
            std::vector<std::size_t> order(cov.buckets.size());
            for (std::size_t i = 0; i < order.size(); ++i)
                order[i] = i;
            std::sort(order.begin(), order.end(),
                      [&](std::size_t x, std::size_t y) { return cov.buckets[x].size() > cov.buckets[y].size(); });
            json row = {{"rho", rho}, {"need", need}, {"largest", cov.buckets.empty() ? 0 : cov.buckets[order[0]].size()}};
            for (std::size_t q = 0; q < std::min<std::size_t>(order.size(), 4); ++q) {
                const auto& bucket = cov.buckets[order[q]];
                if (static_cast<double>(bucket.size()) < need || bucket.size() < 2)
                    break;
                AxiomReport r = convex_wolff_error(rescale_bucket(tubes, bucket, cov.tubes[order[q]]),
                                                   std::pow(delta / rho, -cfg.eta1), cfg.catalog);
                row["cwa"] = r.error_constant;
                if (r.passed) {
                    out.d = true;
                    row["holds"] = true;
                    break;
                }
            }
            dj.push_back(row);
        }
    }
    out.details["C"] = {{"scales", cj}, {"holds", out.c}};
    out.details["D"] = {{"scales", dj}, {"holds", out.d}};
    return out;
}

} // namespace kakeya
