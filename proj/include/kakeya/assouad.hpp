#pragma once

#include "shading.hpp"
#include "voxel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kakeya {

struct ScanResult {
    double zeta = 0.0;
    double rho = 0.0;
    double r = 0.0;
    Vec3 ball_center = Vec3::Zero();
    double density = 1.0;

    double separation() const { return r / rho; }
    double dimension_witnessed() const { return 3.0 - zeta; }

    json to_json() const
    {
        return {{"zeta", zeta},
                {"rho", rho},
                {"r", r},
                {"ball_center", to_json_vec(ball_center)},
                {"separation", separation()},
                {"dimension_witnessed", dimension_witnessed()},
                {"density", density},
                {"note", "ball centres on an r/2-net; Chebyshev rho-neighbourhoods"}};
    }
};

inline double zeta_from_density(double density, double rho, double r)
{
    if (!(density > 0.0))
        throw std::invalid_argument("undefined zeta");
    if (density >= 1.0)
        return 0.0;
    return std::log(density) / std::log(rho / r);
}

// (rho/r)^zeta |B| = |B cap N_rho(e)|
inline double zeta(const Voxels& e, const Vec3& center, double r, double rho)
{
    double d = e.delta();
    if (!(rho >= d * (1.0 - 1e-12) && rho < r && r <= 1.0 + 1e-12))
        throw std::invalid_argument("need delta <= rho < r <= 1");
    return zeta_from_density(ball_density(e, center, r, rho), rho, r);
}

struct ScanOptions {
    // only accept balls that meet e itself, not just its rho-neighbourhood
    bool require_core_hit = false;
    // among equal zeta keep the ball holding the most cells of e
    bool prefer_mass = false;
};

// Minimum zeta over dyadic rho, dyadic r >= A rho and centres on the r/2-net
// of the domain; ties keep the first triple in (rho, r, x, y, z) order unless
// prefer_mass is set.
inline ScanResult assouad_scan(const Voxels& e, double A, ScanOptions opt = {})
{
    if (!(A >= 2.0))
        throw std::invalid_argument("min_separation must be at least 2");
    if (e.empty())
        throw std::invalid_argument("empty set");
    const double d = e.delta();
    std::optional<RowRank<3>> core;
    if (opt.require_core_hit || opt.prefer_mass)
        core.emplace(e);
    std::size_t best_core = 0;
    ScanResult best;
    best.zeta = std::numeric_limits<double>::infinity();
    bool found = false;
    for (double rho = d; rho * A <= 1.0 + 1e-12; rho *= 2.0) {
        Voxels n = dilate_set(e, rho);
        RowRank<3> rank(n);
        double r = rho;
        while (r < A * rho * (1.0 - 1e-12))
            r *= 2.0;
        for (; r <= 1.0 + 1e-12; r *= 2.0) {
            double step = 0.5 * r;
            int m = static_cast<int>(std::lround(2.0 / step));
            for (int ix = 0; ix <= m; ++ix)
                for (int iy = 0; iy <= m; ++iy)
                    for (int iz = 0; iz <= m; ++iz) {
                        Vec3 c(-1.0 + ix * step, -1.0 + iy * step, -1.0 + iz * step);
                        BallCount bc = ball_count(rank, n, c, r);
                        if (bc.hit == 0 || bc.total == 0)
                            continue;
                        double z = zeta_from_density(bc.density(), rho, r);
                        if (z < best.zeta || (opt.prefer_mass && z == best.zeta)) {
                            std::size_t hit = core ? ball_count(*core, e, c, r).hit : 1;
                            if (opt.require_core_hit && hit == 0)
                                continue;
                            if (z == best.zeta && hit <= best_core)
                                continue;
                            best = {z, rho, r, c, bc.density()};
                            best_core = hit;
                            found = true;
                        }
                    }
            if (found && best.zeta == 0.0 && !opt.prefer_mass)
                return best;
        }
    }
    if (!found)
        throw std::runtime_error("no admissible ball");
    return best;
}

struct AmplifyStep {
    double rho, r, zeta;
    Vec3 center;
    std::size_t removed;   // cells of the current shading inside the ball
    std::size_t remaining; // after removal
};

struct AmplifyResult {
    ShadedFamily refined;
    double rho = 0.0, r = 0.0;
    double ratio_exponent = 0.0;
    std::vector<AmplifyStep> trace;
    std::vector<std::size_t> selected; // indices into trace, pairwise disjoint balls
    std::size_t input_mass = 0;
    std::size_t retained_mass = 0;

    std::string trace_csv() const
    {
        std::ostringstream os;
        os << "iteration,rho,r,cx,cy,cz,zeta,removed,remaining,selected\n";
        os.precision(17);
        for (std::size_t i = 0; i < trace.size(); ++i) {
            const auto& s = trace[i];
            bool sel = std::find(selected.begin(), selected.end(), i) != selected.end();
            os << i << ',' << s.rho << ',' << s.r << ',' << s.center.x() << ',' << s.center.y() << ','
               << s.center.z() << ',' << s.zeta << ',' << s.removed << ',' << s.remaining << ',' << (sel ? 1 : 0)
               << '\n';
        }
        return os.str();
    }
};

namespace detail {

inline CellList cells_in_ball(const CellList& y, int k, const Vec3& c, double r, bool inside)
{
    Voxels g(k);
    CellList out;
    const double r2 = r * r * (1.0 + 1e-12);
    for (auto cell : y)
        if (((g.center_flat(cell) - c).squaredNorm() <= r2) == inside)
            out.push_back(cell);
    return out;
}

inline std::size_t mass(const std::vector<CellList>& ys)
{
    std::size_t m = 0;
    for (const auto& y : ys)
        m += y.size();
    return m;
}

} // namespace detail

// Repeatedly remove the scanner's best ball from the shading until half the
// mass is gone, keep the (rho, r) pair carrying the most removed mass, thin its
// balls to a disjoint subfamily and restrict the original shading to them.
inline AmplifyResult two_scale_amplify(const ShadedFamily& f, double A)
{
    validate(f);
    AmplifyResult out;
    out.input_mass = f.mass_cells();
    if (out.input_mass == 0)
        throw std::invalid_argument("zero density");
    const double L = std::log2(1.0 / f.delta());
    const auto max_iter = static_cast<std::size_t>(std::ceil(10.0 * L * L));
    std::vector<CellList> cur = f.shadings;
    std::size_t m = out.input_mass;
    while (2 * m > out.input_mass) {
        if (out.trace.size() >= max_iter)
            throw std::runtime_error("amplification did not converge");
        ShadedFamily now{f.k, f.solids, cur};
        Voxels u = union_voxels(now);
        ScanResult s = assouad_scan(u, A, ScanOptions{true, true});
        std::size_t removed = 0;
        for (auto& y : cur) {
            CellList keep = detail::cells_in_ball(y, f.k, s.ball_center, s.r, false);
            removed += y.size() - keep.size();
            y.swap(keep);
        }
        m -= removed;
        out.trace.push_back({s.rho, s.r, s.zeta, s.ball_center, removed, m});
    }

    // pigeonhole: scanner scales are dyadic, so bands are exact (rho, r) pairs
    std::map<std::pair<double, double>, std::size_t> band;
    for (const auto& t : out.trace)
        band[{t.rho, t.r}] += t.removed;
    auto top = band.begin();
    for (auto it = band.begin(); it != band.end(); ++it)
        if (it->second > top->second)
            top = it;
    out.rho = top->first.first;
    out.r = top->first.second;

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < out.trace.size(); ++i)
        if (out.trace[i].rho == out.rho && out.trace[i].r == out.r)
            idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return out.trace[a].removed > out.trace[b].removed; });
    for (std::size_t i : idx) {
        bool ok = true;
        for (std::size_t j : out.selected)
            ok = ok && (out.trace[i].center - out.trace[j].center).norm() > 2.0 * out.r;
        if (ok)
            out.selected.push_back(i);
    }
    std::sort(out.selected.begin(), out.selected.end());

    out.refined = ShadedFamily{f.k, f.solids, {}};
    Voxels g(f.k);
    for (const auto& y : f.shadings) {
        CellList keep;
        for (auto c : y) {
            Vec3 p = g.center_flat(c);
            for (std::size_t i : out.selected)
                if ((p - out.trace[i].center).squaredNorm() <= out.r * out.r * (1.0 + 1e-12)) {
                    keep.push_back(c);
                    break;
                }
        }
        out.refined.shadings.push_back(std::move(keep));
    }
    out.retained_mass = out.refined.mass_cells();
    if (out.retained_mass > 0) {
        Voxels u = union_voxels(out.refined);
        double vr = static_cast<double>(dilate_set(u, out.r).count());
        double vp = static_cast<double>(dilate_set(u, out.rho).count());
        out.ratio_exponent = std::log(vp / vr) / std::log(out.rho / out.r);
    }
    return out;
}

} // namespace kakeya
