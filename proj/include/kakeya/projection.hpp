#pragma once

#include "shading.hpp"
#include "voxel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace kakeya {

// Slope functions

// f sampled on z_i = -1 + i delta, linearly interpolated in between.
class SlopeFunction {
public:
    SlopeFunction() = default;

    SlopeFunction(std::vector<double> samples, double delta) : samples_(std::move(samples)), delta_(delta)
    {
        if (!(delta > 0.0))
            throw std::invalid_argument("scale must be positive");
        std::size_t n = static_cast<std::size_t>(std::lround(2.0 / delta)) + 1;
        if (samples_.size() != n)
            throw std::invalid_argument("slope samples do not match the grid");
        certify();
    }

    static SlopeFunction sample(const std::function<double(double)>& f, double delta)
    {
        std::size_t n = static_cast<std::size_t>(std::lround(2.0 / delta)) + 1;
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i)
            s[i] = f(-1.0 + static_cast<double>(i) * delta);
        return SlopeFunction(std::move(s), delta);
    }

    double operator()(double z) const
    {
        double u = (std::clamp(z, -1.0, 1.0) + 1.0) / delta_;
        auto i = static_cast<std::size_t>(std::floor(u));
        if (i + 1 >= samples_.size())
            return samples_.back();
        double a = u - static_cast<double>(i);
        return (1.0 - a) * samples_[i] + a * samples_[i + 1];
    }

    double delta() const { return delta_; }
    const std::vector<double>& samples() const { return samples_; }
    double min_slope() const { return min_d1_; }
    double max_slope() const { return max_d1_; }
    double max_curvature() const { return max_d2_; }

    bool admissible() const { return min_d1_ >= 1.0 - 1e-9 && max_d1_ <= 2.0 + 1e-9 && max_d2_ <= 0.01 + 1e-9; }

    json to_json() const
    {
        return {{"delta", delta_},
                {"samples", samples_},
                {"min_abs_f1", min_d1_},
                {"max_abs_f1", max_d1_},
                {"max_abs_f2", max_d2_},
                {"admissible", admissible()}};
    }

    static SlopeFunction from_json(const json& j)
    {
        return SlopeFunction(j.at("samples").get<std::vector<double>>(), j.at("delta").get<double>());
    }

private:
    void certify()
    {
        const std::size_t n = samples_.size();
        min_d1_ = std::numeric_limits<double>::infinity();
        max_d1_ = 0.0;
        max_d2_ = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            double d1 = std::abs(samples_[i + 1] - samples_[i]) / delta_;
            min_d1_ = std::min(min_d1_, d1);
            max_d1_ = std::max(max_d1_, d1);
        }
        for (std::size_t i = 1; i + 1 < n; ++i)
            max_d2_ = std::max(max_d2_,
                               std::abs(samples_[i + 1] - 2.0 * samples_[i] + samples_[i - 1]) / (delta_ * delta_));
    }

    std::vector<double> samples_;
    double delta_ = 0.0;
    double min_d1_ = 0.0, max_d1_ = 0.0, max_d2_ = 0.0;
};

// Twisted projection (x, y, z) -> (x + f(z) y, z)

inline std::array<double, 2> twisted_point(const Vec3& p, const SlopeFunction& f)
{
    return {p.x() + f(p.z()) * p.y(), p.z()};
}

inline std::size_t project_cell(const Voxels& e, const Voxels2& out, std::size_t flat, const SlopeFunction& f,
                                bool* inside)
{
    auto q = twisted_point(e.center_flat(flat), f);
    int i = out.cell_of(0, q[0]);
    int j = out.cell_of(1, q[1]);
    *inside = out.in_range(i, j);
    return *inside ? out.index(i, j) : 0;
}

inline void check_admissible(const SlopeFunction& f, bool test_mode)
{
    if (!test_mode && !f.admissible())
        throw std::invalid_argument("slope function not admissible");
}

inline Voxels2 twisted_project(const Voxels& e, const SlopeFunction& f, bool test_mode = false)
{
    check_admissible(f, test_mode);
    Voxels2 out(e.k());
    e.for_each([&](std::size_t c) {
        bool in = false;
        std::size_t q = project_cell(e, out, c, f, &in);
        if (in)
            out.set_flat(q);
    });
    return out;
}

// Same on a sorted 3D cell list; returns sorted 2D cells.
inline CellList twisted_project_cells(const CellList& cells, int k, const SlopeFunction& f, bool test_mode = false)
{
    check_admissible(f, test_mode);
    Voxels g(k);
    Voxels2 out(k);
    CellList r;
    r.reserve(cells.size());
    for (auto c : cells) {
        bool in = false;
        std::size_t q = project_cell(g, out, c, f, &in);
        if (in)
            r.push_back(static_cast<std::uint32_t>(q));
    }
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    return r;
}

inline Voxels2 to_voxels2(const CellList& cells, int k)
{
    Voxels2 v(k);
    for (auto c : cells)
        v.set_flat(c);
    return v;
}

// Cinematic curves

struct LineParams {
    double a = 0, b = 0, c = 0, d = 0;
    json to_json() const { return json::array({a, b, c, d}); }
};

// Line {(a + c t, b + d t, t)}; undefined for horizontal tubes.
inline std::optional<LineParams> line_params(const Tube& t)
{
    if (std::abs(t.dir.z()) < 1e-12)
        return std::nullopt;
    double c = t.dir.x() / t.dir.z(), d = t.dir.y() / t.dir.z();
    return LineParams{t.anchor.x() - c * t.anchor.z(), t.anchor.y() - d * t.anchor.z(), c, d};
}

// delta-tube around the line for t in [-1, 1]
inline Tube tube_of_line(const LineParams& p, double delta)
{
    Vec3 v(p.c, p.d, 1.0);
    return make_tube(Vec3(p.a, p.b, 0.0), v, delta, delta, 2.0 * v.norm());
}

// g(t) = a + c t + f(t)(b + d t); c = 0 gives g_{a,b,d}.
inline double cinematic(double a, double b, double d, const SlopeFunction& f, double t, double c = 0.0)
{
    return a + c * t + f(t) * (b + d * t);
}

// Cells whose centre lies within `width` of g(t) horizontally for some t in
// their row; g is sampled at step delta/2.
inline Voxels2 rasterize_cinematic(double a, double b, double d, const SlopeFunction& f, double width, int k,
                                   double c = 0.0)
{
    if (std::abs(a) > 1.0 || std::abs(b) > 1.0 || std::abs(d) > 1.0 || std::abs(c) > 1.0)
        throw std::invalid_argument("curve parameters outside [-1, 1]");
    Voxels2 out(k);
    const double h = out.delta();
    for (int j = 0; j < out.n(1); ++j) {
        double t0 = -1.0 + j * h;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (int s = 0; s <= 2; ++s) {
            double g = cinematic(a, b, d, f, t0 + 0.5 * h * s, c);
            lo = std::min(lo, g);
            hi = std::max(hi, g);
        }
        int i0 = static_cast<int>(std::ceil((lo - width + 4.0) / h - 0.5 - 1e-9));
        int i1 = static_cast<int>(std::floor((hi + width + 4.0) / h - 0.5 + 1e-9));
        out.set_row_range(static_cast<std::size_t>(j), i0, i1);
    }
    return out;
}

// L^p counting norms

namespace detail {

inline double lp_from_counts(const std::vector<std::uint32_t>& count, double cell_area, double p)
{
    long double s = 0;
    for (auto m : count)
        if (m)
            s += std::pow(static_cast<long double>(m), static_cast<long double>(p));
    return static_cast<double>(std::pow(s * cell_area, 1.0L / p));
}

} // namespace detail

inline double lp_counting_norm(const std::vector<Voxels2>& curves, double p)
{
    if (!(p > 0.0))
        throw std::invalid_argument("p must be positive");
    if (curves.empty())
        return 0.0;
    std::vector<std::uint32_t> count(curves.front().cells(), 0);
    for (const auto& c : curves) {
        curves.front().check_shape(c);
        c.for_each([&](std::size_t i) { ++count[i]; });
    }
    return detail::lp_from_counts(count, curves.front().cell_volume(), p);
}

inline double lp_counting_norm(const std::vector<CellList>& curves, int k, double p)
{
    if (!(p > 0.0))
        throw std::invalid_argument("p must be positive");
    Voxels2 g(k);
    std::vector<std::uint32_t> count(g.cells(), 0);
    for (const auto& c : curves)
        for (auto i : c)
            ++count[i];
    return detail::lp_from_counts(count, g.cell_volume(), p);
}

// Parameter point sets

struct ParamPointSet {
    int dim = 3;
    double delta = 1.0 / 64;
    std::vector<std::array<double, 4>> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    int bits() const { return scale_exponent(delta); }

    void add(std::initializer_list<double> p)
    {
        std::array<double, 4> q{};
        std::copy(p.begin(), p.end(), q.begin());
        points.push_back(q);
    }

    json to_json() const
    {
        json pts = json::array();
        for (const auto& p : points)
            pts.push_back(std::vector<double>(p.begin(), p.begin() + dim));
        return {{"dim", dim}, {"delta", delta}, {"points", pts}};
    }

    static ParamPointSet from_json(const json& j)
    {
        ParamPointSet s;
        s.dim = j.at("dim").get<int>();
        s.delta = j.at("delta").get<double>();
        for (const auto& p : j.at("points")) {
            std::array<double, 4> q{};
            for (int i = 0; i < s.dim; ++i)
                q[i] = p.at(i).get<double>();
            s.points.push_back(q);
        }
        return s;
    }
};

namespace detail {

// dyadic cell of side 2^-bits, 16 bits per coordinate
inline std::uint64_t cell_key(const std::array<double, 4>& p, int dim, int bits)
{
    std::uint64_t key = 0;
    const double n = std::ldexp(1.0, bits);
    for (int a = 0; a < dim; ++a) {
        auto i = static_cast<std::int64_t>(std::floor(p[a] * n));
        i = std::clamp<std::int64_t>(i, 0, static_cast<std::int64_t>(n) - 1);
        key |= static_cast<std::uint64_t>(i) << (16 * a);
    }
    return key;
}

inline std::uint64_t coarsen_key(std::uint64_t key, int dim, int shift)
{
    std::uint64_t out = 0;
    for (int a = 0; a < dim; ++a)
        out |= (((key >> (16 * a)) & 0xffff) >> shift) << (16 * a);
    return out;
}

inline void check_points(const ParamPointSet& p)
{
    if (p.dim < 1 || p.dim > 4)
        throw std::invalid_argument("point dimension must lie in [1, 4]");
    if (p.bits() > 16)
        throw std::invalid_argument("point scale finer than 2^-16");
    for (const auto& q : p.points)
        for (int a = 0; a < p.dim; ++a)
            if (!(q[a] >= 0.0 && q[a] <= 1.0))
                throw std::invalid_argument("points must lie in [0,1]^n");
}

} // namespace detail

// delta-covering number by dyadic cells
inline std::size_t covering_number(const ParamPointSet& p)
{
    detail::check_points(p);
    std::vector<std::uint64_t> keys;
    for (const auto& q : p.points)
        keys.push_back(detail::cell_key(q, p.dim, p.bits()));
    std::sort(keys.begin(), keys.end());
    return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

// one point per occupied cell, moved to the cell centre
inline ParamPointSet snap(const ParamPointSet& p)
{
    detail::check_points(p);
    ParamPointSet out{p.dim, p.delta, {}};
    std::vector<std::uint64_t> keys;
    for (const auto& q : p.points)
        keys.push_back(detail::cell_key(q, p.dim, p.bits()));
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (auto k : keys) {
        std::array<double, 4> q{};
        for (int a = 0; a < p.dim; ++a)
            q[a] = (static_cast<double>((k >> (16 * a)) & 0xffff) + 0.5) * p.delta;
        out.points.push_back(q);
    }
    return out;
}

enum class Concentration { KatzTao, Frostman };

inline const char* concentration_name(Concentration m)
{
    return m == Concentration::KatzTao ? "katz-tao" : "frostman";
}

struct NonconcentrationResult {
    double C = 0.0;
    double r = 0.0;
    std::array<double, 4> center{};
    std::size_t count = 0;
    json to_json(int dim) const
    {
        return {{"C", C}, {"r", r}, {"center", std::vector<double>(center.begin(), center.begin() + dim)}, {"count", count}};
    }
};

namespace detail {

// Visits every ball B(x, r), r dyadic in [delta, 1], x on the r/2-net of
// [0,1]^n meeting the alive points; reports the distinct delta-cells inside.
class BallScanner {
public:
    BallScanner(const ParamPointSet& p) : p_(p), bits_(p.bits())
    {
        check_points(p);
        for (const auto& q : p.points)
            keys_.push_back(cell_key(q, p.dim, bits_));
        alive_.assign(p.size(), 1);
    }

    std::vector<char>& alive() { return alive_; }
    const std::vector<std::uint64_t>& keys() const { return keys_; }

    std::vector<double> radii() const
    {
        std::vector<double> r;
        for (int j = bits_; j >= 0; --j)
            r.push_back(std::ldexp(1.0, -j));
        return r;
    }

    // net centres (index tuples) within r of some alive point
    std::vector<std::array<int, 4>> centers(double r) const
    {
        const int n = p_.dim;
        const double step = 0.5 * r;
        const int m = static_cast<int>(std::lround(1.0 / step));
        std::unordered_set<std::uint64_t> seen;
        std::vector<std::array<int, 4>> out;
        for (std::size_t i = 0; i < p_.size(); ++i) {
            if (!alive_[i])
                continue;
            std::array<int, 4> lo{}, hi{};
            for (int a = 0; a < n; ++a) {
                lo[a] = std::max(0, static_cast<int>(std::ceil((p_.points[i][a] - r) / step - 1e-9)));
                hi[a] = std::min(m, static_cast<int>(std::floor((p_.points[i][a] + r) / step + 1e-9)));
            }
            std::array<int, 4> c = lo;
            for (;;) {
                std::uint64_t key = 0;
                for (int a = 0; a < n; ++a)
                    key |= static_cast<std::uint64_t>(c[a]) << (16 * a);
                if (seen.insert(key).second)
                    out.push_back(c);
                int a = 0;
                while (a < n && ++c[a] > hi[a]) {
                    c[a] = lo[a];
                    ++a;
                }
                if (a == n)
                    break;
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    void bucket(double r)
    {
        r_ = r;
        buckets_.clear();
        for (std::size_t i = 0; i < p_.size(); ++i)
            if (alive_[i])
                buckets_[bucket_key(p_.points[i])].push_back(i);
    }

    std::array<double, 4> position(const std::array<int, 4>& c) const
    {
        std::array<double, 4> x{};
        for (int a = 0; a < p_.dim; ++a)
            x[a] = c[a] * 0.5 * r_;
        return x;
    }

    // alive point indices inside the closed ball
    std::vector<std::size_t> members(const std::array<double, 4>& x) const
    {
        const int n = p_.dim;
        std::vector<std::size_t> out;
        std::array<std::int64_t, 4> b{};
        for (int a = 0; a < n; ++a)
            b[a] = static_cast<std::int64_t>(std::floor(x[a] / r_));
        std::array<int, 4> o{};
        o.fill(-1);
        for (;;) {
            std::uint64_t key = 0;
            bool ok = true;
            for (int a = 0; a < n; ++a) {
                std::int64_t v = b[a] + o[a];
                ok = ok && v >= 0;
                key |= static_cast<std::uint64_t>(std::max<std::int64_t>(v, 0)) << (16 * a);
            }
            if (ok) {
                auto it = buckets_.find(key);
                if (it != buckets_.end())
                    for (std::size_t i : it->second) {
                        if (!alive_[i])
                            continue;
                        double d2 = 0;
                        for (int a = 0; a < n; ++a)
                            d2 += (p_.points[i][a] - x[a]) * (p_.points[i][a] - x[a]);
                        if (d2 <= r_ * r_ * (1.0 + 1e-12))
                            out.push_back(i);
                    }
            }
            int a = 0;
            while (a < n && ++o[a] > 1) {
                o[a] = -1;
                ++a;
            }
            if (a == n)
                break;
        }
        return out;
    }

    std::size_t distinct_cells(const std::vector<std::size_t>& idx) const
    {
        std::vector<std::uint64_t> k;
        k.reserve(idx.size());
        for (std::size_t i : idx)
            k.push_back(keys_[i]);
        std::sort(k.begin(), k.end());
        return static_cast<std::size_t>(std::unique(k.begin(), k.end()) - k.begin());
    }

    std::size_t alive_cells() const
    {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < p_.size(); ++i)
            if (alive_[i])
                idx.push_back(i);
        return distinct_cells(idx);
    }

private:
    std::uint64_t bucket_key(const std::array<double, 4>& q) const
    {
        std::uint64_t key = 0;
        for (int a = 0; a < p_.dim; ++a)
            key |= static_cast<std::uint64_t>(std::floor(q[a] / r_)) << (16 * a);
        return key;
    }

    const ParamPointSet& p_;
    int bits_;
    std::vector<std::uint64_t> keys_;
    std::vector<char> alive_;
    double r_ = 1.0;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets_;
};

inline double nonconcentration_bound(Concentration mode, double r, double delta, double s, std::size_t total)
{
    return mode == Concentration::KatzTao ? std::pow(r / delta, s) : std::pow(r, s) * static_cast<double>(total);
}

} // namespace detail

// Smallest C with E_delta(A cap B(x, r)) <= C (r/delta)^s (Katz-Tao) or
// <= C r^s E_delta(A) (Frostman) over dyadic r in [delta, 1] and x on the
// r/2-net of [0,1]^n.
inline NonconcentrationResult nonconcentration_error(const ParamPointSet& p, double s, Concentration mode)
{
    if (p.empty())
        throw std::invalid_argument("empty point set");
    if (!(s > 0.0 && s <= p.dim))
        throw std::invalid_argument("s must lie in (0, n]");
    detail::BallScanner scan(p);
    const std::size_t total = scan.alive_cells();
    NonconcentrationResult best;
    for (double r : scan.radii()) {
        scan.bucket(r);
        double bound = detail::nonconcentration_bound(mode, r, p.delta, s, total);
        for (const auto& c : scan.centers(r)) {
            auto x = scan.position(c);
            std::size_t n = scan.distinct_cells(scan.members(x));
            double C = static_cast<double>(n) / bound;
            if (C > best.C)
                best = {C, r, x, n};
        }
    }
    return best;
}

// Katz-Tao pruning

struct PruneResult {
    ParamPointSet set;
    std::size_t input_cells = 0, output_cells = 0;
    double frostman_C = 0.0;
    double retained_floor = 0.0;
    double katz_tao_C = 0.0;
    bool retained_ok() const { return static_cast<double>(output_cells) >= retained_floor; }
    json to_json() const
    {
        return {{"input_cells", input_cells},   {"output_cells", output_cells}, {"frostman_C", frostman_C},
                {"retained_floor", retained_floor}, {"katz_tao_C", katz_tao_C},   {"retained_ok", retained_ok()}};
    }
};

// Small balls first, most violating ball first within a radius: thin each
// violating ball to an evenly spread subset of its cells.
inline PruneResult katz_tao_prune(const ParamPointSet& p, double s, double C = 100.0)
{
    if (p.empty())
        throw std::invalid_argument("empty point set");
    PruneResult out;
    out.frostman_C = nonconcentration_error(p, s, Concentration::Frostman).C;
    detail::BallScanner scan(p);
    out.input_cells = scan.alive_cells();
    auto& alive = scan.alive();
    const auto& keys = scan.keys();
    for (double r : scan.radii()) {
        scan.bucket(r);
        const double limit = C * std::pow(r / p.delta, s);
        std::vector<std::pair<std::size_t, std::array<int, 4>>> balls;
        for (const auto& c : scan.centers(r)) {
            std::size_t n = scan.distinct_cells(scan.members(scan.position(c)));
            if (static_cast<double>(n) > limit)
                balls.push_back({n, c});
        }
        std::stable_sort(balls.begin(), balls.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (const auto& [n0, c] : balls) {
            auto idx = scan.members(scan.position(c));
            std::vector<std::uint64_t> cells;
            for (std::size_t i : idx)
                cells.push_back(keys[i]);
            std::sort(cells.begin(), cells.end());
            cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
            if (static_cast<double>(cells.size()) <= limit)
                continue;
            auto keep_n = static_cast<std::size_t>(std::floor(limit));
            std::unordered_set<std::uint64_t> keep;
            for (std::size_t i = 0; i < keep_n; ++i)
                keep.insert(cells[i * cells.size() / keep_n]);
            for (std::size_t i : idx)
                if (!keep.count(keys[i]))
                    alive[i] = 0;
        }
    }
    out.set = ParamPointSet{p.dim, p.delta, {}};
    for (std::size_t i = 0; i < p.size(); ++i)
        if (alive[i])
            out.set.points.push_back(p.points[i]);
    out.output_cells = covering_number(out.set);
    const double L = static_cast<double>(p.bits());
    out.retained_floor = std::pow(p.delta, -s) / (L * out.frostman_C * 8.0);
    out.katz_tao_C = nonconcentration_error(out.set, s, Concentration::KatzTao).C;
    return out;
}

// Uniform refinement

struct UniformResult {
    ParamPointSet set;
    int step_bits = 0;  // ceil(1/eta)
    int levels = 0;     // T
    double delta_used = 0.0;
    bool snapped = false;
    std::vector<std::size_t> branching; // children kept per cell, coarse to fine
    std::size_t input_cells = 0, output_cells = 0;

    double retained_fraction() const
    {
        return input_cells ? static_cast<double>(output_cells) / static_cast<double>(input_cells) : 0.0;
    }
    double retained_floor() const { return std::pow(2.0 * levels, -static_cast<double>(step_bits)); }

    json to_json() const
    {
        return {{"step_bits", step_bits},        {"levels", levels},
                {"delta_used", delta_used},      {"snapped", snapped},
                {"branching", branching},        {"input_cells", input_cells},
                {"output_cells", output_cells},  {"retained_fraction", retained_fraction()},
                {"retained_floor", retained_floor()}};
    }
};

// max over ladder scales 2^{-i L} of (largest / smallest) delta-count among
// occupied dyadic cells
inline double uniformity_ratio(const ParamPointSet& p, int step_bits)
{
    detail::check_points(p);
    const int m = p.bits();
    std::vector<std::uint64_t> keys;
    for (const auto& q : p.points)
        keys.push_back(detail::cell_key(q, p.dim, m));
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    double worst = 1.0;
    for (int b = 0; b <= m; b += step_bits) {
        std::unordered_map<std::uint64_t, std::size_t> cnt;
        for (auto k : keys)
            ++cnt[detail::coarsen_key(k, p.dim, m - b)];
        std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
        for (const auto& [k, c] : cnt) {
            lo = std::min(lo, c);
            hi = std::max(hi, c);
        }
        worst = std::max(worst, static_cast<double>(hi) / static_cast<double>(lo));
    }
    return worst;
}

// Bottom-up over the ladder: at each level keep the parents whose child
// count lies in the dyadic band carrying the most mass and trim each to the
// band's lower end, so every surviving cell has the same delta-count.
inline UniformResult uniform_refine(const ParamPointSet& p, double eta)
{
    if (!(eta > 0.0 && eta <= 1.0))
        throw std::invalid_argument("eta must lie in (0, 1]");
    if (p.empty())
        throw std::invalid_argument("empty point set");
    detail::check_points(p);
    UniformResult out;
    out.step_bits = static_cast<int>(std::ceil(1.0 / eta - 1e-12));
    const int L = out.step_bits;
    const int m0 = p.bits();
    out.levels = (m0 + L - 1) / L;
    const int m = out.levels * L;
    if (m > 16)
        throw std::invalid_argument("snapped scale finer than 2^-16");
    out.snapped = m != m0;
    out.delta_used = std::ldexp(1.0, -m);
    out.input_cells = covering_number(p);

    std::vector<std::uint64_t> keys;
    for (const auto& q : p.points)
        keys.push_back(detail::cell_key(q, p.dim, m));
    std::vector<std::uint64_t> alive = keys;
    std::sort(alive.begin(), alive.end());
    alive.erase(std::unique(alive.begin(), alive.end()), alive.end());

    // cells[i]: surviving cells at level i (scale 2^{-iL}); cells[T] = delta cells
    std::vector<std::vector<std::uint64_t>> cells(out.levels + 1);
    cells[out.levels] = alive;
    out.branching.assign(out.levels, 0);
    for (int lvl = out.levels - 1; lvl >= 0; --lvl) {
        int shift = L;
        std::map<std::uint64_t, std::vector<std::uint64_t>> kids;
        for (auto c : cells[lvl + 1])
            kids[detail::coarsen_key(c, p.dim, shift)].push_back(c);
        std::map<int, std::size_t> band_parents;
        for (const auto& [q, ch] : kids)
            ++band_parents[static_cast<int>(std::bit_width(ch.size())) - 1];
        int band = 0;
        double best = -1.0;
        for (const auto& [j, n] : band_parents) {
            double mass = static_cast<double>(n) * std::ldexp(1.0, j);
            if (mass > best) {
                best = mass;
                band = j;
            }
        }
        const std::size_t keep = std::size_t{1} << band;
        out.branching[lvl] = keep;
        std::vector<std::uint64_t> next;
        for (const auto& [q, ch] : kids) {
            if (static_cast<int>(std::bit_width(ch.size())) - 1 != band)
                continue;
            cells[lvl].push_back(q);
            for (std::size_t i = 0; i < keep; ++i)
                next.push_back(ch[i]);
        }
        std::sort(next.begin(), next.end());
        cells[lvl + 1] = std::move(next);
    }
    // propagate the trimming down to delta cells
    for (int lvl = 1; lvl <= out.levels; ++lvl) {
        std::unordered_set<std::uint64_t> parents(cells[lvl - 1].begin(), cells[lvl - 1].end());
        std::vector<std::uint64_t> kept;
        for (auto c : cells[lvl])
            if (parents.count(detail::coarsen_key(c, p.dim, L)))
                kept.push_back(c);
        cells[lvl] = std::move(kept);
    }
    std::unordered_set<std::uint64_t> final_cells(cells[out.levels].begin(), cells[out.levels].end());
    out.set = ParamPointSet{p.dim, out.delta_used, {}};
    for (std::size_t i = 0; i < p.size(); ++i)
        if (final_cells.count(keys[i]))
            out.set.points.push_back(p.points[i]);
    out.output_cells = covering_number(out.set);
    return out;
}

// Spacing scan

struct SpacingRow {
    double rho = 0.0;
    double worst_C = 0.0; // max over occupied rho-cells of the rescaled Frostman constant
    std::size_t cubes = 0;
};

struct SpacingResult {
    double rho = 0.0;
    double C = 0.0;
    double bound = 0.0; // (delta/rho)^{-4 n eps}
    bool holds = false;
    std::vector<SpacingRow> table;
    json to_json() const
    {
        json t = json::array();
        for (const auto& r : table)
            t.push_back({{"rho", r.rho}, {"worst_C", r.worst_C}, {"cubes", r.cubes}});
        return {{"rho", rho}, {"C", C}, {"bound", bound}, {"holds", holds}, {"table", t}};
    }
};

// For each dyadic rho in (delta^{1-eps}, 1/2] rescale every occupied
// rho-cell to the unit cube and measure its Frostman constant at scale
// delta/rho; return the rho with the smallest worst case.
inline SpacingResult spacing_scan(const ParamPointSet& p, double s, double eps)
{
    if (p.empty())
        throw std::invalid_argument("empty point set");
    detail::check_points(p);
    const int m = p.bits();
    SpacingResult out;
    out.C = std::numeric_limits<double>::infinity();
    for (int b = 0; b < m; ++b) {
        double rho = std::ldexp(1.0, -b);
        if (!(rho > std::pow(p.delta, 1.0 - eps)))
            continue;
        std::map<std::uint64_t, ParamPointSet> sub;
        for (const auto& q : p.points) {
            std::uint64_t key = detail::cell_key(q, p.dim, b);
            auto& s2 = sub.try_emplace(key, ParamPointSet{p.dim, p.delta / rho, {}}).first->second;
            std::array<double, 4> r{};
            for (int a = 0; a < p.dim; ++a) {
                double corner = static_cast<double>((key >> (16 * a)) & 0xffff) * rho;
                r[a] = std::clamp((q[a] - corner) / rho, 0.0, 1.0);
            }
            s2.points.push_back(r);
        }
        SpacingRow row{rho, 0.0, sub.size()};
        for (const auto& [k, s2] : sub)
            row.worst_C = std::max(row.worst_C, nonconcentration_error(s2, s, Concentration::Frostman).C);
        out.table.push_back(row);
        if (row.worst_C < out.C) {
            out.C = row.worst_C;
            out.rho = rho;
        }
    }
    if (out.table.empty())
        throw std::invalid_argument("no admissible rho");
    out.bound = std::pow(p.delta / out.rho, -4.0 * p.dim * eps);
    out.holds = out.C <= out.bound;
    return out;
}

// Projection experiment

struct ProjectionChain {
    int k = 0;
    std::size_t sum_cells = 0;   // sum over T of |pi_f(Y(T))|
    std::size_t union_cells = 0; // |union pi_f(Y(T))|
    double lp_shadings = 0.0;    // ||sum chi_{pi_f(Y(T))}||_{3/2}
    double lp_tubes = 0.0;       // ||sum chi_{pi_f(T)}||_{3/2}
    double lp_curves = 0.0;      // ||sum chi_{g^{2 delta}}||_{3/2}
    std::size_t compatible = 0;  // tubes with pi_f(T) inside the dilated curve
    std::size_t tubes = 0;
    std::size_t skipped = 0;     // tubes not of the form T_{a,b,c,d} with parameters in [-1,1]

    double cell_area() const { return std::ldexp(1.0, -2 * k); }
    double sum_area() const { return static_cast<double>(sum_cells) * cell_area(); }
    double union_area() const { return static_cast<double>(union_cells) * cell_area(); }

    // sum |pi_f Y| <= |U|^{1/3} ||.||_{3/2} <= with tubes <= with curves
    bool holds() const
    {
        long double rhs = std::cbrt(static_cast<long double>(union_area())) * lp_shadings;
        rhs = std::nextafter(rhs, std::numeric_limits<long double>::infinity());
        return sum_area() <= rhs && lp_shadings <= lp_tubes && (compatible < tubes || lp_tubes <= lp_curves);
    }

    json to_json() const
    {
        return {{"k", k},
                {"sum_area", sum_area()},
                {"union_area", union_area()},
                {"lp_shadings", lp_shadings},
                {"lp_tubes", lp_tubes},
                {"lp_curves", lp_curves},
                {"compatible", compatible},
                {"tubes", tubes},
                {"skipped", skipped},
                {"holds", holds()},
                {"note", "p = 3/2; curves are g^{2 delta} dilated by one cell"}};
    }
};

// one-cell Chebyshev dilation of a 2D set
inline Voxels2 dilate_one(const Voxels2& v) { return dilate_cells(v, 1); }

// pi_f(T) inside the one-cell dilation of the 2 delta-neighbourhood of its curve
inline bool projection_compatible(const Tube& t, const SlopeFunction& f, int k, bool test_mode = false)
{
    auto lp = line_params(t);
    if (!lp)
        return false;
    CellList proj = twisted_project_cells(rasterize_cells(Solid{t}, k), k, f, test_mode);
    Voxels2 g = dilate_one(rasterize_cinematic(lp->a, lp->b, lp->d, f, 2.0 * t.radius, k, lp->c));
    for (auto c : proj)
        if (!g.get_flat(c))
            return false;
    return true;
}

inline ProjectionChain projection_experiment(const ShadedFamily& fam, const SlopeFunction& f, bool test_mode = false)
{
    validate(fam);
    check_admissible(f, test_mode);
    ProjectionChain out;
    out.k = fam.k;
    std::vector<CellList> shadings, tubes;
    std::vector<Voxels2> curves;
    Voxels2 uni(fam.k);
    for (std::size_t i = 0; i < fam.size(); ++i) {
        const auto* t = std::get_if<Tube>(&fam.solids[i]);
        if (!t)
            throw std::invalid_argument("projection needs tubes");
        auto lp = line_params(*t);
        if (!lp || std::abs(lp->a) > 1 || std::abs(lp->b) > 1 || std::abs(lp->c) > 1 || std::abs(lp->d) > 1) {
            ++out.skipped;
            continue;
        }
        ++out.tubes;
        CellList ys = twisted_project_cells(fam.shadings[i], fam.k, f, test_mode);
        CellList ts = twisted_project_cells(rasterize_cells(fam.solids[i], fam.k), fam.k, f, test_mode);
        Voxels2 g = dilate_one(rasterize_cinematic(lp->a, lp->b, lp->d, f, 2.0 * t->radius, fam.k, lp->c));
        bool ok = true;
        for (auto c : ts)
            ok = ok && g.get_flat(c);
        out.compatible += ok;
        out.sum_cells += ys.size();
        for (auto c : ys)
            uni.set_flat(c);
        shadings.push_back(std::move(ys));
        tubes.push_back(std::move(ts));
        curves.push_back(std::move(g));
    }
    out.union_cells = uni.count();
    out.lp_shadings = lp_counting_norm(shadings, fam.k, 1.5);
    out.lp_tubes = lp_counting_norm(tubes, fam.k, 1.5);
    out.lp_curves = lp_counting_norm(curves, 1.5);
    return out;
}

// Parameters of a tube family mapped from [-1,1]^4 into [0,1]^4.
inline ParamPointSet param_points(const std::vector<Tube>& tubes, double delta)
{
    ParamPointSet p{4, delta, {}};
    for (const auto& t : tubes) {
        auto lp = line_params(t);
        if (!lp || std::abs(lp->a) > 1 || std::abs(lp->b) > 1 || std::abs(lp->c) > 1 || std::abs(lp->d) > 1)
            continue;
        p.points.push_back({(lp->a + 1) / 2, (lp->b + 1) / 2, (lp->c + 1) / 2, (lp->d + 1) / 2});
    }
    return p;
}

} // namespace kakeya
