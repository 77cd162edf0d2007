#pragma once

#include "geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace kakeya {

enum class Axiom { Wolff, ConvexWolff, TubeWolff, Frostman, EveryScale, SelfSimilar };

inline const char* axiom_name(Axiom a)
{
    switch (a) {
    case Axiom::Wolff: return "wolff";
    case Axiom::ConvexWolff: return "convex-wolff";
    case Axiom::TubeWolff: return "tube-wolff";
    case Axiom::Frostman: return "frostman";
    case Axiom::EveryScale: return "every-scale";
    case Axiom::SelfSimilar: return "self-similar";
    }
    return "unknown";
}

struct AxiomReport {
    Axiom axiom = Axiom::ConvexWolff;
    double sigma = 0.0;
    double error_constant = 0.0;
    std::optional<ConvexWitness> witness;
    std::size_t witness_count = 0;
    double witness_scale = 0.0;
    double pass_threshold = 0.0;
    bool passed = false;
    json details = json::object();

    json to_json() const
    {
        json j{{"axiom", axiom_name(axiom)},
               {"error_constant", error_constant},
               {"pass_threshold", pass_threshold},
               {"passed", passed},
               {"witness_count", witness_count},
               {"details", details}};
        if (axiom == Axiom::Frostman || axiom == Axiom::SelfSimilar)
            j["sigma"] = sigma;
        if (witness)
            j["witness"] = kakeya::to_json(*witness);
        if (witness_scale > 0.0)
            j["witness_scale"] = witness_scale;
        return j;
    }
};

inline std::size_t count_inside(const std::vector<Solid>& f, const Shape& w)
{
    std::size_t c = 0;
    for (const auto& s : f)
        c += contained_in(s, w);
    return c;
}

// #{S in f : S inside W} / (|W| #f)
inline double cwa_ratio(const std::vector<Solid>& f, const ConvexWitness& w)
{
    return static_cast<double>(count_inside(f, w.shape)) / (w.volume * static_cast<double>(f.size()));
}

// Witness catalog

struct CatalogOptions {
    bool prisms = true;
    bool tubes = true;
    bool self = true;
    // total roll-sweep evaluations before anchors are subsampled
    double budget = 4e7;
    std::optional<double> fixed_s;
    double t_max = 2.0;
    double rho_max = 0.5;
};

struct CatalogStats {
    std::vector<double> t_levels;
    std::vector<std::size_t> strides;
    std::size_t sweeps = 0;
    json to_json() const
    {
        json j = json::array();
        for (std::size_t i = 0; i < t_levels.size(); ++i)
            j.push_back({{"t", t_levels[i]}, {"anchor_stride", strides[i]}});
        return {{"levels", j}, {"sweeps", sweeps}};
    }
};

namespace detail {

struct Member {
    std::vector<Vec3> pts;
    double margin = 0.0;
    Vec3 c = Vec3::Zero();
    Mat3 frame = Mat3::Identity();
    double thick = 0.0;
    double half_len = 0.0;
    bool tube = true;
    Vec3 half = Vec3::Zero();
    double volume = 0.0;
};

inline Member make_member(const Solid& s)
{
    Member m;
    Footprint fp = footprint(s);
    m.pts = fp.points;
    m.margin = fp.margin;
    m.volume = solid_volume(s);
    if (const auto* t = std::get_if<Tube>(&s)) {
        m.c = t->anchor;
        m.frame = frame_from_axis(t->dir);
        m.thick = t->radius;
        m.half_len = 0.5 * t->length;
        m.tube = true;
    } else {
        const auto& p = std::get<Prism>(s);
        m.c = p.center;
        m.frame = p.frame;
        m.thick = p.half.x();
        m.half_len = p.half.z();
        m.half = p.half;
        m.tube = false;
    }
    return m;
}

struct Candidate {
    std::uint32_t idx;
    double margin;
    double rmax;
    std::uint8_t npts;
    std::array<Vec3, 8> q; // anchor-frame coordinates
};

struct Arc {
    double lo, hi;
};

// Roll angles phi in [0, pi) for which a point q (anchor-frame x, y) with the
// given margin lies inside the rectangle |x'| <= a, |y'| <= b rotated by phi.
// Returns false if no angle works; all = true if every angle works.
inline bool point_arcs(double x, double y, double a, double b, std::vector<Arc>& out, bool& all)
{
    out.clear();
    all = false;
    if (a < 0.0 || b < 0.0)
        return false;
    double r = std::hypot(x, y);
    if (r <= a && r <= b) {
        all = true;
        return true;
    }
    if (r * r > a * a + b * b + 1e-18)
        return false;
    const double pi = kPi;
    double alpha = std::atan2(y, x);
    // allowed psi = alpha - phi (mod pi)
    std::vector<Arc> psi;
    if (r <= b) {
        double aa = std::acos(std::clamp(a / r, -1.0, 1.0));
        psi.push_back({aa, pi - aa});
    } else if (r <= a) {
        double bb = std::asin(std::clamp(b / r, -1.0, 1.0));
        psi.push_back({-bb, bb});
    } else {
        double aa = std::acos(std::clamp(a / r, -1.0, 1.0));
        double bb = std::asin(std::clamp(b / r, -1.0, 1.0));
        if (aa > bb + 1e-15)
            return false;
        psi.push_back({aa, bb});
        psi.push_back({pi - bb, pi - aa});
    }
    for (const auto& p : psi) {
        double lo = alpha - p.hi, hi = alpha - p.lo;
        double shift = std::floor(lo / pi) * pi;
        lo -= shift;
        hi -= shift;
        if (hi <= pi) {
            out.push_back({lo, hi});
        } else {
            out.push_back({lo, pi});
            out.push_back({0.0, std::min(hi - pi, pi)});
        }
    }
    return true;
}

inline void intersect_arcs(const std::vector<Arc>& a, const std::vector<Arc>& b, std::vector<Arc>& out)
{
    out.clear();
    for (const auto& x : a)
        for (const auto& y : b) {
            double lo = std::max(x.lo, y.lo), hi = std::min(x.hi, y.hi);
            if (lo <= hi)
                out.push_back({lo, hi});
        }
}

struct SweepResult {
    std::size_t count = 0;
    double phi = 0.0;
};

class RollSweep {
public:
    // Best roll for an s x t x 2 prism on the anchor axis over the candidates.
    SweepResult run(const std::vector<Candidate>& cands, double s, double t)
    {
        events_.clear();
        std::size_t base = 0;
        for (const auto& c : cands) {
            double a = 0.5 * s - c.margin + kTol, b = 0.5 * t - c.margin + kTol;
            if (a < 0.0)
                continue;
            if (c.rmax * c.rmax > a * a + b * b)
                continue;
            cur_.assign(1, Arc{0.0, kPi});
            bool full = true, ok = true;
            for (int p = 0; p < c.npts && ok; ++p) {
                bool all = false;
                if (!point_arcs(c.q[p].x(), c.q[p].y(), a, b, parc_, all)) {
                    ok = false;
                    break;
                }
                if (all)
                    continue;
                full = false;
                intersect_arcs(cur_, parc_, tmp_);
                cur_.swap(tmp_);
                ok = !cur_.empty();
            }
            if (!ok)
                continue;
            if (full) {
                ++base;
                continue;
            }
            for (const auto& arc : cur_) {
                events_.push_back({arc.lo, 1});
                events_.push_back({arc.hi, -1});
            }
        }
        std::sort(events_.begin(), events_.end(), [](const auto& x, const auto& y) {
            return x.first < y.first || (x.first == y.first && x.second > y.second);
        });
        SweepResult best{base, 0.0};
        bool robust = false;
        long cur = static_cast<long>(base);
        std::size_t i = 0;
        while (i < events_.size()) {
            double x = events_[i].first;
            while (i < events_.size() && events_[i].first == x && events_[i].second > 0) {
                ++cur;
                ++i;
            }
            if (static_cast<std::size_t>(cur) > best.count) {
                best = {static_cast<std::size_t>(cur), x};
                robust = false;
            }
            while (i < events_.size() && events_[i].first == x && events_[i].second < 0) {
                --cur;
                ++i;
            }
            double next = i < events_.size() ? events_[i].first : kPi;
            if (next > x) {
                auto c = static_cast<std::size_t>(cur);
                if (c > best.count || (c == best.count && !robust && c > base)) {
                    best = {c, 0.5 * (x + next)};
                    robust = true;
                }
            }
        }
        return best;
    }

private:
    std::vector<std::pair<double, int>> events_;
    std::vector<Arc> cur_, parc_, tmp_;
};

inline Prism roll_prism(const Member& a, double s, double t, double phi, double long_side = 2.0)
{
    Vec3 e1 = a.frame.col(0), e2 = a.frame.col(1), w = a.frame.col(2);
    Mat3 f;
    f.col(0) = std::cos(phi) * e1 + std::sin(phi) * e2;
    f.col(1) = -std::sin(phi) * e1 + std::cos(phi) * e2;
    f.col(2) = w;
    return Prism{a.c, f, Vec3(0.5 * s, 0.5 * t, 0.5 * long_side)};
}

inline double capsule_volume(double r, double len)
{
    return kPi * r * r * len + 4.0 / 3.0 * kPi * r * r * r;
}

} // namespace detail

struct PrismHit {
    std::size_t anchor;
    double s, t, phi;
    std::size_t count;
};

struct TubeHit {
    std::size_t anchor;
    double rho;
    std::size_t count;
};

struct SelfHit {
    std::size_t anchor;
    std::size_t count;
};

// Anchored witness catalog around every member: coaxial rho-tubes
// (rho = thickness * 2^k <= rho_max), s x t x 2 prisms on the member axis
// (s, t = 2 * thickness * 2^k <= t_max, s <= t, every roll), and for prism
// members the member itself. Large t levels subsample anchors by a fixed
// stride so the roll sweeps stay within the budget.
template <class OnPrism, class OnTube, class OnSelf>
void scan_catalog(const std::vector<Solid>& f, const CatalogOptions& opt, OnPrism&& on_prism, OnTube&& on_tube,
                  OnSelf&& on_self, CatalogStats* stats = nullptr)
{
    using namespace detail;
    const std::size_t N = f.size();
    if (N == 0)
        return;
    std::vector<Member> mem;
    mem.reserve(N);
    double thin = std::numeric_limits<double>::max();
    for (const auto& s : f) {
        mem.push_back(make_member(s));
        thin = std::min(thin, mem.back().thick);
    }
    // t grid shared by every anchor so strides are per level
    std::vector<double> ts;
    for (double t = 2.0 * thin; t <= opt.t_max * (1.0 + 1e-12); t *= 2.0)
        ts.push_back(t);
    if (ts.empty())
        ts.push_back(opt.t_max);
    const std::size_t L = ts.size();

    auto s_levels = [&](const Member& a, double t) {
        std::vector<double> out;
        if (opt.fixed_s) {
            if (*opt.fixed_s <= t * (1.0 + 1e-12))
                out.push_back(*opt.fixed_s);
            return out;
        }
        for (double s = 2.0 * a.thick; s <= t * (1.0 + 1e-12); s *= 2.0)
            out.push_back(s);
        return out;
    };

    // candidates of anchor a whose points lie within radius R of its axis
    auto gather = [&](std::size_t ai, double R, std::vector<Candidate>& out) {
        out.clear();
        const Member& a = mem[ai];
        const Vec3 w = a.frame.col(2);
        const double sin_max = std::min(1.0, 2.0 * R);
        for (std::size_t j = 0; j < N; ++j) {
            const Member& b = mem[j];
            if (b.tube) {
                double dw = b.frame.col(2).dot(w);
                if (1.0 - dw * dw > sin_max * sin_max * (1.0 + 1e-9) + 1e-15 && b.half_len > 0.0 &&
                    2.0 * b.half_len >= 1.0 - 1e-12)
                    continue;
            }
            Candidate c;
            c.idx = static_cast<std::uint32_t>(j);
            c.margin = b.margin;
            c.npts = static_cast<std::uint8_t>(b.pts.size());
            c.rmax = 0.0;
            bool ok = true;
            for (std::size_t p = 0; p < b.pts.size(); ++p) {
                Vec3 q = a.frame.transpose() * (b.pts[p] - a.c);
                if (std::abs(q.z()) + b.margin > 1.0 + kTol) {
                    ok = false;
                    break;
                }
                double r = std::hypot(q.x(), q.y());
                if (r > R + kTol) {
                    ok = false;
                    break;
                }
                c.rmax = std::max(c.rmax, r);
                c.q[p] = q;
            }
            if (ok)
                out.push_back(c);
        }
    };

    auto radius_of = [](double t) { return t / std::sqrt(2.0); };

    // pilot run to size the strides
    std::vector<std::size_t> stride(L, 1);
    if (opt.prisms) {
        std::vector<double> avg(L, 0.0);
        std::size_t pilots = std::min<std::size_t>(N, 24);
        std::vector<Candidate> cand;
        for (std::size_t p = 0; p < pilots; ++p) {
            std::size_t ai = p * N / pilots;
            gather(ai, radius_of(ts.back()), cand);
            for (std::size_t l = L; l-- > 0;) {
                double R = radius_of(ts[l]);
                std::erase_if(cand, [&](const Candidate& c) { return c.rmax > R + kTol; });
                avg[l] += static_cast<double>(cand.size()) * static_cast<double>(std::max<std::size_t>(1, s_levels(mem[ai], ts[l]).size()));
            }
        }
        double per_level = opt.budget / static_cast<double>(L);
        for (std::size_t l = 0; l < L; ++l) {
            double work = avg[l] / static_cast<double>(pilots) * static_cast<double>(N);
            stride[l] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(work / per_level)));
        }
    }
    if (stats) {
        stats->t_levels = ts;
        stats->strides = stride;
    }

    RollSweep sweep;
    std::vector<Candidate> cand;
    for (std::size_t ai = 0; ai < N; ++ai) {
        const Member& a = mem[ai];
        // largest level this anchor takes part in
        long top = -1;
        for (std::size_t l = 0; l < L; ++l)
            if (opt.prisms && ai % stride[l] == 0)
                top = static_cast<long>(l);
        double R = top >= 0 ? radius_of(ts[top]) : 0.0;
        double rho_top = 0.0;
        if (opt.tubes)
            for (double rho = a.thick; rho <= opt.rho_max * (1.0 + 1e-12); rho *= 2.0)
                rho_top = rho;
        if (!a.tube && opt.self)
            R = std::max(R, std::hypot(a.half.x(), a.half.y()));
        R = std::max(R, rho_top);
        gather(ai, R, cand);

        if (opt.tubes) {
            for (double rho = a.thick; rho <= opt.rho_max * (1.0 + 1e-12); rho *= 2.0) {
                std::size_t cnt = 0;
                for (const auto& c : cand) {
                    if (c.rmax > rho + kTol)
                        continue;
                    bool in = true;
                    for (int p = 0; p < c.npts && in; ++p) {
                        const Vec3& q = c.q[p];
                        double over = std::max(0.0, std::abs(q.z()) - a.half_len);
                        double d = std::sqrt(q.x() * q.x() + q.y() * q.y() + over * over);
                        in = d + c.margin <= rho + kTol;
                    }
                    cnt += in;
                }
                on_tube(TubeHit{ai, rho, cnt});
            }
        }
        if (!a.tube && opt.self) {
            std::size_t cnt = 0;
            for (const auto& c : cand) {
                bool in = true;
                for (int p = 0; p < c.npts && in; ++p)
                    for (int d = 0; d < 3 && in; ++d)
                        in = std::abs(c.q[p][d]) + c.margin <= a.half[d] + kTol;
                cnt += in;
            }
            on_self(SelfHit{ai, cnt});
        }
        if (top < 0)
            continue;
        for (long l = top; l >= 0; --l) {
            double Rl = radius_of(ts[l]);
            std::erase_if(cand, [&](const Candidate& c) { return c.rmax > Rl + kTol; });
            if (ai % stride[l] != 0)
                continue;
            for (double s : s_levels(a, ts[l])) {
                SweepResult r = sweep.run(cand, s, ts[l]);
                if (stats)
                    stats->sweeps += cand.size();
                on_prism(PrismHit{ai, s, ts[l], r.phi, r.count});
            }
        }
    }
}

struct CatalogBest {
    double value = -1.0;
    ConvexWitness witness;
    std::size_t count = 0;
    std::string kind;
    double scale = 0.0;
};

// Max over the catalog of count / normalizer(witness); returns the witness
// re-evaluated directly against the family.
template <class PrismNorm, class TubeNorm>
CatalogBest catalog_max(const std::vector<Solid>& f, const CatalogOptions& opt, PrismNorm&& prism_norm,
                        TubeNorm&& tube_norm, CatalogStats* stats = nullptr, json* table = nullptr)
{
    using namespace detail;
    std::vector<Member> mem;
    for (const auto& s : f)
        mem.push_back(make_member(s));
    struct Best {
        double value = -1.0;
        int kind = -1;
        PrismHit p{};
        TubeHit t{};
        SelfHit self{};
    } best;
    std::map<std::string, double> level_max;
    auto bump = [&](const std::string& key, double v) {
        auto it = level_max.find(key);
        if (it == level_max.end() || v > it->second)
            level_max[key] = v;
    };
    scan_catalog(
        f, opt,
        [&](const PrismHit& h) {
            double v = static_cast<double>(h.count) / prism_norm(h.s, h.t);
            if (table)
                bump("prism s=" + std::to_string(h.s) + " t=" + std::to_string(h.t), v);
            if (v > best.value) {
                best.value = v;
                best.kind = 0;
                best.p = h;
            }
        },
        [&](const TubeHit& h) {
            double v = static_cast<double>(h.count) / tube_norm(h.rho, 2.0 * mem[h.anchor].half_len);
            if (table)
                bump("tube rho=" + std::to_string(h.rho), v);
            if (v > best.value) {
                best.value = v;
                best.kind = 1;
                best.t = h;
            }
        },
        [&](const SelfHit& h) {
            double v = static_cast<double>(h.count) / prism_norm(0.0, 0.0, mem[h.anchor].volume);
            if (table)
                bump("self", v);
            if (v > best.value) {
                best.value = v;
                best.kind = 2;
                best.self = h;
            }
        },
        stats);
    if (table) {
        *table = json::object();
        for (const auto& [k, v] : level_max)
            (*table)[k] = v;
    }
    CatalogBest out;
    if (best.kind < 0)
        return out;
    Shape w;
    if (best.kind == 0) {
        w = roll_prism(mem[best.p.anchor], best.p.s, best.p.t, best.p.phi);
        out.kind = "prism";
        out.scale = best.p.t;
    } else if (best.kind == 1) {
        const Member& a = mem[best.t.anchor];
        Tube t;
        t.anchor = a.c;
        t.dir = a.frame.col(2);
        t.radius = best.t.rho;
        t.length = 2.0 * a.half_len;
        t.scale = best.t.rho;
        w = t;
        out.kind = "tube";
        out.scale = best.t.rho;
    } else {
        w = std::get<Prism>(f[best.self.anchor]);
        out.kind = "self";
    }
    out.witness = make_witness(w);
    out.count = count_inside(f, w);
    if (best.kind == 0)
        out.value = static_cast<double>(out.count) / prism_norm(best.p.s, best.p.t);
    else if (best.kind == 1)
        out.value = static_cast<double>(out.count) / tube_norm(best.t.rho, std::get<Tube>(w).length);
    else
        out.value = static_cast<double>(out.count) / prism_norm(0.0, 0.0, out.witness.volume);
    return out;
}

inline AxiomReport wolff_type_report(const std::vector<Solid>& f, Axiom axiom, const CatalogOptions& opt,
                                     double threshold)
{
    if (f.empty())
        throw std::invalid_argument("empty family");
    const double N = static_cast<double>(f.size());
    CatalogStats stats;
    json table;
    CatalogBest b = catalog_max(
        f, opt,
        [&](double s, double t, double vol = 0.0) { return (vol > 0.0 ? vol : 2.0 * s * t) * N; },
        [&](double rho, double len) { return detail::capsule_volume(rho, len) * N; }, &stats, &table);
    AxiomReport r;
    r.axiom = axiom;
    r.error_constant = b.value;
    r.witness = b.witness;
    r.witness_count = b.count;
    r.witness_scale = b.scale;
    r.pass_threshold = threshold;
    r.passed = b.value <= threshold;
    r.details = {{"witness_kind", b.kind},
                 {"family_size", f.size()},
                 {"catalog", stats.to_json()},
                 {"per_level_max", table},
                 {"note", "catalog constant <= 8; witnesses anchored at members"}};
    return r;
}

inline AxiomReport convex_wolff_error(const std::vector<Solid>& f, double threshold = 100.0,
                                      CatalogOptions opt = {})
{
    return wolff_type_report(f, Axiom::ConvexWolff, opt, threshold);
}

inline AxiomReport tube_wolff_error(const std::vector<Solid>& f, double threshold = 100.0, CatalogOptions opt = {})
{
    opt.prisms = false;
    return wolff_type_report(f, Axiom::TubeWolff, opt, threshold);
}

// Pairs of tubes that fail essential distinctness; directions are bucketed so
// only nearly parallel pairs are compared.
inline std::optional<std::pair<std::size_t, std::size_t>> find_non_distinct(const std::vector<Tube>& f)
{
    if (f.empty())
        return std::nullopt;
    double delta = f.front().scale;
    double h = std::max(8.0 * delta, 1e-6);
    auto key = [&](const Vec3& d) {
        return std::array<long, 3>{static_cast<long>(std::floor(d.x() / h)), static_cast<long>(std::floor(d.y() / h)),
                                   static_cast<long>(std::floor(d.z() / h))};
    };
    auto hash = [](const std::array<long, 3>& k) {
        return static_cast<std::size_t>((k[0] * 73856093L) ^ (k[1] * 19349663L) ^ (k[2] * 83492791L));
    };
    std::unordered_map<std::size_t, std::vector<std::size_t>> grid;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (!same_scale(f[i].scale, delta))
            throw std::invalid_argument("scale mismatch");
        grid[hash(key(f[i].dir))].push_back(i);
    }
    for (std::size_t i = 0; i < f.size(); ++i)
        for (int sgn = -1; sgn <= 1; sgn += 2) {
            auto k = key(sgn * f[i].dir);
            for (long dx = -1; dx <= 1; ++dx)
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dz = -1; dz <= 1; ++dz) {
                        auto it = grid.find(hash({k[0] + dx, k[1] + dy, k[2] + dz}));
                        if (it == grid.end())
                            continue;
                        for (std::size_t j : it->second)
                            if (j > i && !essentially_distinct(f[i], f[j]))
                                return std::make_pair(i, j);
                    }
        }
    return std::nullopt;
}

inline void require_distinct(const std::vector<Tube>& f)
{
    if (auto p = find_non_distinct(f))
        throw std::invalid_argument("tubes " + std::to_string(p->first) + " and " + std::to_string(p->second) +
                                    " are not essentially distinct");
}

// max over catalog rho-tubes (dyadic rho in [delta, 1]) of #f[T_rho] / (rho^sigma #f)
inline AxiomReport frostman_error(const std::vector<Tube>& f, double sigma, double threshold = 100.0,
                                  CatalogOptions opt = {})
{
    if (f.empty())
        throw std::invalid_argument("empty family");
    if (!(sigma > 0.0 && sigma <= 4.0))
        throw std::invalid_argument("sigma must lie in (0, 4]");
    require_distinct(f);
    std::vector<Solid> sf = to_solids(f);
    const double N = static_cast<double>(f.size());
    opt.prisms = false;
    opt.self = false;
    opt.rho_max = 0.5;
    json table = json::object();
    CatalogBest b = catalog_max(
        sf, opt, [&](double, double, double = 0.0) { return std::numeric_limits<double>::infinity(); },
        [&](double rho, double) { return std::pow(rho, sigma) * N; }, nullptr, &table);
    // rho = 1: direct count for a strided subset of anchors
    std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(N * N / opt.budget));
    double best1 = -1.0;
    std::size_t best1_anchor = 0, best1_count = 0;
    for (std::size_t i = 0; i < f.size(); i += stride) {
        Tube w = f[i];
        w.radius = 1.0;
        w.scale = 1.0;
        std::size_t c = count_inside(sf, w);
        if (static_cast<double>(c) / N > best1) {
            best1 = static_cast<double>(c) / N;
            best1_anchor = i;
            best1_count = c;
        }
    }
    table["tube rho=1.000000"] = best1;
    AxiomReport r;
    r.axiom = Axiom::Frostman;
    r.sigma = sigma;
    if (best1 > b.value) {
        Tube w = f[best1_anchor];
        w.radius = 1.0;
        w.scale = 1.0;
        r.error_constant = best1;
        r.witness = make_witness(w);
        r.witness_count = best1_count;
        r.witness_scale = 1.0;
    } else {
        r.error_constant = b.value;
        r.witness = b.witness;
        r.witness_count = b.count;
        r.witness_scale = b.scale;
    }
    r.pass_threshold = threshold;
    r.passed = r.error_constant <= threshold;
    r.details = {{"per_scale_max", table}, {"family_size", f.size()}, {"rho1_anchor_stride", stride}};
    return r;
}

// Classical Wolff: #{T inside T_rho} <= C (rho/delta)^2 over catalog rho-tubes.
inline AxiomReport wolff_error(const std::vector<Tube>& f, double threshold = 100.0, CatalogOptions opt = {})
{
    if (f.empty())
        throw std::invalid_argument("empty family");
    double delta = f.front().scale;
    std::vector<Solid> sf = to_solids(f);
    opt.prisms = false;
    opt.self = false;
    CatalogBest b = catalog_max(
        sf, opt, [&](double, double, double = 0.0) { return std::numeric_limits<double>::infinity(); },
        [&](double rho, double) { return (rho / delta) * (rho / delta); });
    AxiomReport r;
    r.axiom = Axiom::Wolff;
    r.error_constant = b.value;
    r.witness = b.witness;
    r.witness_count = b.count;
    r.witness_scale = b.scale;
    r.pass_threshold = threshold;
    r.passed = b.value <= threshold;
    return r;
}

// Covers

struct Cover {
    double rho = 0.0;
    std::vector<Tube> tubes;
    std::vector<int> assignment; // cover index per family tube, -1 if unclaimed
    std::vector<std::vector<std::size_t>> buckets;
    double K_uniformity = 0.0;
    std::size_t covered = 0;
    bool complete() const { return covered == assignment.size(); }
};

namespace detail {

inline bool parallel_enough(const Tube& a, const Vec3& d, double radius)
{
    double c = a.dir.dot(d);
    double s = std::min(1.0, 2.0 * radius / std::max(a.length, 1e-12));
    return 1.0 - c * c <= s * s * (1.0 + 1e-9) + 1e-15;
}

} // namespace detail

// Greedy partitioning cover by rho-tubes: each candidate is refit to the mean
// axis of the unclaimed tubes inside the 2-dilate of the coaxial rho-tube, and
// accepted only if its 2-dilate shares no member with an earlier 2-dilate.
inline Cover build_partitioning_cover(const std::vector<Tube>& f, double rho)
{
    if (f.empty())
        throw std::invalid_argument("empty family");
    double delta = f.front().scale;
    if (rho < delta * (1.0 - 1e-12))
        throw std::invalid_argument("rho below the tube scale");
    const std::size_t N = f.size();
    Cover cov;
    cov.rho = rho;
    cov.assignment.assign(N, -1);
    std::vector<int> owner2(N, -1);
    std::vector<char> tried(N, 0);
    std::vector<std::size_t> near;

    auto inside = [&](const Tube& s, const Tube& w) {
        return detail::parallel_enough(s, w.dir, w.radius) && contained_in(Solid{s}, w);
    };

    for (std::size_t i = 0; i < N; ++i) {
        if (cov.assignment[i] >= 0 || tried[i])
            continue;
        tried[i] = 1;
        const Tube& T = f[i];
        Tube a0 = T;
        a0.radius = rho;
        a0.scale = rho;
        Tube a0x2 = dilate(a0, 2.0);
        near.clear();
        for (std::size_t j = 0; j < N; ++j)
            if (cov.assignment[j] < 0 && inside(f[j], a0x2))
                near.push_back(j);
        Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
        for (std::size_t j : near) {
            double sg = f[j].dir.dot(T.dir) >= 0.0 ? 1.0 : -1.0;
            lo += f[j].end(-static_cast<int>(sg));
            hi += f[j].end(static_cast<int>(sg));
        }
        Tube a = a0;
        if (!near.empty()) {
            lo /= static_cast<double>(near.size());
            hi /= static_cast<double>(near.size());
            if ((hi - lo).norm() > 1e-12) {
                a.anchor = 0.5 * (lo + hi);
                a.dir = (hi - lo).normalized();
            }
            if (!inside(T, a))
                a = a0;
        }
        Tube ax2 = dilate(a, 2.0);
        bool clash = false;
        std::vector<std::size_t> b2;
        for (std::size_t j = 0; j < N && !clash; ++j)
            if (inside(f[j], ax2)) {
                if (owner2[j] >= 0)
                    clash = true;
                b2.push_back(j);
            }
        if (clash)
            continue;
        int id = static_cast<int>(cov.tubes.size());
        cov.tubes.push_back(a);
        cov.buckets.emplace_back();
        for (std::size_t j : b2) {
            owner2[j] = id;
            if (cov.assignment[j] < 0 && inside(f[j], a)) {
                cov.assignment[j] = id;
                cov.buckets.back().push_back(j);
                ++cov.covered;
            }
        }
    }
    std::size_t mx = 0, mn = std::numeric_limits<std::size_t>::max();
    for (const auto& b : cov.buckets) {
        mx = std::max(mx, b.size());
        mn = std::min(mn, b.size());
    }
    cov.K_uniformity = cov.buckets.empty() || mn == 0 ? std::numeric_limits<double>::infinity()
                                                      : static_cast<double>(mx) / static_cast<double>(mn);
    return cov;
}

// Checks the partitioning property directly: no family tube lies in the
// 2-dilates of two different cover tubes.
inline bool is_partitioning(const std::vector<Tube>& f, const Cover& c)
{
    for (const auto& t : f) {
        int owners = 0;
        for (const auto& a : c.tubes)
            owners += contained_in(Solid{t}, dilate(a, 2.0));
        if (owners > 1)
            return false;
    }
    return true;
}

struct CoverTree {
    std::vector<double> levels;                     // rho, coarse to fine; last is delta
    std::vector<std::vector<Tube>> nodes;           // per level
    std::vector<std::vector<int>> parent;           // per level, index into the previous level
    std::vector<std::vector<std::vector<std::size_t>>> leaves; // per level, per node: family indices

    json to_json() const
    {
        json j = json::array();
        for (std::size_t l = 0; l < levels.size(); ++l) {
            json sizes = json::array();
            for (const auto& b : leaves[l])
                sizes.push_back(b.size());
            j.push_back({{"rho", levels[l]}, {"nodes", nodes[l].size()}, {"bucket_sizes", sizes}});
        }
        return j;
    }
};

struct ScaleThresholds {
    double window = 64.0;
    double uniformity = 64.0;
    double rescaled_cwa = 64.0;
    static ScaleThresholds common(double C) { return {C, C, C}; }
};

inline std::vector<Solid> rescale_bucket(const std::vector<Tube>& f, const std::vector<std::size_t>& bucket,
                                         const Tube& cover_tube)
{
    AffineMap m = rescaling_map(cover_tube);
    std::vector<Solid> out;
    out.reserve(bucket.size());
    for (std::size_t i : bucket)
        out.push_back(transform(m, f[i]));
    return out;
}

struct EveryScaleResult {
    AxiomReport report;
    CoverTree tree;
    std::vector<Cover> covers; // chosen cover per level of the tree (coarse to fine)
    // per dyadic rho0: the chosen cover, or the first complete one in the window
    std::vector<Cover> size_covers;
};

inline EveryScaleResult check_every_scale_full(const std::vector<Tube>& f, ScaleThresholds th = {},
                                               CatalogOptions opt = {})
{
    if (f.empty())
        throw std::invalid_argument("empty family");
    require_distinct(f);
    const double delta = f.front().scale;
    const int kmax = static_cast<int>(std::lround(std::log2(1.0 / delta)));
    std::map<int, Cover> cache;
    std::map<int, double> cwa_cache;
    auto cover_at = [&](int j) -> const Cover& {
        auto it = cache.find(j);
        if (it == cache.end())
            it = cache.emplace(j, build_partitioning_cover(f, delta * std::ldexp(1.0, j))).first;
        return it->second;
    };
    struct Attempt {
        double rho;
        std::string reason;
        double value;
    };

    EveryScaleResult res;
    AxiomReport& r = res.report;
    r.axiom = Axiom::EveryScale;
    r.pass_threshold = th.rescaled_cwa;
    r.passed = true;
    json per_scale = json::array();
    std::map<int, bool> chosen;
    double worst_cwa = 0.0, worst_K = 1.0;
    int cwa_fail_j = -1;
    for (int j0 = 0; j0 <= kmax; ++j0) {
        double rho0 = delta * std::ldexp(1.0, j0);
        std::vector<Attempt> attempts;
        int ok_j = -1, complete_j = -1;
        for (int j = j0; j <= kmax && std::ldexp(1.0, j - j0) < th.window * (1.0 - 1e-12); ++j) {
            const Cover& c = cover_at(j);
            double rho = delta * std::ldexp(1.0, j);
            if (!c.complete()) {
                attempts.push_back({rho, "cover misses tubes", static_cast<double>(c.assignment.size() - c.covered)});
                continue;
            }
            if (complete_j < 0)
                complete_j = j;
            if (c.K_uniformity > th.uniformity) {
                attempts.push_back({rho, "non-uniform cover", c.K_uniformity});
                continue;
            }
            auto cw = cwa_cache.find(j);
            if (cw == cwa_cache.end()) {
                double worst = 0.0;
                for (std::size_t b = 0; b < c.tubes.size(); ++b) {
                    auto img = rescale_bucket(f, c.buckets[b], c.tubes[b]);
                    worst = std::max(worst, convex_wolff_error(img, th.rescaled_cwa, opt).error_constant);
                }
                cw = cwa_cache.emplace(j, worst).first;
            }
            if (cw->second > th.rescaled_cwa) {
                if (cwa_fail_j < 0)
                    cwa_fail_j = j;
                attempts.push_back({rho, "rescaled bucket violates CWA", cw->second});
                continue;
            }
            ok_j = j;
            worst_cwa = std::max(worst_cwa, cw->second);
            worst_K = std::max(worst_K, c.K_uniformity);
            break;
        }
        json entry{{"rho0", rho0}};
        int size_j = ok_j >= 0 ? ok_j : complete_j;
        if (size_j >= 0 && (res.size_covers.empty() || res.size_covers.back().rho != cover_at(size_j).rho))
            res.size_covers.push_back(cover_at(size_j));
        if (ok_j >= 0) {
            entry["rho"] = delta * std::ldexp(1.0, ok_j);
            chosen[ok_j] = true;
        } else {
            r.passed = false;
            json a = json::array();
            for (const auto& t : attempts)
                a.push_back({{"rho", t.rho}, {"reason", t.reason}, {"value", t.value}});
            entry["failed"] = a;
            if (r.witness_scale == 0.0)
                r.witness_scale = rho0;
        }
        per_scale.push_back(entry);
    }
    r.error_constant = worst_cwa;
    r.details = {{"per_scale", per_scale},
                 {"thresholds", {{"window", th.window}, {"uniformity", th.uniformity}, {"rescaled_cwa", th.rescaled_cwa}}},
                 {"worst_uniformity", worst_K}};
    if (!r.passed && cwa_fail_j >= 0) {
        const Cover& c = cover_at(cwa_fail_j);
        double worst = -1.0;
        for (std::size_t b = 0; b < c.tubes.size(); ++b) {
            auto img = rescale_bucket(f, c.buckets[b], c.tubes[b]);
            AxiomReport rb = convex_wolff_error(img, th.rescaled_cwa, opt);
            if (rb.error_constant > worst) {
                worst = rb.error_constant;
                r.witness = rb.witness;
                r.witness_count = rb.witness_count;
                r.details["witness_cover_rho"] = c.rho;
                r.details["witness_bucket"] = b;
                r.details["witness_frame"] = "unit rescaling of the bucket";
            }
        }
        r.error_constant = std::max(r.error_constant, worst);
    }

    // tree: chosen scales coarse to fine, then the family itself
    std::vector<int> js;
    for (const auto& [j, on] : chosen)
        js.push_back(j);
    std::sort(js.rbegin(), js.rend());
    std::vector<int> prev_assign;
    for (int j : js) {
        const Cover& c = cover_at(j);
        if (!c.complete())
            continue;
        res.tree.levels.push_back(delta * std::ldexp(1.0, j));
        res.tree.nodes.push_back(c.tubes);
        res.tree.leaves.push_back(c.buckets);
        std::vector<int> par(c.tubes.size(), -1);
        if (!prev_assign.empty())
            for (std::size_t b = 0; b < c.buckets.size(); ++b)
                if (!c.buckets[b].empty())
                    par[b] = prev_assign[c.buckets[b].front()];
        res.tree.parent.push_back(par);
        prev_assign = c.assignment;
        res.covers.push_back(c);
    }
    if (res.tree.levels.empty() || res.tree.levels.back() > delta * (1.0 + 1e-12)) {
        res.tree.levels.push_back(delta);
        res.tree.nodes.push_back(f);
        std::vector<std::vector<std::size_t>> singles(f.size());
        std::vector<int> par(f.size(), -1);
        for (std::size_t i = 0; i < f.size(); ++i) {
            singles[i] = {i};
            if (!prev_assign.empty())
                par[i] = prev_assign[i];
        }
        res.tree.leaves.push_back(singles);
        res.tree.parent.push_back(par);
    }
    return res;
}

inline std::pair<AxiomReport, CoverTree> check_every_scale(const std::vector<Tube>& f, double C,
                                                           CatalogOptions opt = {})
{
    auto r = check_every_scale_full(f, ScaleThresholds::common(C), opt);
    return {r.report, r.tree};
}

// Each node's leaves are the union of its children's leaves, and every level
// partitions the family.
inline bool tree_is_nested(const CoverTree& t, std::size_t family_size)
{
    for (std::size_t l = 0; l < t.levels.size(); ++l) {
        std::vector<int> seen(family_size, 0);
        for (const auto& b : t.leaves[l])
            for (auto i : b)
                ++seen[i];
        for (int s : seen)
            if (s != 1)
                return false;
        if (l == 0)
            continue;
        std::vector<int> owner(family_size, -1);
        for (std::size_t n = 0; n < t.leaves[l - 1].size(); ++n)
            for (auto i : t.leaves[l - 1][n])
                owner[i] = static_cast<int>(n);
        for (std::size_t n = 0; n < t.leaves[l].size(); ++n)
            for (auto i : t.leaves[l][n])
                if (owner[i] != t.parent[l][n])
                    return false;
    }
    return true;
}

inline AxiomReport check_self_similar(const std::vector<Tube>& f, double C, CatalogOptions opt = {})
{
    if (f.size() <= 1)
        throw std::invalid_argument("degenerate sigma");
    const double delta = f.front().scale;
    const double sigma = std::log(static_cast<double>(f.size())) / std::log(1.0 / delta);
    EveryScaleResult es = check_every_scale_full(f, ScaleThresholds::common(C), opt);
    AxiomReport r = es.report;
    r.axiom = Axiom::SelfSimilar;
    r.sigma = sigma;
    json buckets = json::array();
    bool ok = true;
    double worst_ratio = 1.0;
    for (const auto& c : es.size_covers) {
        double target = std::pow(c.rho / delta, sigma);
        std::size_t mn = std::numeric_limits<std::size_t>::max(), mx = 0, imn = 0, imx = 0;
        for (std::size_t b = 0; b < c.buckets.size(); ++b) {
            std::size_t s = c.buckets[b].size();
            if (s < mn) {
                mn = s;
                imn = b;
            }
            if (s > mx) {
                mx = s;
                imx = b;
            }
        }
        bool lvl_ok = static_cast<double>(mn) >= target / C * (1.0 - 1e-12) &&
                      static_cast<double>(mx) <= target * C * (1.0 + 1e-12);
        worst_ratio = std::max({worst_ratio, target / std::max<double>(mn, 1.0), mx / target});
        json e{{"rho", c.rho}, {"target", target}, {"min_bucket", mn}, {"max_bucket", mx}, {"ok", lvl_ok}};
        if (!lvl_ok)
            e["witness_buckets"] = {imn, imx};
        buckets.push_back(e);
        ok = ok && lvl_ok;
    }
    r.details["bucket_sizes"] = buckets;
    r.details["sigma"] = sigma;
    r.details["worst_bucket_ratio"] = worst_ratio;
    r.passed = r.passed && ok;
    return r;
}

} // namespace kakeya
