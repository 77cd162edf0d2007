#pragma once

#include "geometry.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kakeya {

enum class RasterMode { Center, Touch };

inline int scale_exponent(double delta)
{
    if (!(delta > 0.0))
        throw std::invalid_argument("scale must be positive");
    int e = 0;
    double m = std::frexp(delta, &e);
    if (m != 0.5)
        throw std::invalid_argument("scale is not a power of 2");
    return 1 - e;
}

// Occupancy bits over the box prod_i [-ext_i, ext_i] at cell size 2^-k.
// Rows run along x and are padded to whole 64-bit words.
template <int D>
class VoxelSet {
    static_assert(D == 2 || D == 3);

public:
    using Ext = std::array<int, D>;

    VoxelSet() = default;

    explicit VoxelSet(int k, Ext ext = default_ext()) : k_(k), ext_(ext)
    {
        if (k < 2 || k > 12)
            throw std::invalid_argument("scale exponent must lie in [2, 12]");
        for (int i = 0; i < 3; ++i)
            n_[i] = 1;
        for (int i = 0; i < D; ++i) {
            if (ext[i] < 1)
                throw std::invalid_argument("extent must be positive");
            n_[i] = 2 * ext[i] << k;
        }
        wpr_ = (n_[0] + 63) / 64;
        bits_.assign(static_cast<std::size_t>(wpr_) * n_[1] * n_[2], 0);
    }

    static VoxelSet with_scale(double delta, Ext ext = default_ext())
    {
        return VoxelSet(scale_exponent(delta), ext);
    }

    static Ext default_ext()
    {
        Ext e;
        e.fill(1);
        if constexpr (D == 2)
            e[0] = 4;
        return e;
    }

    int k() const { return k_; }
    double delta() const { return std::ldexp(1.0, -k_); }
    const Ext& ext() const { return ext_; }
    int n(int axis) const { return n_[axis]; }
    std::size_t cells() const { return static_cast<std::size_t>(n_[0]) * n_[1] * n_[2]; }
    int words_per_row() const { return wpr_; }
    std::size_t rows() const { return static_cast<std::size_t>(n_[1]) * n_[2]; }
    const std::vector<std::uint64_t>& words() const { return bits_; }
    std::vector<std::uint64_t>& words_mut()
    {
        dirty_ = true;
        return bits_;
    }
    std::uint64_t* row_ptr(std::size_t row) { return bits_.data() + row * wpr_; }
    const std::uint64_t* row_ptr(std::size_t row) const { return bits_.data() + row * wpr_; }

    bool same_shape(const VoxelSet& o) const { return k_ == o.k_ && ext_ == o.ext_; }

    std::size_t index(int i, int j, int l = 0) const
    {
        return (static_cast<std::size_t>(l) * n_[1] + j) * n_[0] + i;
    }

    bool in_range(int i, int j, int l = 0) const
    {
        return i >= 0 && j >= 0 && l >= 0 && i < n_[0] && j < n_[1] && l < n_[2];
    }

    bool get(int i, int j, int l = 0) const
    {
        std::size_t row = static_cast<std::size_t>(l) * n_[1] + j;
        return (row_ptr(row)[i >> 6] >> (i & 63)) & 1u;
    }

    void set(int i, int j, int l = 0, bool on = true)
    {
        std::size_t row = static_cast<std::size_t>(l) * n_[1] + j;
        std::uint64_t m = std::uint64_t{1} << (i & 63);
        if (on)
            row_ptr(row)[i >> 6] |= m;
        else
            row_ptr(row)[i >> 6] &= ~m;
        dirty_ = true;
    }

    bool get_flat(std::size_t idx) const
    {
        int i = static_cast<int>(idx % n_[0]);
        std::size_t row = idx / n_[0];
        return (row_ptr(row)[i >> 6] >> (i & 63)) & 1u;
    }

    void set_flat(std::size_t idx, bool on = true)
    {
        int i = static_cast<int>(idx % n_[0]);
        std::size_t row = idx / n_[0];
        std::uint64_t m = std::uint64_t{1} << (i & 63);
        if (on)
            row_ptr(row)[i >> 6] |= m;
        else
            row_ptr(row)[i >> 6] &= ~m;
        dirty_ = true;
    }

    std::array<int, 3> unflatten(std::size_t idx) const
    {
        int i = static_cast<int>(idx % n_[0]);
        std::size_t r = idx / n_[0];
        return {i, static_cast<int>(r % n_[1]), static_cast<int>(r / n_[1])};
    }

    double coord(int axis, int i) const { return -ext_[axis] + (i + 0.5) * delta(); }

    Vec3 center(int i, int j, int l = 0) const
    {
        if constexpr (D == 3)
            return Vec3(coord(0, i), coord(1, j), coord(2, l));
        else
            return Vec3(coord(0, i), coord(1, j), 0.0);
    }

    Vec3 center_flat(std::size_t idx) const
    {
        auto c = unflatten(idx);
        return center(c[0], c[1], c[2]);
    }

    // Index of the cell containing coordinate x along an axis (may be out of range).
    int cell_of(int axis, double x) const
    {
        return static_cast<int>(std::floor((x + ext_[axis]) / delta()));
    }

    void mark_dirty() { dirty_ = true; }

    std::size_t count() const
    {
        if (dirty_) {
            std::size_t c = 0;
            for (auto w : bits_)
                c += std::popcount(w);
            count_ = c;
            dirty_ = false;
        }
        return count_;
    }

    bool empty() const { return count() == 0; }
    double cell_volume() const { return std::pow(delta(), D); }
    double volume() const { return static_cast<double>(count()) * cell_volume(); }

    void fill()
    {
        for (std::size_t r = 0; r < rows(); ++r)
            set_row_range(r, 0, n_[0] - 1);
    }

    void clear()
    {
        std::fill(bits_.begin(), bits_.end(), 0);
        dirty_ = true;
    }

    // Sets bits [i0, i1] of a row.
    void set_row_range(std::size_t row, int i0, int i1)
    {
        i0 = std::max(i0, 0);
        i1 = std::min(i1, n_[0] - 1);
        if (i0 > i1)
            return;
        std::uint64_t* p = row_ptr(row);
        int w0 = i0 >> 6, w1 = i1 >> 6;
        std::uint64_t lo = ~std::uint64_t{0} << (i0 & 63);
        std::uint64_t hi = ~std::uint64_t{0} >> (63 - (i1 & 63));
        if (w0 == w1) {
            p[w0] |= lo & hi;
        } else {
            p[w0] |= lo;
            for (int w = w0 + 1; w < w1; ++w)
                p[w] = ~std::uint64_t{0};
            p[w1] |= hi;
        }
        dirty_ = true;
    }

    std::size_t count_row_range(std::size_t row, int i0, int i1) const
    {
        i0 = std::max(i0, 0);
        i1 = std::min(i1, n_[0] - 1);
        if (i0 > i1)
            return 0;
        const std::uint64_t* p = row_ptr(row);
        int w0 = i0 >> 6, w1 = i1 >> 6;
        std::uint64_t lo = ~std::uint64_t{0} << (i0 & 63);
        std::uint64_t hi = ~std::uint64_t{0} >> (63 - (i1 & 63));
        if (w0 == w1)
            return std::popcount(p[w0] & lo & hi);
        std::size_t c = std::popcount(p[w0] & lo) + std::popcount(p[w1] & hi);
        for (int w = w0 + 1; w < w1; ++w)
            c += std::popcount(p[w]);
        return c;
    }

    VoxelSet& operator|=(const VoxelSet& o)
    {
        check_shape(o);
        for (std::size_t i = 0; i < bits_.size(); ++i)
            bits_[i] |= o.bits_[i];
        dirty_ = true;
        return *this;
    }

    VoxelSet& operator&=(const VoxelSet& o)
    {
        check_shape(o);
        for (std::size_t i = 0; i < bits_.size(); ++i)
            bits_[i] &= o.bits_[i];
        dirty_ = true;
        return *this;
    }

    VoxelSet& subtract(const VoxelSet& o)
    {
        check_shape(o);
        for (std::size_t i = 0; i < bits_.size(); ++i)
            bits_[i] &= ~o.bits_[i];
        dirty_ = true;
        return *this;
    }

    friend VoxelSet operator|(VoxelSet a, const VoxelSet& b) { return a |= b; }
    friend VoxelSet operator&(VoxelSet a, const VoxelSet& b) { return a &= b; }

    bool operator==(const VoxelSet& o) const { return same_shape(o) && bits_ == o.bits_; }

    bool subset_of(const VoxelSet& o) const
    {
        check_shape(o);
        for (std::size_t i = 0; i < bits_.size(); ++i)
            if (bits_[i] & ~o.bits_[i])
                return false;
        return true;
    }

    std::size_t intersection_count(const VoxelSet& o) const
    {
        check_shape(o);
        std::size_t c = 0;
        for (std::size_t i = 0; i < bits_.size(); ++i)
            c += std::popcount(bits_[i] & o.bits_[i]);
        return c;
    }

    template <class F>
    void for_each(F&& f) const
    {
        for (std::size_t r = 0; r < rows(); ++r) {
            const std::uint64_t* p = row_ptr(r);
            for (int w = 0; w < wpr_; ++w) {
                std::uint64_t x = p[w];
                while (x) {
                    int b = std::countr_zero(x);
                    x &= x - 1;
                    f(r * n_[0] + (w * 64 + b));
                }
            }
        }
    }

    std::vector<std::size_t> indices() const
    {
        std::vector<std::size_t> out;
        out.reserve(count());
        for_each([&](std::size_t i) { out.push_back(i); });
        return out;
    }

    void check_shape(const VoxelSet& o) const
    {
        if (!same_shape(o))
            throw std::invalid_argument("voxel grids differ in scale or extent");
    }

private:
    int k_ = 0;
    Ext ext_{};
    std::array<int, 3> n_{1, 1, 1};
    int wpr_ = 0;
    std::vector<std::uint64_t> bits_;
    mutable std::size_t count_ = 0;
    mutable bool dirty_ = true;
};

using Voxels = VoxelSet<3>;
using Voxels2 = VoxelSet<2>;

namespace detail {

// dst |= src shifted towards higher bit index by s (s may be negative).
inline void or_shifted(std::uint64_t* dst, const std::uint64_t* src, int words, int s)
{
    if (s == 0) {
        for (int i = 0; i < words; ++i)
            dst[i] |= src[i];
        return;
    }
    int a = std::abs(s);
    int ws = a >> 6, bs = a & 63;
    if (s > 0) {
        for (int i = words - 1; i >= ws; --i) {
            std::uint64_t v = src[i - ws] << bs;
            if (bs && i - ws - 1 >= 0)
                v |= src[i - ws - 1] >> (64 - bs);
            dst[i] |= v;
        }
    } else {
        for (int i = 0; i + ws < words; ++i) {
            std::uint64_t v = src[i + ws] >> bs;
            if (bs && i + ws + 1 < words)
                v |= src[i + ws + 1] << (64 - bs);
            dst[i] |= v;
        }
    }
}

inline std::uint64_t tail_mask(int n)
{
    int r = n & 63;
    return r ? (~std::uint64_t{0} >> (64 - r)) : ~std::uint64_t{0};
}

} // namespace detail

// Chebyshev dilation by c cells along every axis; clipped at the domain.
template <int D>
VoxelSet<D> dilate_cells(const VoxelSet<D>& e, int c)
{
    if (c < 0)
        throw std::invalid_argument("negative dilation");
    VoxelSet<D> cur = e;
    if (c == 0 || e.empty())
        return cur;
    const int W = e.words_per_row();
    const std::uint64_t tmask = detail::tail_mask(e.n(0));

    // x axis: doubling shifts inside each row
    {
        std::vector<std::uint64_t> tmp(W);
        for (std::size_t r = 0; r < cur.rows(); ++r) {
            std::uint64_t* row = cur.row_ptr(r);
            int covered = 0;
            while (covered < c) {
                int step = std::min(covered + 1, c - covered);
                std::copy(row, row + W, tmp.begin());
                detail::or_shifted(row, tmp.data(), W, step);
                detail::or_shifted(row, tmp.data(), W, -step);
                row[W - 1] &= tmask;
                covered += step;
            }
        }
    }

    // remaining axes: the same doubling over whole rows
    auto sweep = [&](int axis) {
        const int ny = e.n(1), nz = e.n(2);
        const int len = e.n(axis);
        int covered = 0;
        while (covered < c) {
            int step = std::min(covered + 1, c - covered);
            VoxelSet<D> src = cur;
            for (int l = 0; l < nz; ++l)
                for (int j = 0; j < ny; ++j) {
                    int pos = axis == 1 ? j : l;
                    std::uint64_t* dst = cur.row_ptr(static_cast<std::size_t>(l) * ny + j);
                    for (int sgn = -1; sgn <= 1; sgn += 2) {
                        int q = pos + sgn * step;
                        if (q < 0 || q >= len)
                            continue;
                        std::size_t srow = axis == 1 ? static_cast<std::size_t>(l) * ny + q
                                                     : static_cast<std::size_t>(q) * ny + j;
                        const std::uint64_t* s = src.row_ptr(srow);
                        for (int w = 0; w < W; ++w)
                            dst[w] |= s[w];
                    }
                }
            covered += step;
        }
    };
    sweep(1);
    if constexpr (D == 3)
        sweep(2);
    cur.mark_dirty();
    return cur;
}

template <int D>
VoxelSet<D> dilate_set(const VoxelSet<D>& e, double rho)
{
    double d = e.delta();
    if (rho < d * (1.0 - 1e-12))
        throw std::invalid_argument("sub-grid dilation");
    return dilate_cells(e, static_cast<int>(std::ceil(rho / d - 1e-9)));
}

// Number of grid-aligned dyadic boxes of side rho meeting e.
template <int D>
std::size_t covering_number(const VoxelSet<D>& e, double rho)
{
    int j = scale_exponent(rho);
    int b_log = e.k() - j;
    if (b_log < 0)
        throw std::invalid_argument("box scale finer than the grid");
    for (int a = 0; a < D; ++a)
        if ((e.n(a) >> b_log) << b_log != e.n(a))
            throw std::invalid_argument("box scale does not tile the domain");
    const int b = 1 << b_log;
    const int W = e.words_per_row();
    const int ny = e.n(1), nz = e.n(2);
    const int bz = D == 3 ? b : 1;
    std::vector<std::uint64_t> acc(W);
    std::size_t total = 0;
    for (int l0 = 0; l0 < nz; l0 += bz)
        for (int j0 = 0; j0 < ny; j0 += b) {
            std::fill(acc.begin(), acc.end(), 0);
            for (int l = l0; l < l0 + bz; ++l)
                for (int j = j0; j < j0 + b; ++j) {
                    const std::uint64_t* p = e.row_ptr(static_cast<std::size_t>(l) * ny + j);
                    for (int w = 0; w < W; ++w)
                        acc[w] |= p[w];
                }
            if (b >= 64) {
                int per = b / 64;
                for (int w = 0; w < W; w += per) {
                    bool any = false;
                    for (int q = w; q < w + per && q < W; ++q)
                        any = any || acc[q] != 0;
                    total += any;
                }
            } else {
                std::uint64_t mask = 0;
                for (int p = 0; p < 64; p += b)
                    mask |= std::uint64_t{1} << p;
                for (int w = 0; w < W; ++w) {
                    std::uint64_t t = acc[w];
                    for (int s = 1; s < b; s <<= 1)
                        t |= t >> s;
                    total += std::popcount(t & mask);
                }
            }
        }
    return total;
}

// Prefix popcounts per row word, for O(1) range counts along x.
template <int D>
class RowRank {
public:
    explicit RowRank(const VoxelSet<D>& e) : e_(&e), W_(e.words_per_row())
    {
        rank_.resize(e.words().size() + e.rows());
        std::size_t pos = 0;
        for (std::size_t r = 0; r < e.rows(); ++r) {
            const std::uint64_t* p = e.row_ptr(r);
            std::uint32_t run = 0;
            for (int w = 0; w < W_; ++w) {
                rank_[pos++] = run;
                run += std::popcount(p[w]);
            }
            rank_[pos++] = run;
        }
    }

    // Set cells with x index in [i0, i1] on a row.
    std::uint32_t range(std::size_t row, int i0, int i1) const
    {
        i0 = std::max(i0, 0);
        i1 = std::min(i1, e_->n(0) - 1);
        if (i0 > i1)
            return 0;
        return prefix(row, i1 + 1) - prefix(row, i0);
    }

private:
    std::uint32_t prefix(std::size_t row, int i) const
    {
        const std::uint32_t* rk = rank_.data() + row * (W_ + 1);
        int w = i >> 6, b = i & 63;
        std::uint32_t v = rk[w];
        if (b)
            v += std::popcount(e_->row_ptr(row)[w] & (~std::uint64_t{0} >> (64 - b)));
        return v;
    }

    const VoxelSet<D>* e_;
    int W_;
    std::vector<std::uint32_t> rank_;
};

struct BallCount {
    std::size_t hit = 0;
    std::size_t total = 0;
    double density() const { return total ? static_cast<double>(hit) / total : 0.0; }
};

// Cells whose centers lie in the closed ball, restricted to the domain.
inline BallCount ball_count(const RowRank<3>& rank, const Voxels& e, const Vec3& c, double r)
{
    BallCount out;
    const double d = e.delta();
    int l0 = std::max(0, e.cell_of(2, c.z() - r) - 1), l1 = std::min(e.n(2) - 1, e.cell_of(2, c.z() + r) + 1);
    int j0 = std::max(0, e.cell_of(1, c.y() - r) - 1), j1 = std::min(e.n(1) - 1, e.cell_of(1, c.y() + r) + 1);
    const double r2 = r * r * (1.0 + 1e-12);
    for (int l = l0; l <= l1; ++l) {
        double dz = e.coord(2, l) - c.z();
        for (int j = j0; j <= j1; ++j) {
            double dy = e.coord(1, j) - c.y();
            double rem = r2 - dz * dz - dy * dy;
            if (rem < 0.0)
                continue;
            double h = std::sqrt(rem);
            int i0 = static_cast<int>(std::ceil((c.x() - h + e.ext()[0]) / d - 0.5));
            int i1 = static_cast<int>(std::floor((c.x() + h + e.ext()[0]) / d - 0.5));
            i0 = std::max(i0, 0);
            i1 = std::min(i1, e.n(0) - 1);
            if (i0 > i1)
                continue;
            out.total += i1 - i0 + 1;
            out.hit += rank.range(static_cast<std::size_t>(l) * e.n(1) + j, i0, i1);
        }
    }
    return out;
}

inline double ball_density(const Voxels& e, const Vec3& c, double r, double rho)
{
    double d = e.delta();
    if (r < d * (1.0 - 1e-12))
        throw std::invalid_argument("ball radius below grid resolution");
    if (rho > r * (1.0 + 1e-12))
        throw std::invalid_argument("rho exceeds r");
    Voxels n = dilate_set(e, rho);
    RowRank<3> rank(n);
    BallCount bc = ball_count(rank, n, c, r);
    if (bc.total == 0)
        throw std::invalid_argument("ball misses the domain");
    return bc.density();
}

// Rasterization

namespace detail {

// Parameter interval of the line o + x e_x inside a capsule (empty if lo > hi).
inline std::pair<double, double> line_capsule(const Vec3& o, const Tube& t, double inflate)
{
    const double R = t.radius + inflate;
    const Vec3 a = t.end(-1);
    const Vec3 d = t.dir;
    const double L = t.length;
    double lo = 1e300, hi = -1e300;
    auto sphere = [&](const Vec3& c) {
        Vec3 m = o - c;
        double bq = m.x();
        double cq = m.squaredNorm() - R * R;
        double disc = bq * bq - cq;
        if (disc >= 0.0) {
            double s = std::sqrt(disc);
            lo = std::min(lo, -bq - s);
            hi = std::max(hi, -bq + s);
        }
    };
    sphere(a);
    sphere(t.end(1));
    // cylinder part: |(o + x ex - a) - ((o + x ex - a).d) d| <= R and 0 <= proj <= L
    Vec3 m = o - a;
    Vec3 ex = Vec3::UnitX();
    Vec3 pe = ex - d.x() * d;
    Vec3 pm = m - m.dot(d) * d;
    double A = pe.squaredNorm();
    double B = pe.dot(pm);
    double C = pm.squaredNorm() - R * R;
    double clo, chi;
    if (A < 1e-15) {
        if (C > 0.0)
            return {lo, hi};
        clo = -1e300;
        chi = 1e300;
    } else {
        double disc = B * B - A * C;
        if (disc < 0.0)
            return {lo, hi};
        double s = std::sqrt(disc);
        clo = (-B - s) / A;
        chi = (-B + s) / A;
    }
    // projection constraint: 0 <= m.d + x d.x <= L
    double md = m.dot(d);
    if (std::abs(d.x()) < 1e-15) {
        if (md < 0.0 || md > L)
            return {lo, hi};
    } else {
        double x0 = (0.0 - md) / d.x(), x1 = (L - md) / d.x();
        if (x0 > x1)
            std::swap(x0, x1);
        clo = std::max(clo, x0);
        chi = std::min(chi, x1);
    }
    if (clo <= chi) {
        lo = std::min(lo, clo);
        hi = std::max(hi, chi);
    }
    return {lo, hi};
}

inline std::pair<double, double> line_prism(const Vec3& o, const Prism& r, double inflate)
{
    double lo = -1e300, hi = 1e300;
    Vec3 q = r.frame.transpose() * (o - r.center);
    for (int a = 0; a < 3; ++a) {
        double h = r.half[a] + inflate;
        double dx = r.frame(0, a);
        if (std::abs(dx) < 1e-15) {
            if (std::abs(q[a]) > h)
                return {1.0, -1.0};
            continue;
        }
        double x0 = (-h - q[a]) / dx, x1 = (h - q[a]) / dx;
        if (x0 > x1)
            std::swap(x0, x1);
        lo = std::max(lo, x0);
        hi = std::min(hi, x1);
    }
    return {lo, hi};
}

inline Shape inflated(const Solid& s, double inflate)
{
    if (const auto* t = std::get_if<Tube>(&s)) {
        Tube u = *t;
        u.radius += inflate;
        return u;
    }
    Prism p = std::get<Prism>(s);
    p.half.array() += inflate;
    return p;
}

inline std::pair<Vec3, Vec3> bounding_box(const Solid& s, double inflate)
{
    Footprint fp = footprint(s);
    Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
    for (const auto& p : fp.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    double m = fp.margin + inflate;
    return {lo.array() - m, hi.array() + m};
}

} // namespace detail

// Calls f(row, i0, i1) for each run of cells of the [-1,1]^3 grid at scale
// 2^-k selected by the solid, rows in increasing order.
// Center mode: a cell is selected iff its center lies in the solid.
// Touch mode: the solid is inflated by half a cell diagonal, a superset of
// every cell the solid meets.
template <class F>
void raster_rows(int k, const Solid& s, RasterMode mode, F&& f)
{
    const double d = std::ldexp(1.0, -k);
    const int n = 2 << k;
    const double inflate = mode == RasterMode::Touch ? 0.5 * std::sqrt(3.0) * d : 0.0;
    const Shape shape = detail::inflated(s, inflate);
    auto [lo, hi] = detail::bounding_box(s, inflate);
    auto cell = [&](double x) { return static_cast<int>(std::floor((x + 1.0) / d)); };
    auto coord = [&](int i) { return -1.0 + (i + 0.5) * d; };
    int j0 = std::max(0, cell(lo.y()) - 1), j1 = std::min(n - 1, cell(hi.y()) + 1);
    int l0 = std::max(0, cell(lo.z()) - 1), l1 = std::min(n - 1, cell(hi.z()) + 1);
    for (int l = l0; l <= l1; ++l)
        for (int j = j0; j <= j1; ++j) {
            Vec3 o(0.0, coord(j), coord(l));
            std::pair<double, double> iv;
            if (const auto* t = std::get_if<Tube>(&s))
                iv = detail::line_capsule(o, *t, inflate);
            else
                iv = detail::line_prism(o, std::get<Prism>(s), inflate);
            if (iv.first > iv.second + 1e-9)
                continue;
            int i0 = static_cast<int>(std::ceil((iv.first + 1.0) / d - 0.5));
            int i1 = static_cast<int>(std::floor((iv.second + 1.0) / d - 0.5));
            i0 = std::clamp(i0, 0, n - 1);
            i1 = std::clamp(i1, 0, n - 1);
            // snap the ends to the exact membership predicate
            auto inside = [&](int i) { return ball_inside(Vec3(coord(i), o.y(), o.z()), 0.0, shape); };
            while (i0 > 0 && inside(i0 - 1))
                --i0;
            while (i0 <= i1 && !inside(i0))
                ++i0;
            while (i1 < n - 1 && inside(i1 + 1))
                ++i1;
            while (i1 >= i0 && !inside(i1))
                --i1;
            if (i0 <= i1)
                f(static_cast<std::size_t>(l) * n + j, i0, i1);
        }
}

inline void rasterize_into(Voxels& out, const Solid& s, RasterMode mode = RasterMode::Center)
{
    if (out.ext() != Voxels::default_ext())
        throw std::invalid_argument("rasterization needs the [-1,1]^3 domain");
    raster_rows(out.k(), s, mode, [&](std::size_t row, int i0, int i1) { out.set_row_range(row, i0, i1); });
}

// Sorted flat indices of the cells selected by the solid.
inline std::vector<std::uint32_t> rasterize_cells(const Solid& s, int k, RasterMode mode = RasterMode::Center)
{
    if (k > 9)
        throw std::invalid_argument("cell lists need fewer than 2^32 cells");
    const std::size_t n = std::size_t{2} << k;
    std::vector<std::uint32_t> out;
    raster_rows(k, s, mode, [&](std::size_t row, int i0, int i1) {
        for (int i = i0; i <= i1; ++i)
            out.push_back(static_cast<std::uint32_t>(row * n + i));
    });
    return out;
}

inline double thinnest_half_dim(const Solid& s)
{
    if (const auto* t = std::get_if<Tube>(&s))
        return t->radius;
    return std::get<Prism>(s).half.minCoeff();
}

inline Voxels rasterize(const Solid& s, double delta, RasterMode mode = RasterMode::Center,
                        std::string* warning = nullptr)
{
    Voxels out = Voxels::with_scale(delta);
    if (warning && delta > thinnest_half_dim(s) * (1.0 + 1e-12))
        *warning = "sub-resolution solid";
    rasterize_into(out, s, mode);
    return out;
}

template <class Range>
Voxels rasterize_all(const Range& solids, double delta, RasterMode mode = RasterMode::Center)
{
    Voxels out = Voxels::with_scale(delta);
    for (const auto& s : solids)
        rasterize_into(out, Solid{s}, mode);
    return out;
}

// KVOX: "KVOX", u16 version, u8 dim, u8 k, u8 ext[3], 5 zero bytes, then
// little-endian u64 words.
template <int D>
void write_kvox(std::ostream& os, const VoxelSet<D>& e)
{
    unsigned char h[16] = {'K', 'V', 'O', 'X', 1, 0, static_cast<unsigned char>(D),
                           static_cast<unsigned char>(e.k())};
    for (int i = 0; i < D; ++i)
        h[8 + i] = static_cast<unsigned char>(e.ext()[i]);
    os.write(reinterpret_cast<const char*>(h), 16);
    for (std::uint64_t w : e.words()) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i)
            b[i] = static_cast<unsigned char>(w >> (8 * i));
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

inline int kvox_dim(std::istream& is)
{
    unsigned char h[16];
    auto pos = is.tellg();
    if (!is.read(reinterpret_cast<char*>(h), 16) || std::memcmp(h, "KVOX", 4) != 0)
        throw std::runtime_error("not a KVOX stream");
    is.seekg(pos);
    return h[6];
}

template <int D>
VoxelSet<D> read_kvox(std::istream& is)
{
    unsigned char h[16];
    if (!is.read(reinterpret_cast<char*>(h), 16) || std::memcmp(h, "KVOX", 4) != 0)
        throw std::runtime_error("not a KVOX stream");
    if (h[4] != 1 || h[5] != 0)
        throw std::runtime_error("unsupported KVOX version");
    if (h[6] != D)
        throw std::runtime_error("KVOX dimension mismatch");
    typename VoxelSet<D>::Ext ext;
    for (int i = 0; i < D; ++i)
        ext[i] = h[8 + i];
    VoxelSet<D> e(h[7], ext);
    for (auto& w : e.words_mut()) {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8))
            throw std::runtime_error("truncated KVOX stream");
        w = 0;
        for (int i = 0; i < 8; ++i)
            w |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return e;
}

template <int D>
std::string kvox_bytes(const VoxelSet<D>& e)
{
    std::ostringstream os(std::ios::binary);
    write_kvox(os, e);
    return os.str();
}

template <int D>
std::string covering_profile_csv(const VoxelSet<D>& e)
{
    std::ostringstream os;
    os << "rho,covering_number\n";
    for (int j = e.k(); j >= 0; --j) {
        double rho = std::ldexp(1.0, -j);
        os << rho << "," << covering_number(e, rho) << "\n";
    }
    return os.str();
}

} // namespace kakeya
