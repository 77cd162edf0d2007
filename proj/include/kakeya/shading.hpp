#pragma once

#include "voxel.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kakeya {

// Shadings are sorted flat cell indices into the [-1,1]^3 grid at scale 2^-k.
using CellList = std::vector<std::uint32_t>;

struct ShadedFamily {
    int k = 0;
    std::vector<Solid> solids;
    std::vector<CellList> shadings;

    double delta() const { return std::ldexp(1.0, -k); }
    std::size_t size() const { return solids.size(); }
    std::size_t mass_cells() const
    {
        std::size_t m = 0;
        for (const auto& y : shadings)
            m += y.size();
        return m;
    }
};

inline ShadedFamily full_shading(const std::vector<Solid>& solids, int k)
{
    ShadedFamily f{k, solids, {}};
    f.shadings.reserve(solids.size());
    for (const auto& s : solids)
        f.shadings.push_back(rasterize_cells(s, k));
    return f;
}

template <class Pred>
ShadedFamily shade_where(const std::vector<Solid>& solids, int k, Pred&& keep)
{
    ShadedFamily f{k, solids, {}};
    Voxels grid(k);
    for (std::size_t i = 0; i < solids.size(); ++i) {
        CellList y;
        for (auto c : rasterize_cells(solids[i], k))
            if (keep(i, grid.center_flat(c)))
                y.push_back(c);
        f.shadings.push_back(std::move(y));
    }
    return f;
}

inline void validate(const ShadedFamily& f)
{
    if (f.shadings.size() != f.solids.size())
        throw std::invalid_argument("one shading per solid required");
    for (std::size_t i = 0; i < f.size(); ++i) {
        const CellList& y = f.shadings[i];
        if (!std::is_sorted(y.begin(), y.end()) || std::adjacent_find(y.begin(), y.end()) != y.end())
            throw std::invalid_argument("shading " + std::to_string(i) + " is not a sorted cell set");
        CellList s = rasterize_cells(f.solids[i], f.k);
        if (!std::includes(s.begin(), s.end(), y.begin(), y.end()))
            throw std::invalid_argument("shading " + std::to_string(i) + " leaves its solid");
    }
}

inline Voxels cells_to_voxels(const CellList& y, int k)
{
    Voxels v(k);
    for (auto c : y)
        v.set_flat(c);
    return v;
}

inline CellList voxels_to_cells(const Voxels& v)
{
    CellList out;
    v.for_each([&](std::size_t i) { out.push_back(static_cast<std::uint32_t>(i)); });
    return out;
}

inline Voxels union_voxels(const ShadedFamily& f)
{
    Voxels v(f.k);
    for (const auto& y : f.shadings)
        for (auto c : y)
            v.set_flat(c);
    return v;
}

struct DensityReport {
    double aggregate = 0.0;
    std::vector<double> per_solid;
    bool uniformly_dense(double tau) const
    {
        return !per_solid.empty() && *std::min_element(per_solid.begin(), per_solid.end()) >= tau;
    }
};

inline DensityReport density(const ShadedFamily& f)
{
    if (f.solids.empty())
        throw std::invalid_argument("empty family");
    DensityReport r;
    std::size_t ys = 0, ss = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        std::size_t s = rasterize_cells(f.solids[i], f.k).size();
        ys += f.shadings[i].size();
        ss += s;
        r.per_solid.push_back(s ? static_cast<double>(f.shadings[i].size()) / s : 0.0);
    }
    r.aggregate = ss ? static_cast<double>(ys) / ss : 0.0;
    return r;
}

struct MultiplicityField {
    int k = 0;
    std::vector<std::uint32_t> counts;
    std::uint32_t max = 0;
    // band b holds the cells with count in [2^b, 2^(b+1))
    std::vector<std::size_t> band_cells;
    std::vector<std::size_t> band_mass;

    std::uint32_t at(std::size_t cell) const { return counts[cell]; }
};

inline int dyadic_band(std::uint32_t m) { return std::bit_width(m) - 1; }

inline MultiplicityField multiplicity(const ShadedFamily& f)
{
    MultiplicityField m;
    m.k = f.k;
    m.counts.assign(std::size_t{1} << (3 * (f.k + 1)), 0);
    for (const auto& y : f.shadings)
        for (auto c : y)
            ++m.counts[c];
    for (auto c : m.counts) {
        if (!c)
            continue;
        m.max = std::max(m.max, c);
        std::size_t b = dyadic_band(c);
        if (m.band_cells.size() <= b) {
            m.band_cells.resize(b + 1, 0);
            m.band_mass.resize(b + 1, 0);
        }
        ++m.band_cells[b];
        m.band_mass[b] += c;
    }
    return m;
}

struct Pigeonhole {
    std::uint32_t mu = 0;
    ShadedFamily refined;
    double retained = 0.0;
};

inline double pigeonhole_floor(std::size_t n)
{
    return 1.0 / (2.0 * std::log2(static_cast<double>(std::max<std::size_t>(n, 1))) + 2.0);
}

inline Pigeonhole pigeonhole_uniform(const ShadedFamily& f)
{
    std::size_t total = f.mass_cells();
    if (total == 0)
        throw std::invalid_argument("zero density");
    MultiplicityField m = multiplicity(f);
    std::size_t best = 0;
    for (std::size_t b = 1; b < m.band_mass.size(); ++b)
        if (m.band_mass[b] > m.band_mass[best])
            best = b;
    Pigeonhole out;
    out.mu = std::uint32_t{1} << best;
    out.refined = ShadedFamily{f.k, f.solids, {}};
    for (const auto& y : f.shadings) {
        CellList z;
        for (auto c : y)
            if (dyadic_band(m.counts[c]) == static_cast<int>(best))
                z.push_back(c);
        out.refined.shadings.push_back(std::move(z));
    }
    out.retained = static_cast<double>(m.band_mass[best]) / total;
    return out;
}

// Regular shadings

inline double regularity_constant(double delta) { return 1.0 / (100.0 * std::log(1.0 / delta)); }

namespace detail {

// Dense local copy of a solid and its shading over the solid's cell bounding box.
class LocalShading {
public:
    LocalShading(const Solid& s, int k) : k_(k), n_(2 << k)
    {
        CellList cells = rasterize_cells(s, k);
        lo_ = {n_, n_, n_};
        hi_ = {-1, -1, -1};
        for (auto c : cells) {
            auto p = unflat(c);
            for (int a = 0; a < 3; ++a) {
                lo_[a] = std::min(lo_[a], p[a]);
                hi_[a] = std::max(hi_[a], p[a]);
            }
        }
        if (cells.empty())
            lo_ = hi_ = {0, 0, 0};
        for (int a = 0; a < 3; ++a)
            dim_[a] = hi_[a] - lo_[a] + 1;
        solid_.assign(volume(), 0);
        for (auto c : cells)
            solid_[local(c)] = 1;
        solid_cells_ = cells.size();
        spref_ = prefix(solid_);
    }

    std::array<int, 3> unflat(std::uint32_t c) const
    {
        return {static_cast<int>(c % n_), static_cast<int>((c / n_) % n_), static_cast<int>(c / (std::size_t(n_) * n_))};
    }

    std::size_t volume() const { return std::size_t(dim_[0]) * dim_[1] * dim_[2]; }

    std::size_t local(std::uint32_t c) const
    {
        auto p = unflat(c);
        return (std::size_t(p[2] - lo_[2]) * dim_[1] + (p[1] - lo_[1])) * dim_[0] + (p[0] - lo_[0]);
    }

    std::uint32_t global(std::size_t li) const
    {
        int i = static_cast<int>(li % dim_[0]) + lo_[0];
        int j = static_cast<int>((li / dim_[0]) % dim_[1]) + lo_[1];
        int l = static_cast<int>(li / (std::size_t(dim_[0]) * dim_[1])) + lo_[2];
        return static_cast<std::uint32_t>((std::size_t(l) * n_ + j) * n_ + i);
    }

    std::size_t solid_cells() const { return solid_cells_; }
    bool in_solid(std::uint32_t c) const
    {
        auto p = unflat(c);
        for (int a = 0; a < 3; ++a)
            if (p[a] < lo_[a] || p[a] > hi_[a])
                return false;
        return solid_[local(c)];
    }

    std::vector<std::uint32_t> prefix(const std::vector<std::uint8_t>& occ) const
    {
        std::vector<std::uint32_t> p(std::size_t(dim_[0] + 1) * dim_[1] * dim_[2], 0);
        for (std::size_t row = 0; row < std::size_t(dim_[1]) * dim_[2]; ++row) {
            std::uint32_t* pr = p.data() + row * (dim_[0] + 1);
            const std::uint8_t* o = occ.data() + row * dim_[0];
            for (int i = 0; i < dim_[0]; ++i)
                pr[i + 1] = pr[i] + o[i];
        }
        return p;
    }

    // Counts cells of the occupancy (given by its row prefix) whose centers lie
    // within R cells of the center cell c.
    std::size_t ball(const std::vector<std::uint32_t>& pref, std::uint32_t c, int R) const
    {
        auto p = unflat(c);
        std::size_t total = 0;
        long R2 = long(R) * R;
        for (int dl = -R; dl <= R; ++dl) {
            int l = p[2] + dl - lo_[2];
            if (l < 0 || l >= dim_[2])
                continue;
            for (int dj = -R; dj <= R; ++dj) {
                int j = p[1] + dj - lo_[1];
                if (j < 0 || j >= dim_[1])
                    continue;
                long rem = R2 - long(dl) * dl - long(dj) * dj;
                if (rem < 0)
                    continue;
                int h = static_cast<int>(std::sqrt(static_cast<double>(rem)));
                while (long(h + 1) * (h + 1) <= rem)
                    ++h;
                while (long(h) * h > rem)
                    --h;
                int i0 = std::max(p[0] - h - lo_[0], 0), i1 = std::min(p[0] + h - lo_[0], dim_[0] - 1);
                if (i0 > i1)
                    continue;
                const std::uint32_t* pr = pref.data() + (std::size_t(l) * dim_[1] + j) * (dim_[0] + 1);
                total += pr[i1 + 1] - pr[i0];
            }
        }
        return total;
    }

    template <class F>
    void for_ball(std::uint32_t c, int R, F&& f) const
    {
        auto p = unflat(c);
        long R2 = long(R) * R;
        for (int dl = -R; dl <= R; ++dl)
            for (int dj = -R; dj <= R; ++dj)
                for (int di = -R; di <= R; ++di) {
                    if (long(di) * di + long(dj) * dj + long(dl) * dl > R2)
                        continue;
                    int i = p[0] + di, j = p[1] + dj, l = p[2] + dl;
                    if (i < lo_[0] || j < lo_[1] || l < lo_[2] || i > hi_[0] || j > hi_[1] || l > hi_[2])
                        continue;
                    f((std::size_t(l - lo_[2]) * dim_[1] + (j - lo_[1])) * dim_[0] + (i - lo_[0]));
                }
    }

    const std::vector<std::uint32_t>& solid_prefix() const { return spref_; }
    int k() const { return k_; }

private:
    int k_;
    int n_;
    std::array<int, 3> lo_{}, hi_{}, dim_{};
    std::vector<std::uint8_t> solid_;
    std::vector<std::uint32_t> spref_;
    std::size_t solid_cells_ = 0;
};

} // namespace detail

struct RegularityViolation {
    std::uint32_t cell = 0;
    double r = 0.0;
    std::size_t shaded = 0;
    double required = 0.0;
};

// Checks every cell x of Y and every dyadic r = 2^m delta <= 1.
inline std::vector<RegularityViolation> regularity_violations(const CellList& y, const Solid& s, int k,
                                                              bool first_only = false)
{
    std::vector<RegularityViolation> out;
    if (y.empty())
        return out;
    detail::LocalShading loc(s, k);
    std::vector<std::uint8_t> occ(loc.volume(), 0);
    for (auto c : y) {
        if (!loc.in_solid(c))
            throw std::invalid_argument("shading leaves its solid");
        occ[loc.local(c)] = 1;
    }
    auto ypref = loc.prefix(occ);
    const double delta = std::ldexp(1.0, -k);
    const double c = regularity_constant(delta);
    const double scale = c * static_cast<double>(y.size()) / static_cast<double>(loc.solid_cells());
    for (int m = 0; m <= k; ++m) {
        int R = 1 << m;
        for (auto x : y) {
            std::size_t ys = loc.ball(ypref, x, R);
            double need = scale * static_cast<double>(loc.ball(loc.solid_prefix(), x, R));
            if (static_cast<double>(ys) < need) {
                out.push_back({x, R * delta, ys, need});
                if (first_only)
                    return out;
            }
        }
    }
    return out;
}

inline bool is_regular(const CellList& y, const Solid& s, int k)
{
    return regularity_violations(y, s, k, true).empty();
}

// Deletes Y inside every violating ball, repeating until no ball violates.
inline CellList regularize(const CellList& y, const Solid& s, int k)
{
    CellList cur = y;
    if (cur.empty())
        return cur;
    detail::LocalShading loc(s, k);
    for (;;) {
        auto bad = regularity_violations(cur, s, k);
        if (bad.empty())
            return cur;
        std::vector<std::uint8_t> occ(loc.volume(), 0);
        for (auto c : cur)
            occ[loc.local(c)] = 1;
        const double delta = std::ldexp(1.0, -k);
        for (const auto& v : bad) {
            int R = static_cast<int>(std::lround(v.r / delta));
            loc.for_ball(v.cell, R, [&](std::size_t li) { occ[li] = 0; });
        }
        CellList next;
        for (auto c : cur)
            if (occ[loc.local(c)])
                next.push_back(c);
        cur.swap(next);
        if (cur.empty())
            return cur;
    }
}

inline Voxels regularize(const Voxels& y, const Solid& s)
{
    return cells_to_voxels(regularize(voxels_to_cells(y), s, y.k()), y.k());
}

inline ShadedFamily regularize_family(const ShadedFamily& f)
{
    ShadedFamily out{f.k, f.solids, {}};
    for (std::size_t i = 0; i < f.size(); ++i)
        out.shadings.push_back(regularize(f.shadings[i], f.solids[i], f.k));
    return out;
}

// Archive: stored (uncompressed) zip with family.json and one KVOX per solid.

namespace detail {

inline void put16(std::string& s, std::uint16_t v)
{
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}

inline void put32(std::string& s, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get32(const std::string& s, std::size_t at)
{
    if (at + 4 > s.size())
        throw std::runtime_error("truncated archive");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
    return v;
}

inline std::uint16_t get16(const std::string& s, std::size_t at)
{
    if (at + 2 > s.size())
        throw std::runtime_error("truncated archive");
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                      (static_cast<unsigned char>(s[at + 1]) << 8));
}

} // namespace detail

inline std::string zip_store(const std::vector<std::pair<std::string, std::string>>& entries)
{
    std::string out, central;
    for (const auto& [name, data] : entries) {
        std::uint32_t crc = static_cast<std::uint32_t>(
            crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
        std::uint32_t offset = static_cast<std::uint32_t>(out.size());
        detail::put32(out, 0x04034b50);
        detail::put16(out, 20);
        detail::put16(out, 0);
        detail::put16(out, 0);
        detail::put16(out, 0);
        detail::put16(out, 0x21);
        detail::put32(out, crc);
        detail::put32(out, static_cast<std::uint32_t>(data.size()));
        detail::put32(out, static_cast<std::uint32_t>(data.size()));
        detail::put16(out, static_cast<std::uint16_t>(name.size()));
        detail::put16(out, 0);
        out += name;
        out += data;

        detail::put32(central, 0x02014b50);
        detail::put16(central, 20);
        detail::put16(central, 20);
        detail::put16(central, 0);
        detail::put16(central, 0);
        detail::put16(central, 0);
        detail::put16(central, 0x21);
        detail::put32(central, crc);
        detail::put32(central, static_cast<std::uint32_t>(data.size()));
        detail::put32(central, static_cast<std::uint32_t>(data.size()));
        detail::put16(central, static_cast<std::uint16_t>(name.size()));
        detail::put16(central, 0);
        detail::put16(central, 0);
        detail::put16(central, 0);
        detail::put16(central, 0);
        detail::put32(central, 0);
        detail::put32(central, offset);
        central += name;
    }
    std::uint32_t cd_offset = static_cast<std::uint32_t>(out.size());
    out += central;
    detail::put32(out, 0x06054b50);
    detail::put16(out, 0);
    detail::put16(out, 0);
    detail::put16(out, static_cast<std::uint16_t>(entries.size()));
    detail::put16(out, static_cast<std::uint16_t>(entries.size()));
    detail::put32(out, static_cast<std::uint32_t>(central.size()));
    detail::put32(out, cd_offset);
    detail::put16(out, 0);
    return out;
}

inline std::vector<std::pair<std::string, std::string>> zip_read_stored(const std::string& z)
{
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t at = 0;
    while (at + 4 <= z.size() && detail::get32(z, at) == 0x04034b50) {
        if (detail::get16(z, at + 8) != 0)
            throw std::runtime_error("compressed archive entries are not supported");
        std::uint32_t crc = detail::get32(z, at + 14);
        std::uint32_t size = detail::get32(z, at + 18);
        std::uint16_t nlen = detail::get16(z, at + 26), xlen = detail::get16(z, at + 28);
        std::size_t name_at = at + 30, data_at = name_at + nlen + xlen;
        if (data_at + size > z.size())
            throw std::runtime_error("truncated archive");
        std::string name = z.substr(name_at, nlen), data = z.substr(data_at, size);
        if (static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data.data()),
                                             static_cast<uInt>(data.size()))) != crc)
            throw std::runtime_error("archive checksum mismatch in " + name);
        out.emplace_back(std::move(name), std::move(data));
        at = data_at + size;
    }
    if (out.empty())
        throw std::runtime_error("not a zip archive");
    return out;
}

inline std::string archive_bytes(const ShadedFamily& f)
{
    std::vector<std::pair<std::string, std::string>> entries;
    json fam = family_to_json(f.solids, f.delta());
    entries.emplace_back("family.json", fam.dump(2));
    for (std::size_t i = 0; i < f.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "shading_%06zu.kvox", i);
        entries.emplace_back(name, kvox_bytes(cells_to_voxels(f.shadings[i], f.k)));
    }
    return zip_store(entries);
}

inline ShadedFamily family_from_archive(const std::string& bytes)
{
    auto entries = zip_read_stored(bytes);
    ShadedFamily f;
    bool have_family = false;
    std::map<std::string, CellList> blobs;
    for (const auto& [name, data] : entries) {
        if (name == "family.json") {
            double delta = 0.0;
            f.solids = family_from_json(json::parse(data), &delta);
            f.k = scale_exponent(delta);
            have_family = true;
        } else {
            std::istringstream is(data);
            blobs[name] = voxels_to_cells(read_kvox<3>(is));
        }
    }
    if (!have_family)
        throw std::runtime_error("archive lacks family.json");
    if (blobs.size() != f.solids.size())
        throw std::runtime_error("archive shading count does not match the family");
    for (auto& [name, cells] : blobs)
        f.shadings.push_back(std::move(cells));
    validate(f);
    return f;
}

inline void write_archive(const std::string& path, const ShadedFamily& f)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot write " + path);
    std::string b = archive_bytes(f);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
}

inline ShadedFamily read_archive(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return family_from_archive(ss.str());
}

} // namespace kakeya
