#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace kakeya {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using json = nlohmann::json;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTol = 1e-12;

// Closed radius-neighborhood of a closed segment (a capsule).
struct Tube {
    Vec3 anchor = Vec3::Zero();
    Vec3 dir = Vec3::UnitZ();
    double radius = 0.0;
    double length = 1.0;
    double scale = 0.0;

    Vec3 end(int sign) const { return anchor + (0.5 * length * sign) * dir; }
    double volume() const
    {
        return kPi * radius * radius * length + 4.0 / 3.0 * kPi * radius * radius * radius;
    }
};

// Box center + frame * [-h, h]^3; frame columns are u, v, w with w the long axis.
struct Prism {
    Vec3 center = Vec3::Zero();
    Mat3 frame = Mat3::Identity();
    Vec3 half = Vec3::Zero();

    Vec3 u() const { return frame.col(0); }
    Vec3 v() const { return frame.col(1); }
    Vec3 w() const { return frame.col(2); }
    Vec3 dims() const { return 2.0 * half; }
    double volume() const { return 8.0 * half.x() * half.y() * half.z(); }
    std::array<Vec3, 8> corners() const
    {
        std::array<Vec3, 8> out;
        for (int i = 0; i < 8; ++i) {
            Vec3 s((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
            out[i] = center + frame * s.cwiseProduct(half);
        }
        return out;
    }
};

struct Ball {
    Vec3 center = Vec3::Zero();
    double radius = 0.0;
    double volume() const { return 4.0 / 3.0 * kPi * radius * radius * radius; }
};

using Solid = std::variant<Tube, Prism>;
using Shape = std::variant<Tube, Prism, Ball>;

struct ConvexWitness {
    Shape shape;
    double volume = 0.0;
};

struct AffineMap {
    Mat3 linear = Mat3::Identity();
    Vec3 offset = Vec3::Zero();

    Vec3 operator()(const Vec3& x) const { return linear * x + offset; }
    AffineMap inverse() const
    {
        Mat3 inv = linear.inverse();
        return {inv, -inv * offset};
    }
    double det() const { return linear.determinant(); }
};

inline double shape_volume(const Shape& s)
{
    return std::visit([](const auto& x) { return x.volume(); }, s);
}

inline double solid_volume(const Solid& s)
{
    return std::visit([](const auto& x) { return x.volume(); }, s);
}

inline ConvexWitness make_witness(const Shape& s) { return {s, shape_volume(s)}; }

inline Shape as_shape(const Solid& s)
{
    return std::visit([](const auto& x) -> Shape { return x; }, s);
}

// Right-handed orthonormal frame whose third column is w.
inline Mat3 frame_from_axis(const Vec3& w_in)
{
    Vec3 w = w_in.normalized();
    Vec3 seed = std::abs(w.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    Vec3 u = (seed - seed.dot(w) * w).normalized();
    Vec3 v = w.cross(u);
    Mat3 f;
    f.col(0) = u;
    f.col(1) = v;
    f.col(2) = w;
    return f;
}

inline Tube make_tube(const Vec3& anchor, const Vec3& dir, double radius, double scale = 0.0,
                      double length = 1.0)
{
    if (!(radius > 0.0))
        throw std::invalid_argument("tube radius must be positive");
    if (!(length > 0.0))
        throw std::invalid_argument("tube length must be positive");
    double n = dir.norm();
    if (n < kTol)
        throw std::invalid_argument("tube direction is zero");
    return Tube{anchor, dir / n, radius, length, scale > 0.0 ? scale : radius};
}

inline Prism make_prism(const Vec3& center, const Mat3& frame, const Vec3& dims)
{
    Mat3 g = frame.transpose() * frame - Mat3::Identity();
    if (g.cwiseAbs().maxCoeff() > 1e-9 || frame.determinant() < 0.0)
        throw std::invalid_argument("prism frame is not right-handed orthonormal");
    if (!(dims.minCoeff() > 0.0))
        throw std::invalid_argument("prism dims must be positive");
    if (dims.x() > dims.y() * (1.0 + 1e-12))
        throw std::invalid_argument("prism requires s <= t");
    return Prism{center, frame, dims / 2.0};
}

inline double dist_to_segment(const Vec3& p, const Vec3& a, const Vec3& b)
{
    Vec3 ab = b - a;
    double L2 = ab.squaredNorm();
    double t = L2 > 0.0 ? std::clamp((p - a).dot(ab) / L2, 0.0, 1.0) : 0.0;
    return (p - (a + t * ab)).norm();
}

// Is the closed ball B(p, margin) inside the shape?
inline bool ball_inside(const Vec3& p, double margin, const Tube& t)
{
    return dist_to_segment(p, t.end(-1), t.end(1)) + margin <= t.radius + kTol;
}

inline bool ball_inside(const Vec3& p, double margin, const Prism& r)
{
    Vec3 q = r.frame.transpose() * (p - r.center);
    for (int i = 0; i < 3; ++i)
        if (std::abs(q[i]) + margin > r.half[i] + kTol)
            return false;
    return true;
}

inline bool ball_inside(const Vec3& p, double margin, const Ball& b)
{
    return (p - b.center).norm() + margin <= b.radius + kTol;
}

inline bool ball_inside(const Vec3& p, double margin, const Shape& s)
{
    return std::visit([&](const auto& x) { return ball_inside(p, margin, x); }, s);
}

// A solid is the convex hull of finitely many balls of a common radius.
struct Footprint {
    std::vector<Vec3> points;
    double margin = 0.0;
};

inline Footprint footprint(const Tube& t) { return {{t.end(-1), t.end(1)}, t.radius}; }

inline Footprint footprint(const Prism& r)
{
    auto c = r.corners();
    return {std::vector<Vec3>(c.begin(), c.end()), 0.0};
}

inline Footprint footprint(const Solid& s)
{
    return std::visit([](const auto& x) { return footprint(x); }, s);
}

inline bool contained_in(const Solid& s, const Shape& w)
{
    Footprint fp = footprint(s);
    for (const auto& p : fp.points)
        if (!ball_inside(p, fp.margin, w))
            return false;
    return true;
}

inline bool contained_in_convex(const Tube& t, const ConvexWitness& w)
{
    return contained_in(Solid{t}, w.shape);
}

inline bool contained_in_convex(const Solid& s, const ConvexWitness& w)
{
    return contained_in(s, w.shape);
}

inline Tube dilate(const Tube& t, double k)
{
    if (!(k > 0.0))
        throw std::invalid_argument("dilation factor must be positive");
    Tube out = t;
    out.radius *= k;
    out.length *= k;
    return out;
}

inline Prism dilate(const Prism& r, double k)
{
    if (!(k > 0.0))
        throw std::invalid_argument("dilation factor must be positive");
    Prism out = r;
    out.half *= k;
    return out;
}

inline Ball dilate(const Ball& b, double k)
{
    if (!(k > 0.0))
        throw std::invalid_argument("dilation factor must be positive");
    return {b.center, b.radius * k};
}

inline Solid dilate_solid(const Solid& s, double k)
{
    return std::visit([&](const auto& x) -> Solid { return dilate(x, k); }, s);
}

inline bool same_scale(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(a, b); }

inline bool essentially_distinct(const Tube& a, const Tube& b)
{
    if (!same_scale(a.scale, b.scale))
        throw std::invalid_argument("scale mismatch");
    return !contained_in(Solid{a}, dilate(b, 2.0)) && !contained_in(Solid{b}, dilate(a, 2.0));
}

inline Vec3 solid_center(const Solid& s)
{
    if (const auto* t = std::get_if<Tube>(&s))
        return t->anchor;
    return std::get<Prism>(s).center;
}

// Semi-axes and frame of the ellipsoid used to normalize a reference shape.
// Tubes use the John ellipsoid of their bounding cylinder.
struct Ellipsoid {
    Vec3 center;
    Mat3 frame;
    Vec3 axes;
    double volume() const { return 4.0 / 3.0 * kPi * axes.prod(); }
};

inline Ellipsoid circumscribed_ellipsoid(const Shape& s)
{
    if (const auto* t = std::get_if<Tube>(&s)) {
        double h = 0.5 * t->length + t->radius;
        double a = std::sqrt(1.5) * t->radius;
        return {t->anchor, frame_from_axis(t->dir), Vec3(a, a, std::sqrt(3.0) * h)};
    }
    if (const auto* r = std::get_if<Prism>(&s))
        return {r->center, r->frame, std::sqrt(3.0) * r->half};
    const auto& b = std::get<Ball>(s);
    return {b.center, Mat3::Identity(), Vec3::Constant(b.radius)};
}

inline AffineMap rescaling_map(const Shape& s)
{
    Ellipsoid e = circumscribed_ellipsoid(s);
    Mat3 lin = e.axes.cwiseInverse().asDiagonal() * e.frame.transpose();
    return {lin, -lin * e.center};
}

inline Tube transform(const AffineMap& m, const Tube& t)
{
    Vec3 img = m.linear * t.dir;
    double stretch = img.norm();
    double det = std::abs(m.det());
    double k = std::sqrt(det / stretch);
    Tube out;
    out.anchor = m(t.anchor);
    out.dir = img / stretch;
    out.length = t.length * stretch;
    out.radius = t.radius * k;
    out.scale = t.scale * k;
    return out;
}

// Exact when the map keeps the prism's axes orthogonal; otherwise the frame
// is Gram-Schmidt from w and the half-dims are the stretched edge lengths.
inline Prism transform(const AffineMap& m, const Prism& r)
{
    Vec3 eu = m.linear * r.u() * r.half.x();
    Vec3 ev = m.linear * r.v() * r.half.y();
    Vec3 ew = m.linear * r.w() * r.half.z();
    Vec3 w = ew.normalized();
    Vec3 v = (ev - ev.dot(w) * w).normalized();
    Vec3 u = v.cross(w);
    Prism out;
    out.center = m(r.center);
    out.frame.col(0) = u;
    out.frame.col(1) = v;
    out.frame.col(2) = w;
    out.half = Vec3(eu.norm(), ev.norm(), ew.norm());
    if (out.half.x() > out.half.y()) {
        std::swap(out.half.x(), out.half.y());
        Vec3 c0 = out.frame.col(0);
        out.frame.col(0) = out.frame.col(1);
        out.frame.col(1) = -c0;
    }
    return out;
}

inline Solid transform(const AffineMap& m, const Solid& s)
{
    return std::visit([&](const auto& x) -> Solid { return transform(m, x); }, s);
}

inline std::pair<std::vector<Solid>, AffineMap> unit_rescale(const std::vector<Solid>& solids,
                                                             const ConvexWitness& reference)
{
    for (std::size_t i = 0; i < solids.size(); ++i)
        if (!contained_in(solids[i], reference.shape))
            throw std::invalid_argument("solid " + std::to_string(i) +
                                        " is not contained in the reference");
    AffineMap m = rescaling_map(reference.shape);
    std::vector<Solid> out;
    out.reserve(solids.size());
    for (const auto& s : solids)
        out.push_back(transform(m, s));
    return {out, m};
}

// JSON

inline json to_json_vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const json& j)
{
    if (!j.is_array() || j.size() != 3)
        throw std::invalid_argument("expected a 3-vector");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline json to_json(const Tube& t)
{
    json j{{"anchor", to_json_vec(t.anchor)},
           {"dir", to_json_vec(t.dir)},
           {"radius", t.radius},
           {"scale", t.scale}};
    if (t.length != 1.0)
        j["length"] = t.length;
    return j;
}

inline json to_json(const Prism& r)
{
    return {{"center", to_json_vec(r.center)},
            {"frame", json::array({to_json_vec(r.u()), to_json_vec(r.v()), to_json_vec(r.w())})},
            {"dims", to_json_vec(r.dims())}};
}

inline json to_json(const Ball& b)
{
    return {{"center", to_json_vec(b.center)}, {"radius", b.radius}};
}

inline json to_json(const Solid& s)
{
    return std::visit([](const auto& x) { return to_json(x); }, s);
}

inline json to_json(const ConvexWitness& w)
{
    json j = std::visit([](const auto& x) { return to_json(x); }, w.shape);
    const char* kind = std::holds_alternative<Tube>(w.shape)    ? "tube"
                       : std::holds_alternative<Prism>(w.shape) ? "prism"
                                                                : "ball";
    return {{"kind", kind}, {"shape", j}, {"volume", w.volume}};
}

inline Tube tube_from_json(const json& j)
{
    double r = j.at("radius").get<double>();
    return make_tube(vec_from_json(j.at("anchor")), vec_from_json(j.at("dir")), r,
                     j.value("scale", r), j.value("length", 1.0));
}

inline Prism prism_from_json(const json& j)
{
    const json& f = j.at("frame");
    if (!f.is_array() || f.size() != 3)
        throw std::invalid_argument("prism frame must have three vectors");
    Mat3 m;
    for (int i = 0; i < 3; ++i)
        m.col(i) = vec_from_json(f[i]);
    return make_prism(vec_from_json(j.at("center")), m, vec_from_json(j.at("dims")));
}

inline Solid solid_from_json(const json& j)
{
    if (j.contains("anchor"))
        return tube_from_json(j);
    return prism_from_json(j);
}

template <class T>
std::vector<Solid> to_solids(const std::vector<T>& v)
{
    return std::vector<Solid>(v.begin(), v.end());
}

inline std::vector<Tube> tubes_of(const std::vector<Solid>& f)
{
    std::vector<Tube> out;
    out.reserve(f.size());
    for (const auto& s : f) {
        if (!std::holds_alternative<Tube>(s))
            throw std::invalid_argument("family contains a non-tube solid");
        out.push_back(std::get<Tube>(s));
    }
    return out;
}

inline json family_to_json(const std::vector<Solid>& f, double delta)
{
    json arr = json::array();
    for (const auto& s : f)
        arr.push_back(to_json(s));
    return {{"scale", delta}, {"solids", arr}};
}

inline std::vector<Solid> family_from_json(const json& j, double* delta = nullptr)
{
    if (!j.is_object() || !j.contains("solids") || !j["solids"].is_array())
        throw std::invalid_argument("family JSON needs a solids array");
    if (delta)
        *delta = j.value("scale", 0.0);
    std::vector<Solid> out;
    for (const auto& s : j["solids"])
        out.push_back(solid_from_json(s));
    return out;
}

} // namespace kakeya
