#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace fusionrl {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

// Wraps into [-pi, pi).
inline double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    if (a >= -std::numbers::pi && a < std::numbers::pi) return a;
    double w = std::fmod(a + std::numbers::pi, two_pi);
    if (w < 0.0) w += two_pi;
    w -= std::numbers::pi;
    // fmod rounding can land exactly on +pi
    if (w >= std::numbers::pi) w -= two_pi;
    return w;
}

struct Pose2D {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0; ///< radians, kept in [-pi, pi)

    Vec2 position() const { return {x, y}; }
    Vec2 forward() const { return unit(heading); }
    Vec2 left() const { return unit(heading + std::numbers::pi / 2.0); }

    // Body-frame point to world frame.
    Vec2 to_world(Vec2 local) const {
        const double c = std::cos(heading), s = std::sin(heading);
        return {x + c * local.x - s * local.y, y + s * local.x + c * local.y};
    }
    Vec2 to_local(Vec2 world) const {
        const double c = std::cos(heading), s = std::sin(heading);
        const double dx = world.x - x, dy = world.y - y;
        return {c * dx + s * dy, -s * dx + c * dy};
    }

    friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

inline Pose2D make_pose(double x, double y, double heading) { return {x, y, wrap_angle(heading)}; }

/// Oriented rectangle: center pose plus half extents along the body x (forward)
/// and y (left) axes.
struct OrientedRect {
    Pose2D pose;
    double half_length = 0.0;
    double half_width = 0.0;

    std::array<Vec2, 4> corners() const {
        return {pose.to_world({half_length, half_width}), pose.to_world({-half_length, half_width}),
                pose.to_world({-half_length, -half_width}), pose.to_world({half_length, -half_width})};
    }
    bool contains(Vec2 p) const {
        const Vec2 l = pose.to_local(p);
        return std::abs(l.x) <= half_length && std::abs(l.y) <= half_width;
    }
    double distance_to(Vec2 p) const {
        const Vec2 l = pose.to_local(p);
        const double dx = std::max(std::abs(l.x) - half_length, 0.0);
        const double dy = std::max(std::abs(l.y) - half_width, 0.0);
        return std::hypot(dx, dy);
    }
};

inline constexpr double kNoHit = std::numeric_limits<double>::infinity();

// Ray parameterised as origin + t * dir with |dir| = 1; every intersection
// routine returns the smallest t >= 0, 0 when the origin is inside the shape,
// or kNoHit.

inline double ray_segment(Vec2 origin, Vec2 dir, Vec2 a, Vec2 b) {
    const Vec2 e = b - a;
    const double denom = cross(dir, e);
    const Vec2 w = a - origin;
    if (denom == 0.0) {
        // Parallel. Collinear overlap counts as the nearest endpoint.
        if (cross(w, dir) != 0.0) return kNoHit;
        const double ta = dot(a - origin, dir);
        const double tb = dot(b - origin, dir);
        if (ta < 0.0 && tb < 0.0) return kNoHit;
        if ((ta <= 0.0 && tb >= 0.0) || (tb <= 0.0 && ta >= 0.0)) return 0.0;
        return std::min(ta, tb);
    }
    const double t = cross(w, e) / denom;
    const double u = cross(w, dir) / denom;
    if (t < 0.0 || u < 0.0 || u > 1.0) return kNoHit;
    return t;
}

inline double ray_circle(Vec2 origin, Vec2 dir, Vec2 center, double radius) {
    const Vec2 m = origin - center;
    const double c = dot(m, m) - radius * radius;
    if (c <= 0.0) return 0.0;
    const double b = dot(m, dir);
    if (b > 0.0) return kNoHit;
    const double disc = b * b - c;
    if (disc < 0.0) return kNoHit;
    // c / (-b + sqrt) avoids cancellation for near-tangent rays
    const double root = -b + std::sqrt(disc);
    return c / root;
}

inline double ray_rect(Vec2 origin, Vec2 dir, const OrientedRect& rect) {
    const Vec2 o = rect.pose.to_local(origin);
    const double c = std::cos(rect.pose.heading), s = std::sin(rect.pose.heading);
    const Vec2 d{c * dir.x + s * dir.y, -s * dir.x + c * dir.y};
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    const double lo[2] = {-rect.half_length, -rect.half_width};
    const double hi[2] = {rect.half_length, rect.half_width};
    const double oo[2] = {o.x, o.y};
    const double dd[2] = {d.x, d.y};
    for (int axis = 0; axis < 2; ++axis) {
        if (dd[axis] == 0.0) {
            if (oo[axis] < lo[axis] || oo[axis] > hi[axis]) return kNoHit;
            continue;
        }
        double t1 = (lo[axis] - oo[axis]) / dd[axis];
        double t2 = (hi[axis] - oo[axis]) / dd[axis];
        if (t1 > t2) std::swap(t1, t2);
        t_near = std::max(t_near, t1);
        t_far = std::min(t_far, t2);
    }
    if (t_near > t_far || t_far < 0.0) return kNoHit;
    return std::max(t_near, 0.0);
}

} // namespace fusionrl
