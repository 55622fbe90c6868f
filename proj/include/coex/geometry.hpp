#pragma once

#include <cmath>
#include <numbers>
#include <optional>

namespace coex {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr bool operator==(const Vec2&) const = default;

  [[nodiscard]] double norm() const { return std::hypot(x, y); }
  [[nodiscard]] constexpr double dot(Vec2 o) const { return x * o.x + y * o.y; }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

inline Vec2 heading_vector(double heading) { return {std::cos(heading), std::sin(heading)}; }

// Wraps an angle into [0, 2pi).
inline double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

// Signed smallest difference target - current, in (-pi, pi].
inline double angle_difference(double target, double current) {
  double d = std::remainder(target - current, 2.0 * std::numbers::pi);
  if (d <= -std::numbers::pi) d += 2.0 * std::numbers::pi;
  return d;
}

// Axis-aligned rectangle, closed.
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  constexpr bool operator==(const Rect&) const = default;
  [[nodiscard]] constexpr bool contains(Vec2 p) const {
    return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
  }
  [[nodiscard]] constexpr bool contains_strict(Vec2 p) const {
    return p.x > x0 && p.x < x1 && p.y > y0 && p.y < y1;
  }
  [[nodiscard]] constexpr Vec2 closest_point(Vec2 p) const {
    return {p.x < x0 ? x0 : (p.x > x1 ? x1 : p.x), p.y < y0 ? y0 : (p.y > y1 ? y1 : p.y)};
  }
};

// Pushes a circle out of a rectangle it overlaps. Returns the corrected center,
// or nullopt when there is no overlap. Assumes the center is outside the rect.
inline std::optional<Vec2> push_circle_out(Vec2 center, double radius, const Rect& r) {
  const Vec2 c = r.closest_point(center);
  const Vec2 d = center - c;
  const double dist = d.norm();
  if (dist >= radius) return std::nullopt;
  if (dist == 0.0) {
    // Center on the boundary: push along the shallowest face normal.
    const double left = center.x - r.x0, right = r.x1 - center.x;
    const double down = center.y - r.y0, up = r.y1 - center.y;
    const double m = std::fmin(std::fmin(left, right), std::fmin(down, up));
    if (m == left) return Vec2{r.x0 - radius, center.y};
    if (m == right) return Vec2{r.x1 + radius, center.y};
    if (m == down) return Vec2{center.x, r.y0 - radius};
    return Vec2{center.x, r.y1 + radius};
  }
  return c + d * (radius / dist);
}

// Parameter t in [0,1] where segment a->b first enters the rectangle, if it does.
// Slab method; a segment starting inside returns 0.
inline std::optional<double> segment_rect_entry(Vec2 a, Vec2 b, const Rect& r) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = b.x - a.x, dy = b.y - a.y;
  auto clip = [&](double p, double q) {
    if (p == 0.0) return q >= 0.0;
    const double t = q / p;
    if (p < 0.0) {
      if (t > t1) return false;
      if (t > t0) t0 = t;
    } else {
      if (t < t0) return false;
      if (t < t1) t1 = t;
    }
    return true;
  };
  if (clip(-dx, a.x - r.x0) && clip(dx, r.x1 - a.x) && clip(-dy, a.y - r.y0) &&
      clip(dy, r.y1 - a.y)) {
    return t0;
  }
  return std::nullopt;
}

}  // namespace coex
