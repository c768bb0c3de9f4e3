#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "mixsim/common.hpp"

namespace mixsim {

struct PolylineProjection {
  double s{0.0};         // arc length of the foot point
  double distance{0.0};  // perpendicular (unsigned) distance
  double lateral{0.0};   // signed offset, positive to the left of travel
  Vec2 point;
  Vec2 tangent;
};

struct SegmentHit {
  Vec2 point;
  double ua{0.0};  // parameter along first segment, [0, 1]
  double ub{0.0};  // parameter along second segment, [0, 1]
};

/// Proper or touching intersection of segments [a0,a1] and [b0,b1].
/// Collinear overlaps report nothing; callers treat shared stretches via
/// their endpoints.
inline std::optional<SegmentHit> intersect_segments(const Vec2& a0, const Vec2& a1,
                                                    const Vec2& b0, const Vec2& b1) {
  const Vec2 r = a1 - a0;
  const Vec2 q = b1 - b0;
  const double denom = r.cross(q);
  const double scale = r.norm() * q.norm();
  if (scale == 0.0 || std::fabs(denom) <= 1e-12 * scale) return std::nullopt;
  const Vec2 d = b0 - a0;
  const double ua = d.cross(q) / denom;
  const double ub = d.cross(r) / denom;
  constexpr double kEps = 1e-12;
  if (ua < -kEps || ua > 1.0 + kEps || ub < -kEps || ub > 1.0 + kEps) return std::nullopt;
  const double ta = std::clamp(ua, 0.0, 1.0);
  return SegmentHit{a0 + r * ta, ta, std::clamp(ub, 0.0, 1.0)};
}

/// Ordered point list with cumulative arc length.
class Polyline {
 public:
  Polyline() = default;

  explicit Polyline(std::vector<Vec2> pts) : pts_(std::move(pts)) {
    if (pts_.size() < 2) throw InputError("polyline needs at least two points");
    s_.assign(pts_.size(), 0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i) {
      const double seg = distance(pts_[i - 1], pts_[i]);
      if (!(seg > 0.0)) throw InputError("polyline arc length must be strictly increasing");
      s_[i] = s_[i - 1] + seg;
    }
  }

  const std::vector<Vec2>& points() const { return pts_; }
  const std::vector<double>& arc_lengths() const { return s_; }
  double length() const { return s_.empty() ? 0.0 : s_.back(); }
  std::size_t segment_count() const { return pts_.empty() ? 0 : pts_.size() - 1; }

  /// Index of the segment containing arc length s (clamped).
  std::size_t segment_at(double s) const {
    if (s <= 0.0) return 0;
    if (s >= length()) return segment_count() - 1;
    const auto it = std::upper_bound(s_.begin(), s_.end(), s);
    return static_cast<std::size_t>(std::distance(s_.begin(), it)) - 1;
  }

  Vec2 segment_direction(std::size_t i) const { return (pts_[i + 1] - pts_[i]).normalized(); }

  /// Point at arc length s; beyond the ends the first/last segment is
  /// extended linearly.
  Vec2 point_at(double s) const {
    const std::size_t i = segment_at(s);
    return pts_[i] + segment_direction(i) * (s - s_[i]);
  }

  Vec2 tangent_at(double s) const { return segment_direction(segment_at(s)); }

  PolylineProjection project(const Vec2& p) const {
    PolylineProjection best;
    best.distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < pts_.size(); ++i) {
      const Vec2 a = pts_[i];
      const Vec2 ab = pts_[i + 1] - a;
      const double len2 = ab.dot(ab);
      double u = (p - a).dot(ab) / len2;
      u = std::clamp(u, 0.0, 1.0);
      const Vec2 foot = a + ab * u;
      const double d = distance(p, foot);
      if (d < best.distance - 1e-12) {
        const Vec2 t = ab.normalized();
        best.distance = d;
        best.s = s_[i] + u * std::sqrt(len2);
        best.point = foot;
        best.tangent = t;
        best.lateral = t.cross(p - foot);
      }
    }
    return best;
  }

  /// Discrete curvature at vertex i (circumradius of neighbouring points).
  double curvature_at_vertex(std::size_t i) const {
    if (i == 0 || i + 1 >= pts_.size()) return 0.0;
    const Vec2 a = pts_[i - 1], b = pts_[i], c = pts_[i + 1];
    const double area2 = std::fabs((b - a).cross(c - a));
    const double denom = distance(a, b) * distance(b, c) * distance(a, c);
    return denom > 0.0 ? 2.0 * area2 / denom : 0.0;
  }

  /// All crossings with another polyline as (s on this, s on other, point),
  /// sorted by arc length on this polyline.
  std::vector<std::tuple<double, double, Vec2>> intersections(const Polyline& other) const {
    std::vector<std::tuple<double, double, Vec2>> out;
    for (std::size_t i = 0; i + 1 < pts_.size(); ++i) {
      for (std::size_t j = 0; j + 1 < other.pts_.size(); ++j) {
        const auto hit = intersect_segments(pts_[i], pts_[i + 1], other.pts_[j], other.pts_[j + 1]);
        if (!hit) continue;
        const double sa = s_[i] + hit->ua * (s_[i + 1] - s_[i]);
        const double sb = other.s_[j] + hit->ub * (other.s_[j + 1] - other.s_[j]);
        bool dup = false;
        for (const auto& [ea, eb, ep] : out) {
          if (std::fabs(ea - sa) < 1e-6 && std::fabs(eb - sb) < 1e-6) dup = true;
        }
        if (!dup) out.emplace_back(sa, sb, hit->point);
      }
    }
    std::sort(out.begin(), out.end(),
              [](const auto& l, const auto& r) { return std::get<0>(l) < std::get<0>(r); });
    return out;
  }

  /// Concatenates polylines, dropping a repeated joint vertex.
  static Polyline join(std::span<const Polyline> parts) {
    std::vector<Vec2> pts;
    for (const auto& p : parts) {
      for (const auto& v : p.points()) {
        if (!pts.empty() && distance(pts.back(), v) < 1e-9) continue;
        pts.push_back(v);
      }
    }
    return Polyline(std::move(pts));
  }

 private:
  std::vector<Vec2> pts_;
  std::vector<double> s_;
};

/// Sampled circular arc from `start` heading `heading0`, turning by
/// `sweep` (positive = counter-clockwise) with radius `radius`.
inline std::vector<Vec2> sample_arc(const Vec2& start, double heading0, double sweep, double radius,
                                    double step = 0.5) {
  const double sign = sweep >= 0.0 ? 1.0 : -1.0;
  const Vec2 dir{std::cos(heading0), std::sin(heading0)};
  const Vec2 center = start + dir.left_normal() * (sign * radius);
  const double phi0 = std::atan2(start.y - center.y, start.x - center.x);
  const int n = std::max(2, static_cast<int>(std::ceil(std::fabs(sweep) * radius / step)));
  std::vector<Vec2> pts;
  pts.reserve(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    const double phi = phi0 + sweep * static_cast<double>(k) / n;
    pts.push_back({center.x + radius * std::cos(phi), center.y + radius * std::sin(phi)});
  }
  return pts;
}

}  // namespace mixsim
