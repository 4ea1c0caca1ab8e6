#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

namespace crowd {

template <typename Scalar>
using Point2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Point3 = Eigen::Matrix<Scalar, 3, 1>;

using Vec2 = Point2<double>;
using Vec3 = Point3<double>;

/// Simple polygon as an ordered vertex ring (closing edge implied).
template <typename Scalar>
using PolygonT = std::vector<Point2<Scalar>>;
using Polygon = PolygonT<double>;

template <typename Scalar>
Scalar cross2(const Point2<Scalar>& a, const Point2<Scalar>& b) {
  return a.x() * b.y() - a.y() * b.x();
}

template <typename Scalar>
Scalar signed_area(const PolygonT<Scalar>& poly) {
  Scalar twice = 0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) twice += cross2(poly[i], poly[(i + 1) % n]);
  return twice / Scalar(2);
}

template <typename Scalar>
Point2<Scalar> centroid(const PolygonT<Scalar>& poly) {
  const Scalar a = signed_area(poly);
  if (std::abs(a) < std::numeric_limits<Scalar>::epsilon()) {
    Point2<Scalar> mean = Point2<Scalar>::Zero();
    for (const auto& v : poly) mean += v;
    return mean / Scalar(poly.size());
  }
  Point2<Scalar> c = Point2<Scalar>::Zero();
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    c += (p + q) * cross2(p, q);
  }
  return c / (Scalar(6) * a);
}

/// Even-odd rule. Points exactly on an edge may land on either side.
template <typename Scalar>
bool point_in_polygon(const PolygonT<Scalar>& poly, const Point2<Scalar>& p) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const Scalar x = (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x();
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

template <typename Scalar>
Point2<Scalar> closest_point_on_segment(const Point2<Scalar>& a, const Point2<Scalar>& b,
                                        const Point2<Scalar>& p) {
  const Point2<Scalar> ab = b - a;
  const Scalar len2 = ab.squaredNorm();
  if (len2 <= Scalar(0)) return a;
  const Scalar t = std::clamp((p - a).dot(ab) / len2, Scalar(0), Scalar(1));
  return a + t * ab;
}

template <typename Scalar>
struct BoundaryPoint {
  Point2<Scalar> point;
  Scalar distance;
  std::size_t edge;  // edge i joins vertex i and i+1
};

template <typename Scalar>
BoundaryPoint<Scalar> closest_boundary_point(const PolygonT<Scalar>& poly,
                                             const Point2<Scalar>& p) {
  BoundaryPoint<Scalar> best{poly.front(), std::numeric_limits<Scalar>::infinity(), 0};
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2<Scalar> q = closest_point_on_segment(poly[i], poly[(i + 1) % n], p);
    const Scalar d = (p - q).norm();
    if (d < best.distance) best = {q, d, i};
  }
  return best;
}

/// Unit normal of edge i pointing away from the polygon interior.
template <typename Scalar>
Point2<Scalar> outward_normal(const PolygonT<Scalar>& poly, std::size_t edge) {
  const Point2<Scalar> e = poly[(edge + 1) % poly.size()] - poly[edge];
  Point2<Scalar> n(e.y(), -e.x());  // right-hand normal: outward for CCW rings
  if (signed_area(poly) < Scalar(0)) n = -n;
  const Scalar len = n.norm();
  return len > Scalar(0) ? Point2<Scalar>(n / len) : Point2<Scalar>(Scalar(1), Scalar(0));
}

template <typename Scalar>
int orientation(const Point2<Scalar>& a, const Point2<Scalar>& b, const Point2<Scalar>& c) {
  const Scalar v = cross2<Scalar>(b - a, c - a);
  return (v > 0) - (v < 0);
}

template <typename Scalar>
bool on_segment(const Point2<Scalar>& a, const Point2<Scalar>& b, const Point2<Scalar>& p) {
  return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) &&
         std::min(a.y(), b.y()) <= p.y() && p.y() <= std::max(a.y(), b.y());
}

/// Closed-segment intersection test (touching counts).
template <typename Scalar>
bool segments_intersect(const Point2<Scalar>& p1, const Point2<Scalar>& p2,
                        const Point2<Scalar>& q1, const Point2<Scalar>& q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

/// Proper crossing: interiors intersect at a single point, no touching.
template <typename Scalar>
bool segments_cross(const Point2<Scalar>& p1, const Point2<Scalar>& p2,
                    const Point2<Scalar>& q1, const Point2<Scalar>& q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  return o1 * o2 < 0 && o3 * o4 < 0;
}

template <typename Scalar>
bool polygon_self_intersects(const PolygonT<Scalar>& poly) {
  const std::size_t n = poly.size();
  if (n < 4) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // adjacent edges share a vertex
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]))
        return true;
    }
  }
  return false;
}

/// True when the two polygons share interior area. Edge contact alone does not count.
template <typename Scalar>
bool polygons_overlap(const PolygonT<Scalar>& a, const PolygonT<Scalar>& b) {
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j)
      if (segments_cross(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb])) return true;
  const auto strictly_inside = [](const PolygonT<Scalar>& poly, const Point2<Scalar>& p) {
    return point_in_polygon(poly, p) && closest_boundary_point(poly, p).distance > Scalar(1e-12);
  };
  for (const auto& v : a)
    if (strictly_inside(b, v)) return true;
  for (const auto& v : b)
    if (strictly_inside(a, v)) return true;
  return strictly_inside(b, centroid(a)) || strictly_inside(a, centroid(b));
}

/// `inner` lies inside `outer`; shared boundary points are allowed.
template <typename Scalar>
bool polygon_contains(const PolygonT<Scalar>& outer, const PolygonT<Scalar>& inner) {
  const std::size_t no = outer.size();
  const std::size_t ni = inner.size();
  for (const auto& v : inner) {
    if (point_in_polygon(outer, v)) continue;
    if (closest_boundary_point(outer, v).distance > Scalar(1e-9)) return false;
  }
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t j = 0; j < no; ++j)
      if (segments_cross(inner[i], inner[(i + 1) % ni], outer[j], outer[(j + 1) % no]))
        return false;
  return true;
}

template <typename Scalar>
struct Box2 {
  Point2<Scalar> min;
  Point2<Scalar> max;
};

template <typename Scalar>
Box2<Scalar> bounding_box(const PolygonT<Scalar>& poly) {
  Box2<Scalar> b{poly.front(), poly.front()};
  for (const auto& v : poly) {
    b.min = b.min.cwiseMin(v);
    b.max = b.max.cwiseMax(v);
  }
  return b;
}

template <typename Scalar>
bool all_finite(const PolygonT<Scalar>& poly) {
  return std::all_of(poly.begin(), poly.end(), [](const auto& v) { return v.allFinite(); });
}

}  // namespace crowd
