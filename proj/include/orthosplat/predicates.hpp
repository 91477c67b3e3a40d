#pragma once

// Orientation and in-circle tests with exact signs. A floating-point
// evaluation is accepted when it clears a forward error bound (Shewchuk's
// stage-A bounds); otherwise the determinant is re-evaluated in exact
// rational arithmetic.

#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <boost/multiprecision/cpp_int.hpp>

namespace orthosplat::predicates {

namespace detail {

constexpr double kEpsilon = std::numeric_limits<double>::epsilon() / 2;  // 2^-53
constexpr double kOrientBound = (3.0 + 16.0 * kEpsilon) * kEpsilon;
constexpr double kInCircleBound = (10.0 + 96.0 * kEpsilon) * kEpsilon;

using Exact = boost::multiprecision::cpp_rational;

inline int sign_of(const Exact& v) { return v.sign(); }
inline int sign_of(double v) { return (v > 0) - (v < 0); }

inline int orient_exact(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  const Exact acx = Exact(a.x()) - Exact(c.x());
  const Exact bcx = Exact(b.x()) - Exact(c.x());
  const Exact acy = Exact(a.y()) - Exact(c.y());
  const Exact bcy = Exact(b.y()) - Exact(c.y());
  return sign_of(Exact(acx * bcy - acy * bcx));
}

inline int incircle_exact(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                          const Eigen::Vector2d& d) {
  const Exact adx = Exact(a.x()) - Exact(d.x()), ady = Exact(a.y()) - Exact(d.y());
  const Exact bdx = Exact(b.x()) - Exact(d.x()), bdy = Exact(b.y()) - Exact(d.y());
  const Exact cdx = Exact(c.x()) - Exact(d.x()), cdy = Exact(c.y()) - Exact(d.y());
  const Exact alift = adx * adx + ady * ady;
  const Exact blift = bdx * bdx + bdy * bdy;
  const Exact clift = cdx * cdx + cdy * cdy;
  const Exact det = alift * (bdx * cdy - bdy * cdx) + blift * (cdx * ady - cdy * adx) +
                    clift * (adx * bdy - ady * bdx);
  return sign_of(det);
}

}  // namespace detail

// +1 if a, b, c are counter-clockwise (in a y-up frame), -1 if clockwise,
// 0 if collinear.
inline int orient2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  const double detleft = (a.x() - c.x()) * (b.y() - c.y());
  const double detright = (a.y() - c.y()) * (b.x() - c.x());
  const double det = detleft - detright;
  const double detsum = std::abs(detleft) + std::abs(detright);
  if (std::abs(det) > detail::kOrientBound * detsum) return detail::sign_of(det);
  return detail::orient_exact(a, b, c);
}

// +1 if d lies strictly inside the circle through a, b, c (which must be
// counter-clockwise), -1 if outside, 0 if cocircular.
inline int incircle(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c,
                    const Eigen::Vector2d& d) {
  const double adx = a.x() - d.x(), ady = a.y() - d.y();
  const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const double cdx = c.x() - d.x(), cdy = c.y() - d.y();

  const double bdxcdy = bdx * cdy, cdxbdy = cdx * bdy;
  const double alift = adx * adx + ady * ady;
  const double cdxady = cdx * ady, adxcdy = adx * cdy;
  const double blift = bdx * bdx + bdy * bdy;
  const double adxbdy = adx * bdy, bdxady = bdx * ady;
  const double clift = cdx * cdx + cdy * cdy;

  const double det = alift * (bdxcdy - cdxbdy) + blift * (cdxady - adxcdy) + clift * (adxbdy - bdxady);
  const double permanent = (std::abs(bdxcdy) + std::abs(cdxbdy)) * alift +
                           (std::abs(cdxady) + std::abs(adxcdy)) * blift +
                           (std::abs(adxbdy) + std::abs(bdxady)) * clift;
  if (std::abs(det) > detail::kInCircleBound * permanent) return detail::sign_of(det);
  return detail::incircle_exact(a, b, c, d);
}

}  // namespace orthosplat::predicates
