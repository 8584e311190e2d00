#pragma once

#include <cmath>
#include <span>
#include <string>

#include <boost/math/special_functions/beta.hpp>

#include "idsp/error.hpp"

namespace idsp {

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // unbiased
  std::size_t n = 0;
};

inline Moments moments(std::span<const double> x) {
  Moments m;
  m.n = x.size();
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(m.n);
  for (double v : x) m.var += (v - m.mean) * (v - m.mean);
  m.var /= static_cast<double>(m.n - 1);
  return m;
}

/// Two-sided p-value of Student's t with `df` degrees of freedom:
/// P(|T| >= |t|) = I_{df / (df + t^2)}(df / 2, 1 / 2).
inline double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) throw NumericError("student_t: df must be positive");
  if (t == 0.0) return 1.0;
  const double x = df / (df + t * t);
  return boost::math::ibeta(0.5 * df, 0.5, x);
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
inline WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw DataError("welch_t: each group needs at least 2 values (got " + std::to_string(a.size()) +
                    " and " + std::to_string(b.size()) + ")");
  }
  const Moments ma = moments(a);
  const Moments mb = moments(b);
  if (ma.var == 0.0 || mb.var == 0.0) throw DataError("welch_t: zero-variance group");
  const double qa = ma.var / static_cast<double>(ma.n);
  const double qb = mb.var / static_cast<double>(mb.n);
  WelchResult r;
  r.t = (ma.mean - mb.mean) / std::sqrt(qa + qb);
  r.df = (qa + qb) * (qa + qb) /
         (qa * qa / static_cast<double>(ma.n - 1) + qb * qb / static_cast<double>(mb.n - 1));
  r.p = student_t_two_sided(r.t, r.df);
  return r;
}

}  // namespace idsp
