#include "aconv/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>

#include "aconv/errors.hpp"

namespace aconv {

double sample_mean(std::span<const double> v) {
  double total = 0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
  const double mean = sample_mean(v);
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

TTestResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ArgumentError("welch_ttest needs at least two samples per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = sample_variance(a) / na, vb = sample_variance(b) / nb;
  const double diff = sample_mean(a) - sample_mean(b);
  TTestResult out;
  if (va + vb == 0) {
    if (diff == 0) return {0.0, 1.0, na + nb - 2};
    out.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    out.p = 0.0;
    out.dof = na + nb - 2;
    return out;
  }
  out.t = diff / std::sqrt(va + vb);
  out.dof = (va + vb) * (va + vb) / (va * va / (na - 1) + vb * vb / (nb - 1));
  const boost::math::students_t dist(out.dof);
  out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  return out;
}

}  // namespace aconv
