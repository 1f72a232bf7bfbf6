#pragma once

#include <span>

namespace aconv {

struct TTestResult {
  double t = 0;
  double p = 1;
  double dof = 0;
};

/// Two-tailed Welch (unequal variance) t-test of mean(a) - mean(b), with
/// Welch-Satterthwaite degrees of freedom.
TTestResult welch_ttest(std::span<const double> a, std::span<const double> b);

double sample_mean(std::span<const double> v);
double sample_variance(std::span<const double> v);

}  // namespace aconv
