#include "aconv/envelope.hpp"

#include <cmath>
#include <string>

#include "aconv/errors.hpp"

namespace aconv {

EnvelopeGrid make_grid(int n) {
  if (n <= 0) throw ArgumentError("envelope grid size must be positive, got " + std::to_string(n));
  EnvelopeGrid grid;
  grid.n = static_cast<std::size_t>(n);
  grid.gx.resize(n, n);
  grid.gy.resize(n, n);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l) {
      grid.gx(k, l) = (k + 0.5) / n;
      grid.gy(k, l) = (l + 0.5) / n;
    }
  grid.sq_dist = (grid.gx - grid.mu_x).square() + (grid.gy - grid.mu_y).square();
  return grid;
}

Eigen::ArrayXXd unnormalized_envelope(const EnvelopeGrid& grid, double sigma) {
  if (!(sigma > 0)) throw ArgumentError("aperture must be positive, got " + std::to_string(sigma));
  return (-grid.sq_dist / (2.0 * sigma * sigma)).exp();
}

EnvelopeEval envelope(const EnvelopeGrid& grid, double sigma, ScaleDerivative mode) {
  const Eigen::ArrayXXd e = unnormalized_envelope(grid, sigma);
  const Eigen::ArrayXXd de = e * grid.sq_dist / (sigma * sigma * sigma);
  const double mass = e.square().sum();

  EnvelopeEval out;
  out.sigma = sigma;
  out.scale = static_cast<double>(grid.n) / std::sqrt(mass);
  out.u = out.scale * e;
  if (mode == ScaleDerivative::normalized) {
    // ds/dsigma = -s * sum(e de) / sum(e^2)
    out.du_dsigma = out.scale * (de - e * ((e * de).sum() / mass));
  } else {
    out.du_dsigma = out.scale * de;
  }
  return out;
}

double envelope_gradient_fd_check(const EnvelopeGrid& grid, double sigma, double eps) {
  if (!(eps > 0) || !(sigma > 2 * eps))
    throw ArgumentError("finite-difference check needs sigma > 2 eps > 0");
  const auto centre = envelope(grid, sigma);
  const Eigen::ArrayXXd fd = (envelope(grid, sigma + eps).u - envelope(grid, sigma - eps).u) / (2 * eps);
  return ((centre.du_dsigma - fd).abs() / (fd.abs() + 1e-12)).maxCoeff();
}

}  // namespace aconv
