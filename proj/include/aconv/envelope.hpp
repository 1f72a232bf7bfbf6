#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace aconv {

/// Cell-centred sampling grid of an n x n kernel on [0,1]^2, centre fixed at (0.5, 0.5).
struct EnvelopeGrid {
  std::size_t n = 0;
  Eigen::ArrayXXd gx;       // row coordinate (k + 0.5) / n
  Eigen::ArrayXXd gy;       // column coordinate (l + 0.5) / n
  Eigen::ArrayXXd sq_dist;  // |g - mu|^2
  double mu_x = 0.5;
  double mu_y = 0.5;
};

EnvelopeGrid make_grid(int n);

/// How the aperture derivative treats the normaliser s(sigma).
enum class ScaleDerivative {
  normalized,           // d/dsigma of s(sigma) * e(sigma), the value the forward pass uses
  scale_held_constant,  // s * d e / dsigma with s frozen
};

/// Normalised Gaussian envelope u = s * exp(-|g - mu|^2 / (2 sigma^2)) with sum(u^2) = n^2.
struct EnvelopeEval {
  Eigen::ArrayXXd u;
  Eigen::ArrayXXd du_dsigma;
  double scale = 1.0;
  double sigma = 0.0;
};

EnvelopeEval envelope(const EnvelopeGrid& grid, double sigma,
                      ScaleDerivative mode = ScaleDerivative::normalized);

/// The raw Gaussian with s = 1; its squared mass shrinks with sigma.
Eigen::ArrayXXd unnormalized_envelope(const EnvelopeGrid& grid, double sigma);

/// Largest relative deviation between the analytic du/dsigma and a central
/// difference of the normalised envelope, |a - fd| / (|fd| + 1e-12).
double envelope_gradient_fd_check(const EnvelopeGrid& grid, double sigma, double eps);

}  // namespace aconv
