#pragma once

#include "eddkit/rng.hpp"

#include <span>
#include <vector>

namespace edd {

inline constexpr double kSigmaFloor = 1e-6;

// Distribution over the probability simplex, alpha_k > 0.
struct DirichletParams {
    std::vector<double> alpha;
    void validate() const;
};

// Diagonal distributions over logit space: per-dimension location and scale.
struct DiagGaussianParams {
    std::vector<double> mu;
    std::vector<double> sigma; // standard deviations
    void validate() const;
};

struct DiagLaplaceParams {
    std::vector<double> mu;
    std::vector<double> sigma;
    void validate() const;
};

using Samples = std::vector<std::vector<double>>;

// pi must lie on the open simplex (entries > 0, sum 1 within 1e-6).
double dirichlet_log_pdf(const DirichletParams& p, std::span<const double> pi);
// sum_k -ln(2 sigma_k) - |z_k - mu_k| / sigma_k
double laplace_log_pdf(const DiagLaplaceParams& p, std::span<const double> z);
// sum_k -0.5 ln(2 pi sigma_k^2) - (z_k - mu_k)^2 / (2 sigma_k^2)
double gaussian_log_pdf(const DiagGaussianParams& p, std::span<const double> z);

// Laplace draws use z = mu - sigma sgn(u) ln(1 - 2|u|), u ~ U(-1/2, 1/2).
Samples sample(const DiagLaplaceParams& p, std::size_t n, RngStream rng);
// Gaussian draws use Box-Muller.
Samples sample(const DiagGaussianParams& p, std::size_t n, RngStream rng);

// Per-dimension median (midpoint of the central pair for even counts) and
// mean absolute deviation about it, floored at sigma_floor.
DiagLaplaceParams fit_laplace_mle(std::span<const std::vector<double>> samples, double sigma_floor = kSigmaFloor);
// Per-dimension mean and biased standard deviation, same floor.
DiagGaussianParams fit_gaussian_mle(std::span<const std::vector<double>> samples, double sigma_floor = kSigmaFloor);

} // namespace edd
