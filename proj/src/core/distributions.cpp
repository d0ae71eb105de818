#include "eddkit/distributions.hpp"

#include "eddkit/errors.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace edd {

namespace {

void check_scale(std::span<const double> mu, std::span<const double> sigma, const char* what) {
    if (mu.size() != sigma.size())
        throw ShapeError(std::string(what) + ": mu has " + std::to_string(mu.size()) + " entries, sigma has " +
                         std::to_string(sigma.size()));
    for (std::size_t k = 0; k < sigma.size(); ++k)
        if (!(sigma[k] > 0) || !std::isfinite(sigma[k]))
            throw InvalidArgument(std::string(what) + ": sigma[" + std::to_string(k) + "] must be positive and finite");
}

void check_dim(std::size_t expected, std::size_t got, const char* what) {
    if (expected != got)
        throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) + " dimensions, got " +
                         std::to_string(got));
}

std::size_t check_samples(std::span<const std::vector<double>> samples, const char* what) {
    if (samples.size() < 2) throw InvalidArgument(std::string(what) + ": need at least 2 samples");
    const std::size_t k = samples.front().size();
    for (const auto& s : samples) check_dim(k, s.size(), what);
    return k;
}

} // namespace

void DirichletParams::validate() const {
    if (alpha.empty()) throw InvalidArgument("Dirichlet: empty alpha");
    for (std::size_t k = 0; k < alpha.size(); ++k)
        if (!(alpha[k] > 0) || !std::isfinite(alpha[k]))
            throw InvalidArgument("Dirichlet: alpha[" + std::to_string(k) + "] must be positive and finite");
}

void DiagGaussianParams::validate() const { check_scale(mu, sigma, "DiagGaussian"); }
void DiagLaplaceParams::validate() const { check_scale(mu, sigma, "DiagLaplace"); }

double dirichlet_log_pdf(const DirichletParams& p, std::span<const double> pi) {
    p.validate();
    check_dim(p.alpha.size(), pi.size(), "dirichlet_log_pdf");
    double total = 0.0, alpha0 = 0.0, lp = 0.0;
    for (std::size_t k = 0; k < pi.size(); ++k) {
        if (!(pi[k] > 0))
            throw InvalidArgument("dirichlet_log_pdf: pi[" + std::to_string(k) + "] must be > 0 (smooth first)");
        total += pi[k];
        alpha0 += p.alpha[k];
        lp += (p.alpha[k] - 1.0) * std::log(pi[k]) - boost::math::lgamma(p.alpha[k]);
    }
    if (std::abs(total - 1.0) > 1e-6) throw InvalidArgument("dirichlet_log_pdf: pi does not sum to 1");
    return lp + boost::math::lgamma(alpha0);
}

double laplace_log_pdf(const DiagLaplaceParams& p, std::span<const double> z) {
    p.validate();
    check_dim(p.mu.size(), z.size(), "laplace_log_pdf");
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += -std::log(2.0 * p.sigma[k]) - std::abs(z[k] - p.mu[k]) / p.sigma[k];
    return s;
}

double gaussian_log_pdf(const DiagGaussianParams& p, std::span<const double> z) {
    p.validate();
    check_dim(p.mu.size(), z.size(), "gaussian_log_pdf");
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double d = (z[k] - p.mu[k]) / p.sigma[k];
        s += -0.5 * std::log(2.0 * std::numbers::pi) - std::log(p.sigma[k]) - 0.5 * d * d;
    }
    return s;
}

Samples sample(const DiagLaplaceParams& p, std::size_t n, RngStream rng) {
    p.validate();
    if (n < 1) throw InvalidArgument("sample: n must be >= 1");
    Samples out(n, std::vector<double>(p.mu.size()));
    for (auto& z : out)
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = rng.laplace(p.mu[k], p.sigma[k]);
    return out;
}

Samples sample(const DiagGaussianParams& p, std::size_t n, RngStream rng) {
    p.validate();
    if (n < 1) throw InvalidArgument("sample: n must be >= 1");
    Samples out(n, std::vector<double>(p.mu.size()));
    for (auto& z : out)
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = p.mu[k] + p.sigma[k] * rng.normal();
    return out;
}

DiagLaplaceParams fit_laplace_mle(std::span<const std::vector<double>> samples, double sigma_floor) {
    const std::size_t dims = check_samples(samples, "fit_laplace_mle");
    const std::size_t m = samples.size();
    DiagLaplaceParams p{std::vector<double>(dims), std::vector<double>(dims)};
    std::vector<double> col(m);
    for (std::size_t k = 0; k < dims; ++k) {
        for (std::size_t i = 0; i < m; ++i) col[i] = samples[i][k];
        std::sort(col.begin(), col.end());
        const double med = m % 2 ? col[m / 2] : 0.5 * (col[m / 2 - 1] + col[m / 2]);
        double mad = 0.0;
        for (double v : col) mad += std::abs(v - med);
        p.mu[k] = med;
        p.sigma[k] = std::max(mad / static_cast<double>(m), sigma_floor);
    }
    return p;
}

DiagGaussianParams fit_gaussian_mle(std::span<const std::vector<double>> samples, double sigma_floor) {
    const std::size_t dims = check_samples(samples, "fit_gaussian_mle");
    const double m = static_cast<double>(samples.size());
    DiagGaussianParams p{std::vector<double>(dims), std::vector<double>(dims)};
    for (std::size_t k = 0; k < dims; ++k) {
        double mean = 0.0;
        for (const auto& s : samples) mean += s[k];
        mean /= m;
        double var = 0.0;
        for (const auto& s : samples) var += (s[k] - mean) * (s[k] - mean);
        p.mu[k] = mean;
        p.sigma[k] = std::max(std::sqrt(var / m), sigma_floor);
    }
    return p;
}

} // namespace edd
