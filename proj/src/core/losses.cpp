#include "eddkit/losses.hpp"

#include "eddkit/errors.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace edd {

namespace {

std::vector<double> resolve_weights(std::span<const double> weights, std::size_t rows, const char* op) {
    if (weights.empty()) return std::vector<double>(rows, rows ? 1.0 / static_cast<double>(rows) : 0.0);
    if (weights.size() != rows)
        throw ShapeError(std::string(op) + ": " + std::to_string(weights.size()) + " row weights for " +
                         std::to_string(rows) + " rows");
    return {weights.begin(), weights.end()};
}

void require_matrix(const Tensor& t, const char* op, const char* what) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": " + what + " must be rank 2, got " + shape_str(t.shape()));
}

// [R x M x K] tensor aligned with an [R x K] prediction.
std::size_t members_of(const Tensor& ensemble, const Tensor& pred, const char* op) {
    if (ensemble.rank() != 3 || ensemble.dim(0) != pred.rows() || ensemble.dim(2) != pred.cols())
        throw ShapeError(std::string(op) + ": ensemble tensor " + shape_str(ensemble.shape()) +
                         " does not align with prediction " + shape_str(pred.shape()));
    if (ensemble.dim(1) < 1) throw ShapeError(std::string(op) + ": ensemble has no members");
    return ensemble.dim(1);
}

void log_softmax_row(std::span<const double> z, std::span<double> out, double temperature = 1.0) {
    double mx = -INFINITY;
    for (double v : z) mx = std::max(mx, v / temperature);
    double s = 0.0;
    for (double v : z) s += std::exp(v / temperature - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] / temperature - lse;
}

// Scalar node whose gradient w.r.t. each input is a fixed tensor scaled by the
// upstream gradient.
Var scalar_node(double value, std::vector<Var> inputs, std::vector<Tensor> grads) {
    return record(Tensor::scalar(value), std::move(inputs), [grads = std::move(grads)](Node& self) {
        const double up = self.grad[0];
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            Node& in = *self.inputs[i];
            if (!in.requires_grad) continue;
            Tensor& g = in.grad_buffer();
            for (std::size_t j = 0; j < g.numel(); ++j) g[j] += up * grads[i][j];
        }
    });
}

struct Eval {
    double value = 0.0;
    Tensor grad;
};

Eval nll_kernel(const Tensor& logits, std::span<const int> targets, double eps, std::span<const double> weights) {
    require_matrix(logits, "nll_loss", "logits");
    const std::size_t rows = logits.rows(), k = logits.cols();
    if (targets.size() != rows)
        throw ShapeError("nll_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                         " rows");
    if (!(eps >= 0.0 && eps < 1.0)) throw InvalidArgument("nll_loss: label smoothing must lie in [0, 1)");
    const auto w = resolve_weights(weights, rows, "nll_loss");
    Eval e{0.0, Tensor(logits.shape(), 0.0)};
    std::vector<double> lp(k);
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= k)
            throw InvalidArgument("nll_loss: target id " + std::to_string(targets[r]) + " outside " +
                                  std::to_string(k) + " classes");
        log_softmax_row(logits.row_span(r), lp);
        double row = (1.0 - eps) * lp[static_cast<std::size_t>(targets[r])];
        if (eps > 0) {
            double s = 0.0;
            for (double v : lp) s += v;
            row += eps / static_cast<double>(k) * s;
        }
        e.value -= w[r] * row;
        for (std::size_t j = 0; j < k; ++j) {
            const double q = eps / static_cast<double>(k) + (static_cast<int>(j) == targets[r] ? 1.0 - eps : 0.0);
            e.grad.at(r, j) = w[r] * (std::exp(lp[j]) - q);
        }
    }
    return e;
}

Eval kl_kernel(const Tensor& logits, const Tensor& teacher, double temperature, std::span<const double> weights) {
    require_matrix(logits, "kd_loss", "logits");
    if (teacher.shape() != logits.shape())
        throw ShapeError("kd_loss: teacher " + shape_str(teacher.shape()) + " vs student " + shape_str(logits.shape()));
    if (!(temperature > 0)) throw InvalidArgument("kd_loss: temperature must be > 0");
    const std::size_t rows = logits.rows(), k = logits.cols();
    const auto w = resolve_weights(weights, rows, "kd_loss");
    Eval e{0.0, Tensor(logits.shape(), 0.0)};
    std::vector<double> lp(k), lt(k), log_teacher(k);
    for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double t = teacher.at(r, j);
            if (!(t >= 0)) throw InvalidArgument("kd_loss: teacher probabilities must be non-negative");
            total += t;
            log_teacher[j] = t > 0 ? std::log(t) : -INFINITY;
        }
        if (std::abs(total - 1.0) > 1e-6) throw InvalidArgument("kd_loss: teacher row not on the simplex");
        log_softmax_row(log_teacher, lt, temperature);
        log_softmax_row(logits.row_span(r), lp, temperature);
        double kl = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double t = std::exp(lt[j]);
            if (t > 0) kl += t * (lt[j] - lp[j]);
            e.grad.at(r, j) = w[r] * (std::exp(lp[j]) - t) / temperature;
        }
        e.value += w[r] * kl;
    }
    return e;
}

Tensor smoothed_log_probs(const Tensor& member_probs) {
    const std::size_t k = member_probs.dim(2);
    const double denom = 1.0 + static_cast<double>(k) * kSimplexSmoothing;
    Tensor out(member_probs.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        if (!(member_probs[i] >= 0)) throw InvalidArgument("dirichlet_edd_loss: negative member probability");
        out[i] = std::log((member_probs[i] + kSimplexSmoothing) / denom);
    }
    return out;
}

Eval dirichlet_kernel(const Tensor& alpha, const Tensor& member_probs, std::span<const double> weights) {
    require_matrix(alpha, "dirichlet_edd_loss", "alpha");
    const std::size_t m = members_of(member_probs, alpha, "dirichlet_edd_loss");
    const std::size_t rows = alpha.rows(), k = alpha.cols();
    const auto w = resolve_weights(weights, rows, "dirichlet_edd_loss");
    const Tensor logp = smoothed_log_probs(member_probs);
    Eval e{0.0, Tensor(alpha.shape(), 0.0)};
    std::vector<double> log_geo(k);
    for (std::size_t r = 0; r < rows; ++r) {
        double alpha0 = 0.0, ln_b = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double a = alpha.at(r, j);
            if (!(a > 0) || !std::isfinite(a))
                throw InvalidArgument("dirichlet_edd_loss: alpha must be positive and finite");
            alpha0 += a;
            ln_b += boost::math::lgamma(a);
            double s = 0.0;
            for (std::size_t mm = 0; mm < m; ++mm) s += logp[(r * m + mm) * k + j];
            log_geo[j] = s / static_cast<double>(m);
        }
        ln_b -= boost::math::lgamma(alpha0);
        double row = ln_b;
        for (std::size_t j = 0; j < k; ++j) row -= alpha.at(r, j) * log_geo[j];
        const double wk = w[r] / static_cast<double>(k);
        e.value += wk * row;
        const double psi0 = boost::math::digamma(alpha0);
        for (std::size_t j = 0; j < k; ++j)
            e.grad.at(r, j) = wk * (boost::math::digamma(alpha.at(r, j)) - psi0 - log_geo[j]);
    }
    return e;
}

struct Eval2 {
    double value = 0.0;
    Tensor grad_mu, grad_sigma;
};

template <bool Laplace>
Eval2 logit_kernel(const Tensor& mu, const Tensor& sigma, const Tensor& logits, std::span<const double> weights) {
    const char* op = Laplace ? "laplace_edd_loss" : "gaussian_edd_loss";
    require_matrix(mu, op, "mu");
    if (sigma.shape() != mu.shape())
        throw ShapeError(std::string(op) + ": sigma " + shape_str(sigma.shape()) + " vs mu " + shape_str(mu.shape()));
    const std::size_t m = members_of(logits, mu, op);
    const std::size_t rows = mu.rows(), k = mu.cols();
    if (!logits.all_finite()) throw InvalidArgument(std::string(op) + ": non-finite ensemble logits");
    const auto w = resolve_weights(weights, rows, op);
    Eval2 e{0.0, Tensor(mu.shape(), 0.0), Tensor(mu.shape(), 0.0)};
    for (std::size_t r = 0; r < rows; ++r) {
        const double wr = w[r] / static_cast<double>(m * k);
        for (std::size_t j = 0; j < k; ++j) {
            const double s = sigma.at(r, j);
            if (!(s > 0)) throw InvalidArgument(std::string(op) + ": sigma must be positive");
            const double u = mu.at(r, j);
            double v = 0.0, gm = 0.0, gs = 0.0;
            for (std::size_t mm = 0; mm < m; ++mm) {
                const double d = logits[(r * m + mm) * k + j] - u;
                if constexpr (Laplace) {
                    v += std::abs(d) / s;
                    gm += d > 0 ? -1.0 / s : (d < 0 ? 1.0 / s : 0.0);
                    gs += -std::abs(d) / (s * s);
                } else {
                    v += d * d / (2.0 * s * s);
                    gm += -d / (s * s);
                    gs += -d * d / (s * s * s);
                }
            }
            v += static_cast<double>(m) * std::log(s);
            gs += static_cast<double>(m) / s;
            e.value += wr * v;
            e.grad_mu.at(r, j) = wr * gm;
            e.grad_sigma.at(r, j) = wr * gs;
        }
    }
    return e;
}

} // namespace

// ---- configs ----------------------------------------------------------------

void KDConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("kd_loss: lambda must lie in [0, 1]");
    if (!(temperature > 0)) throw InvalidArgument("kd_loss: temperature must be > 0");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
        throw InvalidArgument("kd_loss: label smoothing must lie in [0, 1)");
}

void EDDConfig::validate() const {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidArgument("edd: beta must be >= 0");
}

std::string to_string(StudentFamily family) {
    switch (family) {
    case StudentFamily::Kd: return "kd";
    case StudentFamily::Dirichlet: return "edd-dirichlet";
    case StudentFamily::GaussianLogit: return "ledd-gaussian";
    case StudentFamily::LaplaceLogit: return "ledd-laplace";
    }
    return "kd";
}

StudentFamily student_family_from_string(const std::string& s) {
    if (s == "kd") return StudentFamily::Kd;
    if (s == "edd-dirichlet") return StudentFamily::Dirichlet;
    if (s == "ledd-gaussian") return StudentFamily::GaussianLogit;
    if (s == "ledd-laplace") return StudentFamily::LaplaceLogit;
    throw InvalidArgument("unknown student family '" + s + "'");
}

bool is_logit_family(StudentFamily family) noexcept {
    return family == StudentFamily::GaussianLogit || family == StudentFamily::LaplaceLogit;
}

// ---- helpers -----------------------------------------------------------------

Tensor normalize_logits(const Tensor& z) {
    Tensor out = z;
    const std::size_t rows = z.rank() == 3 ? z.dim(0) * z.dim(1) : z.rows();
    const std::size_t k = z.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        std::span<double> row(out.values().data() + r * k, k);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (double& v : row) v -= lse;
    }
    return out;
}

Tensor softmax(const Tensor& z) {
    Tensor out = z;
    const std::size_t k = z.cols();
    const std::size_t rows = k ? z.numel() / k : 0;
    for (std::size_t r = 0; r < rows; ++r) {
        std::span<double> row(out.values().data() + r * k, k);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double& v : row) s += (v = std::exp(v - mx));
        for (double& v : row) v /= s;
    }
    return out;
}

TeacherRows make_teacher_rows(const Tensor& member_logits) {
    if (member_logits.rank() != 3) throw ShapeError("teacher logits must be [R x M x K]");
    TeacherRows t;
    t.member_logits = normalize_logits(member_logits);
    t.member_probs = softmax(member_logits);
    const std::size_t r = member_logits.dim(0), m = member_logits.dim(1), k = member_logits.dim(2);
    t.mean_probs = Tensor::matrix(r, k);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t mm = 0; mm < m; ++mm)
            for (std::size_t j = 0; j < k; ++j)
                t.mean_probs.at(i, j) += t.member_probs[(i * m + mm) * k + j] / static_cast<double>(m);
    return t;
}

// ---- losses ------------------------------------------------------------------

double nll_loss_value(const Tensor& logits, std::span<const int> targets, double smoothing,
                      std::span<const double> weights) {
    return nll_kernel(logits, targets, smoothing, weights).value;
}

Var nll_loss(const Var& logits, std::span<const int> targets, double smoothing, std::span<const double> weights) {
    auto e = nll_kernel(logits.value(), targets, smoothing, weights);
    return scalar_node(e.value, {logits}, {std::move(e.grad)});
}

double kl_term_value(const Tensor& logits, const Tensor& teacher_probs, double temperature,
                     std::span<const double> weights) {
    return kl_kernel(logits, teacher_probs, temperature, weights).value;
}

Var kl_term(const Var& logits, const Tensor& teacher_probs, double temperature, std::span<const double> weights) {
    auto e = kl_kernel(logits.value(), teacher_probs, temperature, weights);
    return scalar_node(e.value, {logits}, {std::move(e.grad)});
}

KDParts kd_loss_value(const Tensor& logits, const Tensor& teacher_probs, std::span<const int> targets,
                      const KDConfig& cfg, std::span<const double> weights) {
    cfg.validate();
    KDParts p;
    p.nll = nll_loss_value(logits, targets, cfg.label_smoothing, weights);
    p.kl = kl_term_value(logits, teacher_probs, cfg.temperature, weights);
    p.total = cfg.lambda * p.nll + (1.0 - cfg.lambda) * p.kl;
    return p;
}

Var kd_loss(const Var& logits, const Tensor& teacher_probs, std::span<const int> targets, const KDConfig& cfg,
            std::span<const double> weights) {
    cfg.validate();
    auto nll = nll_kernel(logits.value(), targets, cfg.label_smoothing, weights);
    auto kl = kl_kernel(logits.value(), teacher_probs, cfg.temperature, weights);
    Tensor g = nll.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = cfg.lambda * nll.grad[i] + (1.0 - cfg.lambda) * kl.grad[i];
    return scalar_node(cfg.lambda * nll.value + (1.0 - cfg.lambda) * kl.value, {logits}, {std::move(g)});
}

double dirichlet_edd_loss_value(const Tensor& alpha, const Tensor& member_probs, std::span<const double> weights) {
    return dirichlet_kernel(alpha, member_probs, weights).value;
}

Var dirichlet_edd_loss(const Var& alpha, const Tensor& member_probs, std::span<const double> weights) {
    auto e = dirichlet_kernel(alpha.value(), member_probs, weights);
    return scalar_node(e.value, {alpha}, {std::move(e.grad)});
}

double laplace_edd_loss_value(const Tensor& mu, const Tensor& sigma, const Tensor& member_logits,
                              std::span<const double> weights) {
    return logit_kernel<true>(mu, sigma, member_logits, weights).value;
}

Var laplace_edd_loss(const Var& mu, const Var& sigma, const Tensor& member_logits, std::span<const double> weights) {
    auto e = logit_kernel<true>(mu.value(), sigma.value(), member_logits, weights);
    return scalar_node(e.value, {mu, sigma}, {std::move(e.grad_mu), std::move(e.grad_sigma)});
}

double gaussian_edd_loss_value(const Tensor& mu, const Tensor& sigma, const Tensor& member_logits,
                               std::span<const double> weights) {
    return logit_kernel<false>(mu, sigma, member_logits, weights).value;
}

Var gaussian_edd_loss(const Var& mu, const Var& sigma, const Tensor& member_logits, std::span<const double> weights) {
    auto e = logit_kernel<false>(mu.value(), sigma.value(), member_logits, weights);
    return scalar_node(e.value, {mu, sigma}, {std::move(e.grad_mu), std::move(e.grad_sigma)});
}

CombinedParts combined_ledd_loss_value(const Tensor& mu, const Tensor& sigma, const TeacherRows& teacher,
                                       std::span<const int> targets, const KDConfig& kd, const EDDConfig& edd,
                                       std::span<const double> weights) {
    edd.validate();
    if (!is_logit_family(edd.family))
        throw InvalidArgument("combined_ledd_loss: family '" + to_string(edd.family) + "' is not a logit-space family");
    CombinedParts p;
    p.kd = kd_loss_value(mu, teacher.mean_probs, targets, kd, weights);
    p.edd = edd.family == StudentFamily::LaplaceLogit
                ? laplace_edd_loss_value(mu, sigma, teacher.member_logits, weights)
                : gaussian_edd_loss_value(mu, sigma, teacher.member_logits, weights);
    p.total = p.kd.total + edd.beta * p.edd;
    return p;
}

Var combined_ledd_loss(const Var& mu, const Var& sigma, const TeacherRows& teacher, std::span<const int> targets,
                       const KDConfig& kd, const EDDConfig& edd, std::span<const double> weights) {
    edd.validate();
    if (!is_logit_family(edd.family))
        throw InvalidArgument("combined_ledd_loss: family '" + to_string(edd.family) + "' is not a logit-space family");
    Var kd_part = kd_loss(mu, teacher.mean_probs, targets, kd, weights);
    Var edd_part = edd.family == StudentFamily::LaplaceLogit
                       ? laplace_edd_loss(mu, sigma, teacher.member_logits, weights)
                       : gaussian_edd_loss(mu, sigma, teacher.member_logits, weights);
    return add(kd_part, scale(edd_part, edd.beta));
}

} // namespace edd
