#pragma once

// Training objectives. Every loss is a weighted sum over rows (one row per
// prediction step); when no weights are given each row gets 1/L, which is the
// per-sequence 1/L normalisation. Batched callers pass w_r = 1 / (L_i * B) so
// a batch is the mean over sequences. The Var versions carry analytic
// gradients; the *_value versions return plain numbers for logging.

#include "eddkit/autograd.hpp"

#include <span>
#include <string>

namespace edd {

struct KDConfig {
    double lambda = 0.5;
    double temperature = 0.8;
    double label_smoothing = 0.1;
    void validate() const;
};

enum class StudentFamily { Kd, Dirichlet, GaussianLogit, LaplaceLogit };

std::string to_string(StudentFamily family);
StudentFamily student_family_from_string(const std::string& s);
bool is_logit_family(StudentFamily family) noexcept;

struct EDDConfig {
    double beta = 0.1;
    StudentFamily family = StudentFamily::LaplaceLogit;
    void validate() const;
};

// Teacher information aligned row-for-row with a student's outputs.
struct TeacherRows {
    Tensor member_logits; // [R x M x K], each member row normalised to LogSumExp 0
    Tensor member_probs;  // [R x M x K]
    Tensor mean_probs;    // [R x K], arithmetic mean over members
};

TeacherRows make_teacher_rows(const Tensor& member_logits);

inline constexpr double kSimplexSmoothing = 1e-8;

// z - LogSumExp(z), row-wise for rank-2 input.
Tensor normalize_logits(const Tensor& z);
Tensor softmax(const Tensor& z);

// -(sum_r w_r)[(1 - eps) ln p_{r,y_r} + (eps / K) sum_k ln p_{r,k}]
double nll_loss_value(const Tensor& logits, std::span<const int> targets, double smoothing,
                      std::span<const double> weights = {});
Var nll_loss(const Var& logits, std::span<const int> targets, double smoothing, std::span<const double> weights = {});

// sum_r w_r KL(t_r || p_r) where t_r = softmax(ln(teacher_r) / T), p_r = softmax(z_r / T).
double kl_term_value(const Tensor& logits, const Tensor& teacher_probs, double temperature,
                     std::span<const double> weights = {});
Var kl_term(const Var& logits, const Tensor& teacher_probs, double temperature, std::span<const double> weights = {});

struct KDParts {
    double nll = 0.0;
    double kl = 0.0;
    double total = 0.0;
};

KDParts kd_loss_value(const Tensor& logits, const Tensor& teacher_probs, std::span<const int> targets,
                      const KDConfig& cfg, std::span<const double> weights = {});
Var kd_loss(const Var& logits, const Tensor& teacher_probs, std::span<const int> targets, const KDConfig& cfg,
            std::span<const double> weights = {});

// (1/K) sum_r w_r [ln B(alpha_r) - sum_k alpha_{r,k} ln pi~_{r,k}], pi~ the
// geometric mean of the smoothed member probabilities.
double dirichlet_edd_loss_value(const Tensor& alpha, const Tensor& member_probs, std::span<const double> weights = {});
Var dirichlet_edd_loss(const Var& alpha, const Tensor& member_probs, std::span<const double> weights = {});

// (1/(M K)) sum_{r,m,k} w_r (|z - mu| / sigma + ln sigma)
double laplace_edd_loss_value(const Tensor& mu, const Tensor& sigma, const Tensor& member_logits,
                              std::span<const double> weights = {});
Var laplace_edd_loss(const Var& mu, const Var& sigma, const Tensor& member_logits,
                     std::span<const double> weights = {});

// (1/(M K)) sum_{r,m,k} w_r ((z - mu)^2 / (2 sigma^2) + ln sigma)
double gaussian_edd_loss_value(const Tensor& mu, const Tensor& sigma, const Tensor& member_logits,
                               std::span<const double> weights = {});
Var gaussian_edd_loss(const Var& mu, const Var& sigma, const Tensor& member_logits,
                      std::span<const double> weights = {});

struct CombinedParts {
    KDParts kd;
    double edd = 0.0;
    double total = 0.0;
};

// kd_loss on softmax(mu) plus beta times the family's logit-space loss.
CombinedParts combined_ledd_loss_value(const Tensor& mu, const Tensor& sigma, const TeacherRows& teacher,
                                       std::span<const int> targets, const KDConfig& kd, const EDDConfig& edd,
                                       std::span<const double> weights = {});
Var combined_ledd_loss(const Var& mu, const Var& sigma, const TeacherRows& teacher, std::span<const int> targets,
                       const KDConfig& kd, const EDDConfig& edd, std::span<const double> weights = {});

} // namespace edd
