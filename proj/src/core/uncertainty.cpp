#include "eddkit/uncertainty.hpp"

#include "eddkit/distributions.hpp"
#include "eddkit/errors.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>

namespace edd {

namespace {

void require_member_set(const MemberSet& members) {
    if (members.rank() != 2 || members.rows() < 1 || members.cols() < 1)
        throw ShapeError("member set must be a non-empty [M x K] matrix, got " + shape_str(members.shape()));
}

void require_length(std::size_t rows, std::span<const int> decoded, const char* op) {
    if (rows != decoded.size())
        throw ShapeError(std::string(op) + ": " + std::to_string(rows) + " steps for a hypothesis of length " +
                         std::to_string(decoded.size()));
}

} // namespace

std::vector<double> predictive(const MemberSet& members) {
    require_member_set(members);
    const std::size_t m = members.rows(), k = members.cols();
    std::vector<double> mean(k, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) mean[j] += members.at(i, j);
    for (double& v : mean) v /= static_cast<double>(m);
    return mean;
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

double mutual_information(const MemberSet& members) {
    const auto mean = predictive(members);
    double mean_entropy = 0.0;
    for (std::size_t i = 0; i < members.rows(); ++i) mean_entropy += entropy(members.row_span(i));
    mean_entropy /= static_cast<double>(members.rows());
    const double mi = entropy(mean) - mean_entropy;
    if (mi < -1e-9) throw InvalidArgument("mutual_information: negative value " + std::to_string(mi));
    // Anything inside the rounding band is cancellation residue.
    return mi < 1e-9 ? 0.0 : mi;
}

UncertaintyScores reduce_steps(std::span<const MemberSet> steps) {
    if (steps.empty()) throw InvalidArgument("uncertainty: empty sequence");
    UncertaintyScores s;
    for (const auto& members : steps) {
        s.total += entropy(predictive(members));
        s.knowledge += mutual_information(members);
    }
    const double l = static_cast<double>(steps.size());
    s.total /= l;
    s.knowledge /= l;
    s.data = s.total - s.knowledge;
    return s;
}

UncertaintyScores sequence_scores(const Tensor& member_logits, std::span<const int> decoded) {
    if (member_logits.rank() != 3) throw ShapeError("sequence_scores: member logits must be [L x M x K]");
    require_length(member_logits.dim(0), decoded, "sequence_scores");
    const std::size_t l = member_logits.dim(0), m = member_logits.dim(1), k = member_logits.dim(2);
    const Tensor probs = softmax(member_logits);
    std::vector<MemberSet> steps;
    steps.reserve(l);
    for (std::size_t i = 0; i < l; ++i) {
        MemberSet ms = Tensor::matrix(m, k);
        std::copy_n(probs.values().begin() + static_cast<std::ptrdiff_t>(i * m * k), m * k, ms.values().begin());
        steps.push_back(std::move(ms));
    }
    return reduce_steps(steps);
}

UncertaintyScores logit_sample_scores(const Tensor& mu, const Tensor& sigma, StudentFamily family, std::size_t samples,
                                      RngStream rng) {
    if (samples < 2) throw InvalidArgument("student_sample_scores: need at least 2 samples");
    if (!is_logit_family(family))
        throw InvalidArgument("student_sample_scores: family '" + to_string(family) + "' is not a logit-space family");
    if (mu.rank() != 2 || sigma.shape() != mu.shape())
        throw ShapeError("student_sample_scores: mu/sigma must be matching [L x K] matrices");
    const std::size_t l = mu.rows(), k = mu.cols();
    std::vector<MemberSet> steps;
    steps.reserve(l);
    for (std::size_t i = 0; i < l; ++i) {
        std::vector<double> m(mu.row_span(i).begin(), mu.row_span(i).end());
        std::vector<double> s(sigma.row_span(i).begin(), sigma.row_span(i).end());
        RngStream step_rng = rng.derive(static_cast<std::uint64_t>(i));
        const Samples draws = family == StudentFamily::LaplaceLogit
                                  ? sample(DiagLaplaceParams{std::move(m), std::move(s)}, samples, step_rng)
                                  : sample(DiagGaussianParams{std::move(m), std::move(s)}, samples, step_rng);
        MemberSet ms = Tensor::matrix(samples, k);
        for (std::size_t j = 0; j < samples; ++j) std::copy(draws[j].begin(), draws[j].end(), ms.row_span(j).begin());
        steps.push_back(softmax(ms));
    }
    return reduce_steps(steps);
}

UncertaintyScores student_sample_scores(const TinySeqModel& student, StudentFamily family, std::span<const int> src,
                                        std::span<const int> decoded, std::size_t samples, RngStream rng) {
    if (!student.has_scale_head()) throw InvalidArgument("student_sample_scores: student has no scale head");
    NoGradGuard no_grad;
    const auto out = student.forward_seq(src, decoded);
    Tensor sigma = out.log_scale.value();
    for (double& v : sigma.values()) v = std::max(std::exp(v), kSigmaFloor);
    return logit_sample_scores(out.logits.value(), sigma, family, samples, rng);
}

UncertaintyScores dirichlet_step_scores(std::span<const double> alpha) {
    double alpha0 = 0.0;
    for (double a : alpha) {
        if (!(a > 0) || !std::isfinite(a)) throw InvalidArgument("dirichlet_scores: alpha must be positive and finite");
        alpha0 += a;
    }
    std::vector<double> mean(alpha.size());
    double expected_entropy = 0.0;
    const double psi0 = boost::math::digamma(alpha0 + 1.0);
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        mean[k] = alpha[k] / alpha0;
        expected_entropy -= mean[k] * (boost::math::digamma(alpha[k] + 1.0) - psi0);
    }
    UncertaintyScores s;
    s.total = entropy(mean);
    s.knowledge = std::max(s.total - expected_entropy, 0.0);
    s.data = s.total - s.knowledge;
    return s;
}

UncertaintyScores dirichlet_scores(const Tensor& alpha, std::span<const int> decoded) {
    if (alpha.rank() != 2) throw ShapeError("dirichlet_scores: alpha must be [L x K]");
    require_length(alpha.rows(), decoded, "dirichlet_scores");
    UncertaintyScores s;
    for (std::size_t i = 0; i < alpha.rows(); ++i) {
        const auto step = dirichlet_step_scores(alpha.row_span(i));
        s.total += step.total;
        s.knowledge += step.knowledge;
    }
    const double l = static_cast<double>(alpha.rows());
    s.total /= l;
    s.knowledge /= l;
    s.data = s.total - s.knowledge;
    return s;
}

std::vector<double> deterministic_predictive(std::span<const double> mu) {
    const Tensor p = softmax(Tensor::row(mu));
    return {p.values().begin(), p.values().end()};
}

} // namespace edd
