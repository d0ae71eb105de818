#pragma once

#include "eddkit/losses.hpp"
#include "eddkit/nn.hpp"
#include "eddkit/rng.hpp"

#include <span>
#include <vector>

namespace edd {

// Nats. total = knowledge + data.
struct UncertaintyScores {
    double total = 0.0;
    double knowledge = 0.0;
    double data = 0.0;
};

// M probability vectors over K classes for one prediction context, as [M x K].
using MemberSet = Tensor;

std::vector<double> predictive(const MemberSet& members);
// -sum p ln p with 0 ln 0 = 0.
double entropy(std::span<const double> p);
// Entropy of the mean minus mean member entropy. Values within 1e-9 of zero
// are reported as exactly 0; anything below -1e-9 throws.
double mutual_information(const MemberSet& members);

// Token-mean chain-rule reduction over per-step member sets.
UncertaintyScores reduce_steps(std::span<const MemberSet> steps);

// member_logits is [L x M x K] computed on the decoded hypothesis with a
// shared back-history; decoded supplies L.
UncertaintyScores sequence_scores(const Tensor& member_logits, std::span<const int> decoded);

// Per step: S draws from the diagonal logit distribution, softmaxed and
// reduced as a member set. mu/sigma are [L x K].
UncertaintyScores logit_sample_scores(const Tensor& mu, const Tensor& sigma, StudentFamily family, std::size_t samples,
                                      RngStream rng);

// Teacher-forces the student on the decoded hypothesis, then samples.
UncertaintyScores student_sample_scores(const TinySeqModel& student, StudentFamily family, std::span<const int> src,
                                        std::span<const int> decoded, std::size_t samples, RngStream rng);

// alpha is [L x K]; total via the expected categorical alpha/alpha0, knowledge
// via the digamma closed form of the expected entropy.
UncertaintyScores dirichlet_scores(const Tensor& alpha, std::span<const int> decoded);
UncertaintyScores dirichlet_step_scores(std::span<const double> alpha);

// Softmax of the mean logits.
std::vector<double> deterministic_predictive(std::span<const double> mu);

} // namespace edd
