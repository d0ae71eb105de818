#pragma once

#include "eddkit/nn.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace edd {

struct DecodeOptions {
    std::size_t beam = 4;
    double length_penalty = 0.6;
    // Cap on generated tokens including EOS; defaults to 2 * |src| + 8.
    std::optional<std::size_t> max_len;
};

struct Hypothesis {
    std::vector<int> tokens; // always ends with EOS
    double log_prob = 0.0;   // sum of token log-probabilities
    double score = 0.0;      // log_prob / length^length_penalty
    // EOS was forced at the length cap because the hypothesis never chose it.
    bool truncated = false;
};

std::size_t default_max_len(std::size_t src_len) noexcept;

// Beam search over one model or an ensemble. Member sets score each step with
// the log of the member-averaged distribution; a single model uses the
// softmax of its logit head (the mean logits for logit-space students). At the
// length cap every live hypothesis is closed with EOS and flagged truncated.
Hypothesis decode(std::span<const TinySeqModel* const> members, std::span<const int> src,
                  const DecodeOptions& options);
Hypothesis decode(const TinySeqModel& model, std::span<const int> src, const DecodeOptions& options);

} // namespace edd
