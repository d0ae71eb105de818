#include "eddkit/decode.hpp"

#include "eddkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace edd {

namespace {

struct Live {
    std::vector<int> tokens;
    double log_prob = 0.0;
    std::vector<Var> hidden; // per member
};

double normalized(double log_prob, std::size_t length, double penalty) {
    return log_prob / std::pow(static_cast<double>(length), penalty);
}

} // namespace

std::size_t default_max_len(std::size_t src_len) noexcept { return 2 * src_len + 8; }

Hypothesis decode(std::span<const TinySeqModel* const> members, std::span<const int> src,
                  const DecodeOptions& options) {
    if (options.beam < 1) throw InvalidArgument("decode: beam must be >= 1");
    if (members.empty()) throw InvalidArgument("decode: no models given");
    const std::size_t vocab = members.front()->num_classes();
    for (const auto* m : members)
        if (m->num_classes() != vocab) throw InvalidArgument("decode: members disagree on vocabulary size");
    const std::size_t max_len = options.max_len.value_or(default_max_len(src.size()));
    if (max_len < 1) throw InvalidArgument("decode: max_len must be >= 1");

    NoGradGuard no_grad;
    std::vector<Var> encoded;
    for (const auto* m : members) encoded.push_back(m->encode(src));

    std::vector<Live> live(1);
    for (const auto* m : members) live[0].hidden.push_back(m->initial_hidden());
    std::vector<Hypothesis> finished;
    const double inv_m = 1.0 / static_cast<double>(members.size());

    for (std::size_t pos = 0; pos < max_len && !live.empty(); ++pos) {
        const bool forced = pos + 1 == max_len;
        struct Candidate {
            std::size_t parent;
            int token;
            double log_prob;
        };
        std::vector<Candidate> cands;
        std::vector<std::vector<Var>> next_hidden(live.size());
        for (std::size_t i = 0; i < live.size(); ++i) {
            const int input = live[i].tokens.empty() ? kBos : live[i].tokens.back();
            std::vector<double> mean(vocab, 0.0);
            for (std::size_t m = 0; m < members.size(); ++m) {
                auto s = members[m]->step(encoded[m], live[i].hidden[m], input, pos);
                next_hidden[i].push_back(s.hidden);
                auto z = s.logits.value().values();
                const double mx = *std::max_element(z.begin(), z.end());
                double norm = 0.0;
                for (double v : z) norm += std::exp(v - mx);
                for (std::size_t k = 0; k < vocab; ++k) mean[k] += inv_m * std::exp(z[k] - mx) / norm;
            }
            if (forced) {
                cands.push_back({i, kEos, live[i].log_prob + std::log(mean[kEos])});
            } else {
                for (std::size_t k = 0; k < vocab; ++k)
                    cands.push_back({i, static_cast<int>(k), live[i].log_prob + std::log(mean[k])});
            }
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) { return a.log_prob > b.log_prob; });
        if (cands.size() > options.beam) cands.resize(options.beam);

        std::vector<Live> next;
        for (const auto& c : cands) {
            std::vector<int> toks = live[c.parent].tokens;
            toks.push_back(c.token);
            if (c.token == kEos) {
                Hypothesis h;
                h.log_prob = c.log_prob;
                h.score = normalized(c.log_prob, toks.size(), options.length_penalty);
                h.truncated = forced;
                h.tokens = std::move(toks);
                finished.push_back(std::move(h));
            } else {
                next.push_back({std::move(toks), c.log_prob, next_hidden[c.parent]});
            }
        }
        live = std::move(next);
        if (finished.size() >= options.beam) break;
    }

    // The forced step closes every live hypothesis, so this cannot be empty.
    if (finished.empty()) throw InvalidArgument("decode: no hypothesis produced");
    return *std::max_element(finished.begin(), finished.end(),
                             [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
}

Hypothesis decode(const TinySeqModel& model, std::span<const int> src, const DecodeOptions& options) {
    const TinySeqModel* one[1] = {&model};
    return decode(std::span<const TinySeqModel* const>(one), src, options);
}

} // namespace edd
