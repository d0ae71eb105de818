#pragma once

#include "eddkit/autograd.hpp"
#include "eddkit/rng.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace edd {

inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kFirstContentToken = 3;

// One supervised item. Classifier tasks use `features` and a single target;
// sequence tasks use `src` and `tgt` (tgt ends with EOS, BOS is implicit).
struct Example {
    std::vector<double> features;
    std::vector<int> src;
    std::vector<int> tgt;
};

using Dataset = std::vector<Example>;

// Output rows of a batch are stacked: example i owns rows
// [row_offsets[i], row_offsets[i + 1]).
struct ModelOutput {
    Var logits;
    Var log_scale; // undefined unless the model carries a scale head
    std::vector<std::size_t> row_offsets;
};

class Model {
public:
    virtual ~Model() = default;

    virtual std::string kind() const = 0;
    virtual std::size_t num_classes() const = 0;
    virtual bool has_scale_head() const = 0;
    virtual ModelOutput forward(std::span<const Example* const> batch) const = 0;
    virtual std::unique_ptr<Model> clone() const = 0;

    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    void zero_grad();
    std::size_t parameter_count() const;

protected:
    Model() = default;
    Model(const Model& other);
    Model& operator=(const Model&) = delete;

    std::size_t add_parameter(std::string name, Tensor init);
    const Var& param(std::size_t i) const { return params_[i].var; }

private:
    std::vector<Parameter> params_;
};

// ---- classifier ------------------------------------------------------------

struct MlpConfig {
    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden{32, 32};
    std::size_t num_classes = 3;
    bool scale_head = false;
};

// Feed-forward classifier with tanh hidden units. The optional scale head is a
// second projection from the last hidden layer giving log-scales, initialised
// to zero so every scale starts at 1.
class MlpModel final : public Model {
public:
    MlpModel(const MlpConfig& config, RngStream rng);

    std::string kind() const override { return "mlp"; }
    std::size_t num_classes() const override { return config_.num_classes; }
    bool has_scale_head() const override { return config_.scale_head; }
    const MlpConfig& config() const noexcept { return config_; }

    ModelOutput forward_matrix(const Var& inputs) const;
    ModelOutput forward(std::span<const Example* const> batch) const override;
    std::unique_ptr<Model> clone() const override;

private:
    MlpModel(const MlpModel&) = default;

    MlpConfig config_;
    std::vector<std::size_t> weight_ids_, bias_ids_;
    std::size_t scale_w_ = 0, scale_b_ = 0;
};

// [B x D] inputs -> [B x K] logits (+ log-scales when present).
ModelOutput forward_classifier(const MlpModel& model, const Tensor& inputs);

// ---- sequence model --------------------------------------------------------

struct SeqModelConfig {
    std::size_t vocab = 64;
    std::size_t d_model = 32;
    std::size_t hidden = 48;
    bool scale_head = false;
};

// Encoder: token + sinusoidal position embedding through one tanh layer.
// Decoder: tanh recurrence over the shifted target, single-head dot-product
// attention over the encoder states, tanh combination layer, vocabulary
// projection. Row l only sees tgt[<l].
class TinySeqModel final : public Model {
public:
    TinySeqModel(const SeqModelConfig& config, RngStream rng);

    struct StepOutput {
        Var hidden;
        Var logits;    // [1 x V]
        Var log_scale; // [1 x V] or undefined
    };

    std::string kind() const override { return "seq"; }
    std::size_t num_classes() const override { return config_.vocab; }
    bool has_scale_head() const override { return config_.scale_head; }
    const SeqModelConfig& config() const noexcept { return config_; }

    Var encode(std::span<const int> src) const;
    Var initial_hidden() const;
    StepOutput step(const Var& encoded, const Var& hidden, int input_token, std::size_t position) const;

    // Teacher-forced per-step outputs for one pair: [L x V].
    ModelOutput forward_seq(std::span<const int> src, std::span<const int> tgt) const;
    ModelOutput forward(std::span<const Example* const> batch) const override;
    std::unique_ptr<Model> clone() const override;

private:
    TinySeqModel(const TinySeqModel&) = default;
    void check_tokens(std::span<const int> ids, const char* what) const;

    SeqModelConfig config_;
    std::size_t src_embed_, tgt_embed_, enc_w_, enc_b_, dec_wx_, dec_wh_, dec_b_, query_w_, comb_w_, comb_b_,
        out_w_, out_b_, scale_w_ = 0, scale_b_ = 0;
};

Tensor sinusoidal_position(std::size_t position, std::size_t dim);

} // namespace edd
