#include "eddkit/nn.hpp"

#include "eddkit/errors.hpp"

#include <cmath>

namespace edd {

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::matrix(fan_in, fan_out);
    for (double& v : t.values()) v = rng.uniform(-a, a);
    return t;
}

Tensor embedding_init(std::size_t vocab, std::size_t dim, RngStream& rng) {
    Tensor t = Tensor::matrix(vocab, dim);
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    for (double& v : t.values()) v = s * rng.normal();
    return t;
}

} // namespace

// ---- Model -----------------------------------------------------------------

Model::Model(const Model& other) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) params_.push_back({p.name, Var(p.var.value(), true)});
}

std::size_t Model::add_parameter(std::string name, Tensor init) {
    params_.push_back({std::move(name), Var(std::move(init), true)});
    return params_.size() - 1;
}

void Model::zero_grad() {
    for (auto& p : params_) p.var.mutable_grad().fill(0.0);
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().numel();
    return n;
}

// ---- MlpModel --------------------------------------------------------------

MlpModel::MlpModel(const MlpConfig& config, RngStream rng) : config_(config) {
    if (config.input_dim == 0 || config.num_classes == 0)
        throw InvalidArgument("MlpModel: input_dim and num_classes must be positive");
    std::vector<std::size_t> widths{config.input_dim};
    widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
    widths.push_back(config.num_classes);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        if (widths[i + 1] == 0) throw InvalidArgument("MlpModel: zero-width layer " + std::to_string(i));
        const auto tag = "layer" + std::to_string(i);
        weight_ids_.push_back(add_parameter(tag + ".weight", xavier(widths[i], widths[i + 1], rng)));
        bias_ids_.push_back(add_parameter(tag + ".bias", Tensor::matrix(1, widths[i + 1])));
    }
    if (config.scale_head) {
        const std::size_t last = widths[widths.size() - 2];
        scale_w_ = add_parameter("scale.weight", Tensor::matrix(last, config.num_classes));
        scale_b_ = add_parameter("scale.bias", Tensor::matrix(1, config.num_classes));
    }
}

ModelOutput MlpModel::forward_matrix(const Var& inputs) const {
    if (inputs.value().rank() != 2 || inputs.value().cols() != config_.input_dim)
        throw ShapeError("forward_classifier: input dimension 1 is " +
                         std::to_string(inputs.value().rank() == 2 ? inputs.value().cols() : 0) +
                         " but the first layer expects " + std::to_string(config_.input_dim));
    Var h = inputs;
    const std::size_t layers = weight_ids_.size();
    for (std::size_t i = 0; i + 1 < layers; ++i) h = tanh(add_row(matmul(h, param(weight_ids_[i])), param(bias_ids_[i])));
    ModelOutput out;
    out.logits = add_row(matmul(h, param(weight_ids_.back())), param(bias_ids_.back()));
    if (config_.scale_head) out.log_scale = add_row(matmul(h, param(scale_w_)), param(scale_b_));
    const std::size_t b = inputs.value().rows();
    out.row_offsets.resize(b + 1);
    for (std::size_t i = 0; i <= b; ++i) out.row_offsets[i] = i;
    return out;
}

ModelOutput MlpModel::forward(std::span<const Example* const> batch) const {
    Tensor x = Tensor::matrix(batch.size(), config_.input_dim);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& f = batch[i]->features;
        if (f.size() != config_.input_dim)
            throw ShapeError("forward_classifier: example " + std::to_string(i) + " has " + std::to_string(f.size()) +
                             " features, expected " + std::to_string(config_.input_dim));
        for (std::size_t j = 0; j < f.size(); ++j) x.at(i, j) = f[j];
    }
    return forward_matrix(constant(std::move(x)));
}

std::unique_ptr<Model> MlpModel::clone() const { return std::unique_ptr<Model>(new MlpModel(*this)); }

ModelOutput forward_classifier(const MlpModel& model, const Tensor& inputs) {
    return model.forward_matrix(constant(inputs));
}

// ---- TinySeqModel ----------------------------------------------------------

Tensor sinusoidal_position(std::size_t position, std::size_t dim) {
    Tensor t = Tensor::matrix(1, dim);
    for (std::size_t i = 0; i < dim; ++i) {
        const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
        const double angle = static_cast<double>(position) * rate;
        t[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
    return t;
}

TinySeqModel::TinySeqModel(const SeqModelConfig& config, RngStream rng) : config_(config) {
    if (config.vocab <= static_cast<std::size_t>(kFirstContentToken))
        throw InvalidArgument("TinySeqModel: vocabulary must exceed the 3 reserved ids");
    if (config.d_model == 0 || config.hidden == 0) throw InvalidArgument("TinySeqModel: zero width");
    const std::size_t v = config.vocab, d = config.d_model, h = config.hidden;
    src_embed_ = add_parameter("src_embed", embedding_init(v, d, rng));
    tgt_embed_ = add_parameter("tgt_embed", embedding_init(v, d, rng));
    enc_w_ = add_parameter("encoder.weight", xavier(d, d, rng));
    enc_b_ = add_parameter("encoder.bias", Tensor::matrix(1, d));
    dec_wx_ = add_parameter("decoder.input_weight", xavier(d, h, rng));
    dec_wh_ = add_parameter("decoder.hidden_weight", xavier(h, h, rng));
    dec_b_ = add_parameter("decoder.bias", Tensor::matrix(1, h));
    query_w_ = add_parameter("attention.query", xavier(h, d, rng));
    comb_w_ = add_parameter("combine.weight", xavier(h + d, h, rng));
    comb_b_ = add_parameter("combine.bias", Tensor::matrix(1, h));
    out_w_ = add_parameter("output.weight", xavier(h, v, rng));
    out_b_ = add_parameter("output.bias", Tensor::matrix(1, v));
    if (config.scale_head) {
        scale_w_ = add_parameter("scale.weight", Tensor::matrix(h, v));
        scale_b_ = add_parameter("scale.bias", Tensor::matrix(1, v));
    }
}

void TinySeqModel::check_tokens(std::span<const int> ids, const char* what) const {
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab)
            throw InvalidArgument(std::string("forward_seq: ") + what + " token id " + std::to_string(id) +
                                  " outside vocabulary of " + std::to_string(config_.vocab));
}

Var TinySeqModel::encode(std::span<const int> src) const {
    if (src.empty()) throw InvalidArgument("forward_seq: empty source sequence");
    check_tokens(src, "source");
    const std::size_t d = config_.d_model;
    Tensor pos = Tensor::matrix(src.size(), d);
    for (std::size_t j = 0; j < src.size(); ++j) {
        const Tensor p = sinusoidal_position(j, d);
        std::copy(p.values().begin(), p.values().end(), pos.row_span(j).begin());
    }
    Var x = add(gather_rows(param(src_embed_), src), constant(std::move(pos)));
    return tanh(add_row(matmul(x, param(enc_w_)), param(enc_b_)));
}

Var TinySeqModel::initial_hidden() const { return constant(Tensor::matrix(1, config_.hidden)); }

TinySeqModel::StepOutput TinySeqModel::step(const Var& encoded, const Var& hidden, int input_token,
                                            std::size_t position) const {
    const int ids[1] = {input_token};
    check_tokens(ids, "target");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.d_model));
    Var x = add(gather_rows(param(tgt_embed_), ids), constant(sinusoidal_position(position, config_.d_model)));
    Var h = tanh(add_row(add(matmul(x, param(dec_wx_)), matmul(hidden, param(dec_wh_))), param(dec_b_)));
    Var query = matmul(h, param(query_w_));
    Var attn = softmax_rows(scale(matmul_nt(query, encoded), inv_sqrt_d));
    Var context = matmul(attn, encoded);
    Var o = tanh(add_row(matmul(concat_cols(h, context), param(comb_w_)), param(comb_b_)));
    StepOutput out;
    out.hidden = h;
    out.logits = add_row(matmul(o, param(out_w_)), param(out_b_));
    if (config_.scale_head) out.log_scale = add_row(matmul(o, param(scale_w_)), param(scale_b_));
    return out;
}

ModelOutput TinySeqModel::forward_seq(std::span<const int> src, std::span<const int> tgt) const {
    if (tgt.empty()) throw InvalidArgument("forward_seq: empty target sequence");
    check_tokens(tgt, "target");
    Var enc = encode(src);
    Var h = initial_hidden();
    std::vector<Var> logits, scales;
    logits.reserve(tgt.size());
    for (std::size_t l = 0; l < tgt.size(); ++l) {
        const int input = l == 0 ? kBos : tgt[l - 1];
        auto s = step(enc, h, input, l);
        h = s.hidden;
        logits.push_back(s.logits);
        if (config_.scale_head) scales.push_back(s.log_scale);
    }
    ModelOutput out;
    out.logits = stack_rows(logits);
    if (config_.scale_head) out.log_scale = stack_rows(scales);
    out.row_offsets = {0, tgt.size()};
    return out;
}

ModelOutput TinySeqModel::forward(std::span<const Example* const> batch) const {
    std::vector<Var> logits, scales;
    ModelOutput out;
    out.row_offsets.push_back(0);
    for (const Example* ex : batch) {
        auto one = forward_seq(ex->src, ex->tgt);
        logits.push_back(one.logits);
        if (config_.scale_head) scales.push_back(one.log_scale);
        out.row_offsets.push_back(out.row_offsets.back() + ex->tgt.size());
    }
    out.logits = stack_rows(logits);
    if (config_.scale_head) out.log_scale = stack_rows(scales);
    return out;
}

std::unique_ptr<Model> TinySeqModel::clone() const { return std::unique_ptr<Model>(new TinySeqModel(*this)); }

} // namespace edd
