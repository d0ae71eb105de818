#include "eddkit/optim.hpp"

#include "eddkit/errors.hpp"

#include <algorithm>
#include <cmath>

namespace edd {

void adam_step(std::span<Parameter> params, AdamState& state, double lr) {
    for (auto& p : params)
        if (!p.var.mutable_grad().all_finite())
            throw DivergenceError("adam_step: non-finite gradient in parameter '" + p.name + "'", state.step,
                                  p.name);

    if (state.first_moment.size() != params.size()) {
        state.first_moment.clear();
        state.second_moment.clear();
        for (auto& p : params) {
            state.first_moment.emplace_back(p.var.shape(), 0.0);
            state.second_moment.emplace_back(p.var.shape(), 0.0);
        }
    }
    ++state.step;
    const auto& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params[i].var.mutable_value();
        Tensor& g = params[i].var.mutable_grad();
        Tensor& m = state.first_moment[i];
        Tensor& v = state.second_moment[i];
        if (m.shape() != w.shape())
            throw ShapeError("adam_step: moment shape mismatch for parameter '" + params[i].name + "'");
        for (std::size_t j = 0; j < w.numel(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
        }
        g.fill(0.0);
    }
}

LrSchedule LrSchedule::inverse_sqrt(std::int64_t warmup, double d_model, double factor) {
    LrSchedule s;
    s.kind = Kind::InverseSqrtWarmup;
    s.warmup = warmup;
    s.d_model = d_model;
    s.factor = factor;
    return s;
}

LrSchedule LrSchedule::cyclic(double eta_min, double eta_max, std::int64_t period) {
    LrSchedule s;
    s.kind = Kind::CyclicTriangular;
    s.eta_min = eta_min;
    s.eta_max = eta_max;
    s.period = period;
    return s;
}

LrSchedule LrSchedule::constant(double lr) {
    LrSchedule s;
    s.kind = Kind::Constant;
    s.lr = lr;
    return s;
}

void LrSchedule::validate() const {
    switch (kind) {
    case Kind::InverseSqrtWarmup:
        if (warmup < 1) throw InvalidArgument("schedule: warmup must be >= 1");
        if (!(d_model > 0) || !(factor > 0)) throw InvalidArgument("schedule: d_model and factor must be > 0");
        break;
    case Kind::CyclicTriangular:
        if (!(eta_min > 0) || !(eta_min < eta_max))
            throw InvalidArgument("schedule: cyclic rates need 0 < eta_min < eta_max");
        if (period < 2) throw InvalidArgument("schedule: cyclic period must be >= 2 steps");
        break;
    case Kind::Constant:
        if (!(lr > 0)) throw InvalidArgument("schedule: constant lr must be > 0");
        break;
    }
}

double lr_at(const LrSchedule& s, std::int64_t step) {
    if (step < 1) throw InvalidArgument("lr_at: step must be >= 1");
    switch (s.kind) {
    case LrSchedule::Kind::InverseSqrtWarmup: {
        const double st = static_cast<double>(step);
        const double ramp = std::min(1.0, st / static_cast<double>(s.warmup));
        return s.factor * std::pow(st * s.d_model, -0.5) * std::pow(ramp, 1.5);
    }
    case LrSchedule::Kind::CyclicTriangular: {
        const double phase = static_cast<double>((step - 1) % s.period) / static_cast<double>(s.period);
        const double tri = phase < 0.5 ? 2.0 * phase : 2.0 - 2.0 * phase;
        return s.eta_min + (s.eta_max - s.eta_min) * tri;
    }
    case LrSchedule::Kind::Constant:
        return s.lr;
    }
    return s.lr;
}

std::string to_string(LrSchedule::Kind kind) {
    switch (kind) {
    case LrSchedule::Kind::InverseSqrtWarmup: return "inverse-sqrt-warmup";
    case LrSchedule::Kind::CyclicTriangular: return "cyclic-triangular";
    case LrSchedule::Kind::Constant: return "constant";
    }
    return "constant";
}

LrSchedule::Kind schedule_kind_from_string(const std::string& s) {
    if (s == "inverse-sqrt-warmup") return LrSchedule::Kind::InverseSqrtWarmup;
    if (s == "cyclic-triangular") return LrSchedule::Kind::CyclicTriangular;
    if (s == "constant") return LrSchedule::Kind::Constant;
    throw InvalidArgument("unknown schedule kind '" + s + "'");
}

} // namespace edd
