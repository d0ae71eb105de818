#pragma once

#include "eddkit/autograd.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace edd {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::int64_t step = 0;
};

// Bias-corrected Adam update; zeroes every gradient afterwards. Throws
// DivergenceError naming the parameter if any gradient is non-finite.
void adam_step(std::span<Parameter> params, AdamState& state, double lr);

struct LrSchedule {
    enum class Kind { InverseSqrtWarmup, CyclicTriangular, Constant };

    Kind kind = Kind::Constant;
    // inverse-sqrt: factor * (step * d_model)^-0.5 * min(1, step / warmup)^1.5
    std::int64_t warmup = 4000;
    double d_model = 512;
    double factor = 1.0;
    // cyclic triangle: eta_min at the first step of every cycle, eta_max half a period later
    double eta_min = 1e-4;
    double eta_max = 1e-3;
    std::int64_t period = 100;
    // constant
    double lr = 1e-3;

    static LrSchedule inverse_sqrt(std::int64_t warmup, double d_model, double factor = 1.0);
    static LrSchedule cyclic(double eta_min, double eta_max, std::int64_t period);
    static LrSchedule constant(double lr);

    void validate() const;
};

double lr_at(const LrSchedule& schedule, std::int64_t step);

std::string to_string(LrSchedule::Kind kind);
LrSchedule::Kind schedule_kind_from_string(const std::string& s);

} // namespace edd
