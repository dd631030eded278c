#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rigidloc/predictor.hpp"

namespace rigidloc {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    static AdamState zeros(std::size_t n) { return AdamState{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

/// One in-place Adam update with decoupled weight decay:
///   p ← p − lr·wd·p, then the bias-corrected moment step.
/// Throws std::domain_error on a non-finite gradient, naming the parameter
/// block when `layout` is given.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg,
               const ParamLayout* layout = nullptr);

}  // namespace rigidloc
