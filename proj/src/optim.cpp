// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#include "epitwin/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "epitwin/errors.hpp"

namespace epitwin::nn {

Algorithm algorithm_from_string(const std::string& s) {
    if (s == "adam") return Algorithm::Adam;
    if (s == "nadam") return Algorithm::Nadam;
    throw DomainError(fmt::format("unknown optimizer '{}' (expected adam or nadam)", s));
}

const char* to_string(Algorithm a) { return a == Algorithm::Adam ? "adam" : "nadam"; }

void OptimConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning_rate must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw DomainError("beta1 must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw DomainError("beta2 must lie in (0, 1)");
    if (!(epsilon >= 0.0)) throw DomainError("epsilon must be >= 0");
}

void optimizer_step(WeightStore& store, const Gradients& grads, const OptimConfig& cfg) {
    const std::int64_t t = store.step + 1;
    const double b1t = std::pow(cfg.beta1, static_cast<double>(t));
    const double b1t_next = b1t * cfg.beta1;
    const double b2t = std::pow(cfg.beta2, static_cast<double>(t));

    for (const auto& name : store.names()) {
        WeightStore::Entry& e = store.entry(name);
        if (!e.trainable) continue;
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (g.shape != e.value.shape) {
            throw ShapeError(fmt::format("gradient for '{}' has shape {}, parameter has {}", name, shape_string(g.shape),
                                         shape_string(e.value.shape)));
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double v_hat = e.v[i] / (1.0 - b2t);
            double m_hat = 0.0;
            if (cfg.algorithm == Algorithm::Adam) {
                m_hat = e.m[i] / (1.0 - b1t);
            } else {
                // Nesterov look-ahead: blend the next bias-corrected moment with
                // the current gradient.
                m_hat = cfg.beta1 * e.m[i] / (1.0 - b1t_next) + (1.0 - cfg.beta1) * g[i] / (1.0 - b1t);
            }
            e.value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
    store.step = t;
}

}  // namespace epitwin::nn
