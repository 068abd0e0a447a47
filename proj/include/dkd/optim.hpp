#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace dkd {

// Per-tensor gradient buffers, positionally aligned with a parameter
// container's tensors() order.
struct Gradients {
    std::vector<std::vector<double>> tensors;

    void zero();
    static Gradients zeros_like(const std::vector<std::vector<double>*>& params);
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    AdamWConfig config;
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    static AdamWState like(const std::vector<std::vector<double>*>& params,
                           AdamWConfig config = {});
};

// Decoupled-weight-decay Adam update:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// Non-finite gradients reject the step before any mutation.
void adamw_step(AdamWState& state, const std::vector<std::vector<double>*>& params,
                const Gradients& grads, double lr);

// Linear warmup 0 -> peak over warmup_steps, then linear decay peak -> 0 at
// total_steps.
double lr_at(std::size_t step, std::size_t warmup_steps, double peak_lr,
             std::size_t total_steps);

// Central-difference gradient oracle: (f(x+e) - f(x-e)) / (2e) per coordinate.
// Mutates each coordinate in place and restores it, so `loss` may close over
// the same parameter storage.
Gradients finite_diff_grad(const std::function<double()>& loss,
                           const std::vector<std::vector<double>*>& params,
                           double step);

} // namespace dkd
