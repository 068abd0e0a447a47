#include "dkd/optim.hpp"

#include <cmath>

#include "dkd/error.hpp"

namespace dkd {

void Gradients::zero() {
    for (auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
}

Gradients Gradients::zeros_like(const std::vector<std::vector<double>*>& params) {
    Gradients g;
    g.tensors.reserve(params.size());
    for (const auto* p : params) g.tensors.emplace_back(p->size(), 0.0);
    return g;
}

AdamWState AdamWState::like(const std::vector<std::vector<double>*>& params,
                            AdamWConfig config) {
    AdamWState state;
    state.config = config;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto* p : params) {
        state.m.emplace_back(p->size(), 0.0);
        state.v.emplace_back(p->size(), 0.0);
    }
    return state;
}

void adamw_step(AdamWState& state, const std::vector<std::vector<double>*>& params,
                const Gradients& grads, double lr) {
    if (params.size() != grads.tensors.size() || params.size() != state.m.size()) {
        throw Error(ErrorKind::shape, "adamw_step: tensor count mismatch");
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t]->size() != grads.tensors[t].size() ||
            params[t]->size() != state.m[t].size()) {
            throw Error(ErrorKind::shape, "adamw_step: tensor shape mismatch");
        }
        for (double g : grads.tensors[t]) {
            if (!std::isfinite(g)) {
                throw Error(ErrorKind::numeric, "adamw_step: non-finite gradient, step rejected");
            }
        }
    }

    const auto& cfg = state.config;
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& theta = *params[t];
        const auto& g = grads.tensors[t];
        auto& m = state.m[t];
        auto& v = state.v[t];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) +
                              cfg.weight_decay * theta[i]);
        }
    }
}

double lr_at(std::size_t step, std::size_t warmup_steps, double peak_lr,
             std::size_t total_steps) {
    if (warmup_steps > 0 && step <= warmup_steps) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (step >= total_steps) return 0.0;
    if (total_steps <= warmup_steps) return peak_lr; // degenerate all-warmup schedule
    return peak_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup_steps);
}

Gradients finite_diff_grad(const std::function<double()>& loss,
                           const std::vector<std::vector<double>*>& params,
                           double step) {
    if (!(step > 0.0)) throw Error(ErrorKind::usage, "finite_diff_grad: step must be > 0");
    Gradients out = Gradients::zeros_like(params);
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& theta = *params[t];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + step;
            const double up = loss();
            theta[i] = saved - step;
            const double down = loss();
            theta[i] = saved;
            out.tensors[t][i] = (up - down) / (2.0 * step);
        }
    }
    return out;
}

} // namespace dkd
