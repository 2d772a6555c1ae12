#include "scanet/optimizer.hpp"

#include <cmath>

namespace scanet {

OptimizerState OptimizerState::for_params(const std::vector<Tensor>& params) {
    OptimizerState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
        st.m.emplace_back(p.data().size(), 0.0f);
        st.v.emplace_back(p.data().size(), 0.0f);
    }
    return st;
}

void adamw_step(std::vector<Tensor>& params, OptimizerState& state,
                const AdamWConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ArgumentError("adamw_step: state has " + std::to_string(state.m.size()) +
                            " slots for " + std::to_string(params.size()) + " parameters");
    }
    if (cfg.beta1 < 0.0f || cfg.beta1 >= 1.0f || cfg.beta2 < 0.0f || cfg.beta2 >= 1.0f) {
        throw ArgumentError("adamw_step: betas must lie in [0, 1)");
    }
    state.step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& w = params[pi].data();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != w.size()) {
            throw ArgumentError("adamw_step: moment shape mismatch at parameter " +
                                std::to_string(pi));
        }
        const bool has_grad = params[pi].has_grad();
        const auto& g = params[pi].impl()->grad;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
            // Per-element arithmetic in double; f32 only at the stores.
            double wd_w = static_cast<double>(w[i]);
            wd_w -= static_cast<double>(cfg.lr) * cfg.weight_decay * wd_w;
            const double mi = b1 * m[i] + (1.0 - b1) * gi;
            const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            wd_w -= static_cast<double>(cfg.lr) * mhat / (std::sqrt(vhat) + cfg.eps);
            w[i] = static_cast<float>(wd_w);
        }
    }
}

}  // namespace scanet
