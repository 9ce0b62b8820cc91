#include "trajlab/optim.hpp"

#include <cmath>

namespace trajlab {

void OptimConfig::validate() const {
    if (!(peak_lr >= 0.0)) throw InputError("OptimConfig: peak_lr must be non-negative");
    if (!(weight_decay >= 0.0)) throw InputError("OptimConfig: weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw InputError("OptimConfig: beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw InputError("OptimConfig: beta2 must be in [0,1)");
    if (!(adam_eps > 0.0)) throw InputError("OptimConfig: adam_eps must be positive");
    if (!(clip_norm > 0.0)) throw InputError("OptimConfig: clip_norm must be positive");
}

AdamState AdamState::init(const ParamSet& params) {
    AdamState st;
    st.m = params.zeros_like();
    st.v = params.zeros_like();
    st.step = 0;
    return st;
}

ClipResult clip_global_norm(ParamSet& grads, double clip_norm) {
    double sq = 0.0;
    for (const auto& nt : grads.tensors())
        for (double g : nt.value.raw()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("clip_global_norm: non-finite gradient norm");

    ClipResult r;
    r.raw_norm = norm;
    // Tolerance-gated so that re-clipping an already clipped set is a no-op.
    if (norm > clip_norm * (1.0 + 1e-12)) {
        r.scale = clip_norm / norm;
        for (auto& nt : grads.tensors())
            for (auto& g : nt.value.raw()) g *= r.scale;
    }
    return r;
}

void adamw_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr_t,
                const OptimConfig& cfg) {
    if (!(lr_t >= 0.0)) throw ContractError("adamw_step: lr_t must be non-negative");
    if (params.tensors().size() != grads.tensors().size())
        throw ContractError("adamw_step: gradient layout does not match parameters");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (std::size_t t = 0; t < params.tensors().size(); ++t) {
        auto& w = params.tensors()[t].value.raw();
        const auto& g = grads.tensors()[t].value.raw();
        auto& m = state.m.tensors()[t].value.raw();
        auto& v = state.v.tensors()[t].value.raw();
        if (w.size() != g.size())
            throw ContractError("adamw_step: tensor shape mismatch at " + params.tensors()[t].name);

        bool decay;
        switch (cfg.decay_mask) {
            case OptimConfig::DecayMask::All: decay = true; break;
            case OptimConfig::DecayMask::None: decay = false; break;
            default: decay = params.tensors()[t].decay; break;
        }
        const double decay_factor = decay ? lr_t * cfg.weight_decay : 0.0;

        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            // Decay is decoupled and acts on the pre-update weight.
            w[i] = w[i] - lr_t * m_hat / (std::sqrt(v_hat) + cfg.adam_eps) - decay_factor * w[i];
        }
    }
}

ParamSet bias_corrected_v(const AdamState& state, const OptimConfig& cfg) {
    ParamSet out = state.v;
    if (state.step == 0) return out; // all zeros; the eps floor covers P^{-1}
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& nt : out.tensors())
        for (auto& x : nt.value.raw()) x /= bc2;
    return out;
}

void LrSchedule::validate() const {
    if (!(peak_lr >= 0.0)) throw InputError("LrSchedule: peak_lr must be non-negative");
    if (total_tokens == 0) throw InputError("LrSchedule: total_tokens must be positive");
    const std::uint64_t decay = kind == Kind::Wsd ? decay_tokens : 0;
    if (warmup_tokens + decay > total_tokens)
        throw InputError("LrSchedule: warmup_tokens + decay_tokens exceed total_tokens");
}

double lr_at(const LrSchedule& s, std::uint64_t tokens_consumed) {
    if (tokens_consumed > s.total_tokens)
        throw InputError("lr_at: tokens beyond the schedule total");
    const auto tok = static_cast<double>(tokens_consumed);
    if (s.warmup_tokens > 0 && tokens_consumed < s.warmup_tokens)
        return s.peak_lr * tok / static_cast<double>(s.warmup_tokens);
    if (s.kind == LrSchedule::Kind::Wsd && s.decay_tokens > 0) {
        const std::uint64_t decay_start = s.total_tokens - s.decay_tokens;
        if (tokens_consumed > decay_start)
            return s.peak_lr * static_cast<double>(s.total_tokens - tokens_consumed) /
                   static_cast<double>(s.decay_tokens);
    }
    return s.peak_lr;
}

void BsSchedule::validate() const {
    if (kind == Kind::Fixed) {
        if (batch == 0) throw InputError("BsSchedule: batch must be positive");
    } else {
        if (b_small == 0 || b_large == 0)
            throw InputError("BsSchedule: batch sizes must be positive");
        if (b_small >= b_large)
            throw InputError("BsSchedule: Type2Switch requires b_small < b_large");
    }
}

std::size_t batch_size_at(const BsSchedule& s, std::uint64_t tokens_consumed) {
    if (s.kind == BsSchedule::Kind::Fixed) return s.batch;
    return tokens_consumed >= s.switch_tokens ? s.b_large : s.b_small;
}

} // namespace trajlab
