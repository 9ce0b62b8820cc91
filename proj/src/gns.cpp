#include "trajlab/gns.hpp"

#include <cmath>

namespace trajlab {

double precond_sqnorm(const ParamSet& grads, const ParamSet& v_hat, double eps) {
    if (grads.tensors().size() != v_hat.tensors().size())
        throw ContractError("precond_sqnorm: tensor layout mismatch");
    const double floor = eps * eps;
    double sum = 0.0;
    for (std::size_t t = 0; t < grads.tensors().size(); ++t) {
        const auto& g = grads.tensors()[t].value.raw();
        const auto& v = v_hat.tensors()[t].value.raw();
        if (g.size() != v.size()) throw ContractError("precond_sqnorm: tensor shape mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (v[i] < 0.0) throw ContractError("precond_sqnorm: negative second moment");
            sum += g[i] * g[i] / (v[i] + floor);
        }
    }
    return sum;
}

RawGnsEstimate estimate_step(const GnsSample& s) {
    if (s.b_small >= s.b_big)
        throw ContractError("estimate_step: requires b_small < b_big");
    const double bs = static_cast<double>(s.b_small);
    const double bb = static_cast<double>(s.b_big);
    RawGnsEstimate r;
    r.gnorm2 = (bb * s.sqnorm_big - bs * s.sqnorm_small) / (bb - bs);
    r.tr_noise = (s.sqnorm_small - s.sqnorm_big) / (1.0 / bs - 1.0 / bb);
    r.valid = r.gnorm2 >= 0.0 && r.tr_noise >= 0.0;
    return r;
}

GnsSmoother::GnsSmoother(double halflife_steps) {
    if (!(halflife_steps >= 1.0))
        throw ContractError("GnsSmoother: halflife must be at least one step");
    decay_ = std::exp2(-1.0 / halflife_steps);
}

GnsEstimate GnsSmoother::update(const RawGnsEstimate& raw, double lr, double batch_size) {
    noise_acc_ = decay_ * noise_acc_ + (1.0 - decay_) * raw.tr_noise;
    gnorm_acc_ = decay_ * gnorm_acc_ + (1.0 - decay_) * raw.gnorm2;
    weight_ = decay_ * weight_ + (1.0 - decay_);

    GnsEstimate e;
    e.tr_noise = noise_acc_ / weight_;
    e.gnorm2 = gnorm_acc_ / weight_;
    e.valid = e.gnorm2 > 0.0 && e.tr_noise >= 0.0;
    if (e.valid) e.b_precond = e.tr_noise / e.gnorm2;
    e.scaled_noise = batch_size > 0.0 ? (lr / batch_size) * e.tr_noise : 0.0;
    e.scaled_gnorm2 = lr * e.gnorm2;
    return e;
}

std::vector<GnsEstimate> smooth(const std::vector<RawGnsEstimate>& raw, double halflife_steps) {
    GnsSmoother sm(halflife_steps);
    std::vector<GnsEstimate> out;
    out.reserve(raw.size());
    for (const auto& r : raw) out.push_back(sm.update(r, 0.0, 0.0));
    return out;
}

BatchRegime classify_batch_regime(const std::vector<GnsSeriesPoint>& series) {
    bool any = false, all_above = true, all_below = true;
    for (const auto& p : series) {
        if (!p.valid) continue;
        any = true;
        if (p.b_precond <= p.batch_size) all_above = false;
        if (p.b_precond >= p.batch_size) all_below = false;
    }
    if (!any)
        throw InsufficientDataError("classify_batch_regime: no valid GNS points in the series");
    if (all_above) return BatchRegime::Small;
    if (all_below) return BatchRegime::Large;
    return BatchRegime::Mixed;
}

} // namespace trajlab
