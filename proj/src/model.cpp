#include "trajlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace trajlab {

namespace {
constexpr double kGeluKappa = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
} // namespace

double gelu(double x) {
    const double t = kGeluKappa * (x + kGeluCubic * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(t));
}

double gelu_derivative(double x) {
    const double t = kGeluKappa * (x + kGeluCubic * x * x * x);
    const double th = std::tanh(t);
    const double sech2 = 1.0 - th * th;
    return 0.5 * (1.0 + th) + 0.5 * x * sech2 * kGeluKappa * (1.0 + 3.0 * kGeluCubic * x * x);
}

void ModelConfig::validate() const {
    if (vocab_size < 2) throw InputError("ModelConfig: vocab_size must be at least 2");
    if (context_k < 1) throw InputError("ModelConfig: context_k must be at least 1");
    if (embed_dim < 1) throw InputError("ModelConfig: embed_dim must be at least 1");
    if (num_blocks < 0) throw InputError("ModelConfig: num_blocks must be non-negative");
    if (hidden_mult < 1) throw InputError("ModelConfig: hidden_mult must be at least 1");
    if (!(init_sigma > 0.0)) throw InputError("ModelConfig: init_sigma must be positive");
    if (!(rmsnorm_eps > 0.0)) throw InputError("ModelConfig: rmsnorm_eps must be positive");
}

// ----------------------------- ParamSet -----------------------------

ParamSet ParamSet::zeros(const ModelConfig& cfg) {
    cfg.validate();
    ParamSet p;
    p.cfg_ = cfg;
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const auto kd = static_cast<std::size_t>(cfg.context_k) * d;
    const auto hd = static_cast<std::size_t>(cfg.hidden_dim());

    p.tensors_.push_back({"embedding", Matrix(v, d), true});
    p.tensors_.push_back({"input_proj", Matrix(kd, d), true});
    for (int b = 0; b < cfg.num_blocks; ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        p.tensors_.push_back({prefix + "gain", Matrix(d, 1), false});
        p.tensors_.push_back({prefix + "up", Matrix(d, hd), true});
        p.tensors_.push_back({prefix + "down", Matrix(hd, d), true});
    }
    p.tensors_.push_back({"final_gain", Matrix(d, 1), false});
    p.tensors_.push_back({"head", Matrix(d, v), true});
    return p;
}

ParamSet ParamSet::random_init(const ModelConfig& cfg, std::uint64_t seed) {
    ParamSet p = zeros(cfg);
    RngStream rng(seed);
    for (auto& nt : p.tensors_) {
        if (nt.name.find("gain") != std::string::npos) {
            for (auto& w : nt.value.raw()) w = 1.0;
        } else {
            for (auto& w : nt.value.raw()) w = cfg.init_sigma * rng.next_gaussian();
        }
    }
    return p;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet p;
    p.cfg_ = cfg_;
    p.tensors_.reserve(tensors_.size());
    for (const auto& nt : tensors_)
        p.tensors_.push_back({nt.name, Matrix(nt.value.rows(), nt.value.cols()), nt.decay});
    return p;
}

std::size_t ParamSet::total_parameters() const {
    std::size_t n = 0;
    for (const auto& nt : tensors_) n += nt.value.size();
    return n;
}

double ParamSet::global_norm() const {
    double s = 0.0;
    for (const auto& nt : tensors_)
        for (double w : nt.value.raw()) s += w * w;
    return std::sqrt(s);
}

bool ParamSet::all_finite() const {
    for (const auto& nt : tensors_)
        if (!nt.value.all_finite()) return false;
    return true;
}

std::uint64_t ParamSet::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 0x100000001b3ULL;
    };
    for (const auto& nt : tensors_) {
        mix(nt.value.size());
        const auto& raw = nt.value.raw();
        const std::size_t stride = std::max<std::size_t>(1, raw.size() / 16);
        for (std::size_t i = 0; i < raw.size(); i += stride) {
            std::uint64_t bits;
            std::memcpy(&bits, &raw[i], sizeof bits);
            mix(bits);
        }
        if (!raw.empty()) {
            std::uint64_t bits;
            std::memcpy(&bits, &raw.back(), sizeof bits);
            mix(bits);
        }
    }
    return h;
}

// ----------------------------- forward -----------------------------

namespace {

void check_tokens(const ParamSet& params, const TokenBatch& batch) {
    const int v = params.config().vocab_size;
    const auto expect = batch.batch * static_cast<std::size_t>(batch.k);
    if (batch.inputs.size() != expect || batch.targets.size() != batch.batch)
        throw InputError("forward: batch shape mismatch");
    if (batch.k != params.config().context_k)
        throw InputError("forward: batch context length does not match the model");
    for (Token t : batch.inputs)
        if (t < 0 || t >= v) throw InputError("forward: input token id out of range");
    for (Token t : batch.targets)
        if (t < 0 || t >= v) throw InputError("forward: target token id out of range");
}

void check_finite(const double* p, std::size_t n, const char* layer) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i]))
            throw NumericError(std::string("non-finite activation in layer ") + layer);
}

// Core forward pass over one batch. When cache is non-null every intermediate
// needed by backward() is recorded.
double forward_pass(const ParamSet& params, const TokenBatch& batch, BackwardCache* cache) {
    check_tokens(params, batch);
    const auto& cfg = params.config();
    const std::size_t bsz = batch.batch;
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto kd = static_cast<std::size_t>(cfg.context_k) * d;
    const auto hd = static_cast<std::size_t>(cfg.hidden_dim());
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const int nblocks = cfg.num_blocks;

    if (cache) {
        cache->batch = bsz;
        cache->inputs = batch.inputs;
        cache->targets = batch.targets;
        cache->x = Matrix(bsz, kd);
        cache->h0 = Matrix(bsz, d);
        cache->block_in.assign(nblocks, Matrix(bsz, d));
        cache->block_rms.assign(nblocks, std::vector<double>(bsz));
        cache->block_u.assign(nblocks, Matrix(bsz, d));
        cache->block_a.assign(nblocks, Matrix(bsz, hd));
        cache->block_g.assign(nblocks, Matrix(bsz, hd));
        cache->h_final = Matrix(bsz, d);
        cache->final_rms.assign(bsz, 0.0);
        cache->f = Matrix(bsz, d);
        cache->probs = Matrix(bsz, v);
        cache->params_fingerprint = params.fingerprint();
    }

    std::vector<double> x(kd), h(d), u(d), a(hd), g(hd), f(d), z(v);
    double total_loss = 0.0;

    for (std::size_t e = 0; e < bsz; ++e) {
        // Concatenated embeddings of the k context tokens.
        for (int i = 0; i < cfg.context_k; ++i) {
            const Token t = batch.inputs[e * cfg.context_k + i];
            const double* row = params.embedding().row(static_cast<std::size_t>(t));
            std::copy(row, row + d, x.begin() + static_cast<std::size_t>(i) * d);
        }
        // Input projection.
        std::fill(h.begin(), h.end(), 0.0);
        for (std::size_t i = 0; i < kd; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            const double* w = params.input_proj().row(i);
            for (std::size_t j = 0; j < d; ++j) h[j] += xi * w[j];
        }
        check_finite(h.data(), d, "input_proj");
        if (cache) {
            std::copy(x.begin(), x.end(), cache->x.row(e));
            std::copy(h.begin(), h.end(), cache->h0.row(e));
        }

        for (int blk = 0; blk < nblocks; ++blk) {
            if (cache) std::copy(h.begin(), h.end(), cache->block_in[blk].row(e));
            double ms = 0.0;
            for (std::size_t j = 0; j < d; ++j) ms += h[j] * h[j];
            const double rms = std::sqrt(ms / static_cast<double>(d) + cfg.rmsnorm_eps);
            const double* gain = params.block_gain(blk).data();
            for (std::size_t j = 0; j < d; ++j) u[j] = gain[j] * h[j] / rms;

            std::fill(a.begin(), a.end(), 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                const double uj = u[j];
                const double* w = params.block_up(blk).row(j);
                for (std::size_t l = 0; l < hd; ++l) a[l] += uj * w[l];
            }
            for (std::size_t l = 0; l < hd; ++l) g[l] = gelu(a[l]);
            for (std::size_t l = 0; l < hd; ++l) {
                const double gl = g[l];
                if (gl == 0.0) continue;
                const double* w = params.block_down(blk).row(l);
                for (std::size_t j = 0; j < d; ++j) h[j] += gl * w[j];
            }
            check_finite(h.data(), d, ("block" + std::to_string(blk)).c_str());
            if (cache) {
                cache->block_rms[blk][e] = rms;
                std::copy(u.begin(), u.end(), cache->block_u[blk].row(e));
                std::copy(a.begin(), a.end(), cache->block_a[blk].row(e));
                std::copy(g.begin(), g.end(), cache->block_g[blk].row(e));
            }
        }

        // Final norm and head.
        double ms = 0.0;
        for (std::size_t j = 0; j < d; ++j) ms += h[j] * h[j];
        const double rms_f = std::sqrt(ms / static_cast<double>(d) + cfg.rmsnorm_eps);
        const double* fgain = params.final_gain().data();
        for (std::size_t j = 0; j < d; ++j) f[j] = fgain[j] * h[j] / rms_f;

        std::fill(z.begin(), z.end(), 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            const double fj = f[j];
            if (fj == 0.0) continue;
            const double* w = params.head().row(j);
            for (std::size_t t = 0; t < v; ++t) z[t] += fj * w[t];
        }
        check_finite(z.data(), v, "head");

        double zmax = z[0];
        for (std::size_t t = 1; t < v; ++t) zmax = std::max(zmax, z[t]);
        double sum = 0.0;
        for (std::size_t t = 0; t < v; ++t) sum += std::exp(z[t] - zmax);
        const double lse = zmax + std::log(sum);
        const double loss_e = lse - z[static_cast<std::size_t>(batch.targets[e])];
        if (!std::isfinite(loss_e)) throw NumericError("non-finite activation in layer loss");
        total_loss += loss_e;

        if (cache) {
            std::copy(h.begin(), h.end(), cache->h_final.row(e));
            cache->final_rms[e] = rms_f;
            std::copy(f.begin(), f.end(), cache->f.row(e));
            double* pr = cache->probs.row(e);
            for (std::size_t t = 0; t < v; ++t) pr[t] = std::exp(z[t] - lse);
        }
    }

    const double loss = total_loss / static_cast<double>(bsz);
    if (cache) cache->loss = loss;
    return loss;
}

} // namespace

ForwardResult forward(const ParamSet& params, const TokenBatch& batch) {
    ForwardResult r;
    r.loss = forward_pass(params, batch, &r.cache);
    return r;
}

double forward_loss(const ParamSet& params, const TokenBatch& batch) {
    return forward_pass(params, batch, nullptr);
}

// ----------------------------- backward -----------------------------

ParamSet backward(const ParamSet& params, const BackwardCache& cache) {
    if (cache.params_fingerprint != params.fingerprint())
        throw ContractError("backward: stale cache (parameters changed since forward)");
    const auto& cfg = params.config();
    const std::size_t bsz = cache.batch;
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto kd = static_cast<std::size_t>(cfg.context_k) * d;
    const auto hd = static_cast<std::size_t>(cfg.hidden_dim());
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const double inv_b = 1.0 / static_cast<double>(bsz);

    ParamSet grads = params.zeros_like();
    std::vector<double> dz(v), df(d), dh(d), du(d), da(hd), dg(hd), dx(kd);

    for (std::size_t e = 0; e < bsz; ++e) {
        // Softmax cross-entropy.
        const double* pr = cache.probs.row(e);
        for (std::size_t t = 0; t < v; ++t) dz[t] = pr[t] * inv_b;
        dz[static_cast<std::size_t>(cache.targets[e])] -= inv_b;

        // Head: z = f W; df = W dz, dW += f dz^T.
        const double* f = cache.f.row(e);
        for (std::size_t j = 0; j < d; ++j) {
            const double* w = params.head().row(j);
            double* gw = grads.head().row(j);
            double acc = 0.0;
            const double fj = f[j];
            for (std::size_t t = 0; t < v; ++t) {
                acc += w[t] * dz[t];
                gw[t] += fj * dz[t];
            }
            df[j] = acc;
        }

        // Final RMSNorm: f_j = gain_j * h_j / rms.
        {
            const double* h = cache.h_final.row(e);
            const double rms = cache.final_rms[e];
            const double* gain = params.final_gain().data();
            double* ggain = grads.final_gain().data();
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += df[j] * gain[j] * h[j];
            const double scale = dot / (static_cast<double>(d) * rms * rms * rms);
            for (std::size_t j = 0; j < d; ++j) {
                ggain[j] += df[j] * h[j] / rms;
                dh[j] = df[j] * gain[j] / rms - h[j] * scale;
            }
        }

        // Blocks in reverse: h_out = h_in + gelu(u W_up) W_down.
        for (int blk = cfg.num_blocks - 1; blk >= 0; --blk) {
            const double* g = cache.block_g[blk].row(e);
            const double* a = cache.block_a[blk].row(e);
            const double* u = cache.block_u[blk].row(e);
            const double* h_in = cache.block_in[blk].row(e);
            const double rms = cache.block_rms[blk][e];

            // Down projection.
            for (std::size_t l = 0; l < hd; ++l) {
                const double* w = params.block_down(blk).row(l);
                double* gw = grads.block_down(blk).row(l);
                double acc = 0.0;
                const double gl = g[l];
                for (std::size_t j = 0; j < d; ++j) {
                    acc += w[j] * dh[j];
                    gw[j] += gl * dh[j];
                }
                dg[l] = acc;
            }
            for (std::size_t l = 0; l < hd; ++l) da[l] = dg[l] * gelu_derivative(a[l]);

            // Up projection.
            for (std::size_t j = 0; j < d; ++j) {
                const double* w = params.block_up(blk).row(j);
                double* gw = grads.block_up(blk).row(j);
                double acc = 0.0;
                const double uj = u[j];
                for (std::size_t l = 0; l < hd; ++l) {
                    acc += w[l] * da[l];
                    gw[l] += uj * da[l];
                }
                du[j] = acc;
            }

            // RMSNorm, then the residual connection adds dh through unchanged.
            const double* gain = params.block_gain(blk).data();
            double* ggain = grads.block_gain(blk).data();
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += du[j] * gain[j] * h_in[j];
            const double scale = dot / (static_cast<double>(d) * rms * rms * rms);
            for (std::size_t j = 0; j < d; ++j) {
                ggain[j] += du[j] * h_in[j] / rms;
                dh[j] += du[j] * gain[j] / rms - h_in[j] * scale;
            }
        }

        // Input projection: h0 = x W_in.
        const double* x = cache.x.row(e);
        for (std::size_t i = 0; i < kd; ++i) {
            const double* w = params.input_proj().row(i);
            double* gw = grads.input_proj().row(i);
            double acc = 0.0;
            const double xi = x[i];
            for (std::size_t j = 0; j < d; ++j) {
                acc += w[j] * dh[j];
                gw[j] += xi * dh[j];
            }
            dx[i] = acc;
        }

        // Scatter into the embedding rows.
        for (int i = 0; i < cfg.context_k; ++i) {
            const Token t = cache.inputs[e * cfg.context_k + i];
            double* ge = grads.embedding().row(static_cast<std::size_t>(t));
            const double* seg = dx.data() + static_cast<std::size_t>(i) * d;
            for (std::size_t j = 0; j < d; ++j) ge[j] += seg[j];
        }
    }
    return grads;
}

// ----------------------------- grad_check -----------------------------

double grad_check_against(const ParamSet& params, const TokenBatch& batch, double fd_step,
                          const ParamSet& analytic, std::size_t sample_size,
                          std::uint64_t seed) {
    if (!(fd_step >= 1e-7 && fd_step <= 1e-3))
        throw ContractError("grad_check: fd_step must lie in [1e-7, 1e-3]");
    const std::size_t total = params.total_parameters();
    if (total == 0) throw ContractError("grad_check: model has no parameters");

    // Flat coordinate sample without replacement.
    const std::size_t n_sample = std::min(sample_size, total);
    RngStream rng(seed);
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(n_sample * 2);
    while (chosen.size() < n_sample) chosen.insert(rng.next_below(total));

    ParamSet probe = params;
    double max_rel = 0.0;
    for (std::size_t flat : chosen) {
        // Locate the tensor this flat index belongs to.
        std::size_t off = flat, ti = 0;
        while (off >= probe.tensors()[ti].value.size()) {
            off -= probe.tensors()[ti].value.size();
            ++ti;
        }
        double* w = &probe.tensors()[ti].value.raw()[off];
        const double saved = *w;
        *w = saved + fd_step;
        const double lp = forward_loss(probe, batch);
        *w = saved - fd_step;
        const double lm = forward_loss(probe, batch);
        *w = saved;

        const double fd = (lp - lm) / (2.0 * fd_step);
        const double an = analytic.tensors()[ti].value.raw()[off];
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

double grad_check(const ParamSet& params, const TokenBatch& batch, double fd_step,
                  std::size_t sample_size, std::uint64_t seed) {
    auto r = forward(params, batch);
    auto grads = backward(params, r.cache);
    return grad_check_against(params, batch, fd_step, grads, sample_size, seed);
}

} // namespace trajlab
