#include "doctest.h"

#include <cmath>
#include <numeric>
#include <vector>

#include "trajlab/model.hpp"

using namespace trajlab;

namespace {

TokenBatch make_batch(std::size_t b, int k, std::vector<Token> inputs, std::vector<Token> targets) {
    TokenBatch tb;
    tb.batch = b;
    tb.k = k;
    tb.inputs = std::move(inputs);
    tb.targets = std::move(targets);
    return tb;
}

TokenBatch random_batch(const ModelConfig& cfg, std::size_t b, std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<Token> in(b * static_cast<std::size_t>(cfg.context_k));
    std::vector<Token> tg(b);
    for (auto& t : in) t = static_cast<Token>(rng.next_below(cfg.vocab_size));
    for (auto& t : tg) t = static_cast<Token>(rng.next_below(cfg.vocab_size));
    return make_batch(b, cfg.context_k, std::move(in), std::move(tg));
}

// Straight-line reimplementation of the forward arithmetic, kept deliberately
// separate from the library code path. Scalar loops, no shared helpers.
double reference_forward(const ParamSet& p, const TokenBatch& tb) {
    const auto& cfg = p.config();
    const int k = cfg.context_k, d = cfg.embed_dim, v = cfg.vocab_size;
    const int hd = cfg.embed_dim * cfg.hidden_mult;
    double total = 0.0;
    for (std::size_t e = 0; e < tb.batch; ++e) {
        std::vector<double> x(static_cast<std::size_t>(k) * d);
        for (int i = 0; i < k; ++i) {
            Token t = tb.inputs[e * k + i];
            for (int j = 0; j < d; ++j) x[i * d + j] = p.embedding().at(t, j);
        }
        std::vector<double> h(d, 0.0);
        for (int j = 0; j < d; ++j)
            for (int i = 0; i < k * d; ++i) h[j] += x[i] * p.input_proj().at(i, j);
        for (int blk = 0; blk < cfg.num_blocks; ++blk) {
            double ms = 0.0;
            for (int j = 0; j < d; ++j) ms += h[j] * h[j];
            double rms = std::sqrt(ms / d + cfg.rmsnorm_eps);
            std::vector<double> u(d);
            for (int j = 0; j < d; ++j) u[j] = p.block_gain(blk).at(j, 0) * h[j] / rms;
            std::vector<double> a(hd, 0.0);
            for (int j = 0; j < d; ++j)
                for (int l = 0; l < hd; ++l) a[l] += u[j] * p.block_up(blk).at(j, l);
            std::vector<double> g(hd);
            for (int l = 0; l < hd; ++l) {
                double xx = a[l];
                double t = 0.7978845608028654 * (xx + 0.044715 * xx * xx * xx);
                g[l] = 0.5 * xx * (1.0 + std::tanh(t));
            }
            for (int l = 0; l < hd; ++l)
                for (int j = 0; j < d; ++j) h[j] += g[l] * p.block_down(blk).at(l, j);
        }
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += h[j] * h[j];
        double rms = std::sqrt(ms / d + cfg.rmsnorm_eps);
        std::vector<double> f(d);
        for (int j = 0; j < d; ++j) f[j] = p.final_gain().at(j, 0) * h[j] / rms;
        std::vector<double> z(v, 0.0);
        for (int j = 0; j < d; ++j)
            for (int t = 0; t < v; ++t) z[t] += f[j] * p.head().at(j, t);
        double zmax = z[0];
        for (int t = 1; t < v; ++t) zmax = std::max(zmax, z[t]);
        double sum = 0.0;
        for (int t = 0; t < v; ++t) sum += std::exp(z[t] - zmax);
        total += zmax + std::log(sum) - z[tb.targets[e]];
    }
    return total / static_cast<double>(tb.batch);
}

} // namespace

TEST_CASE("forward: zero head weights give ln V exactly") {
    ModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.context_k = 3;
    cfg.embed_dim = 16;
    cfg.num_blocks = 1;
    auto p = ParamSet::random_init(cfg, 3);
    auto& head = p.head();
    for (auto& w : head.raw()) w = 0.0;
    auto tb = random_batch(cfg, 4, 10);
    auto r = forward(p, tb);
    CHECK(r.loss == std::log(64.0));
}

TEST_CASE("forward: repeated example equals single-example loss") {
    ModelConfig cfg;
    cfg.vocab_size = 11;
    cfg.context_k = 2;
    cfg.embed_dim = 8;
    cfg.num_blocks = 2;
    auto p = ParamSet::random_init(cfg, 5);
    TokenBatch one = make_batch(1, 2, {3, 7}, {5});
    TokenBatch four = make_batch(4, 2, {3, 7, 3, 7, 3, 7, 3, 7}, {5, 5, 5, 5});
    CHECK(forward(p, four).loss == forward(p, one).loss);
}

TEST_CASE("forward matches an independent reimplementation to 1e-12") {
    ModelConfig cfg;
    cfg.vocab_size = 13;
    cfg.context_k = 4;
    cfg.embed_dim = 12;
    cfg.num_blocks = 2;
    cfg.hidden_mult = 4;
    auto p = ParamSet::random_init(cfg, 7);
    // Larger-than-init weights so every nonlinearity is exercised.
    for (auto& nt : p.tensors())
        for (auto& w : nt.value.raw()) w *= 20.0;
    auto tb = random_batch(cfg, 6, 21);
    double lib = forward(p, tb).loss;
    double ref = reference_forward(p, tb);
    CHECK(lib == doctest::Approx(ref).epsilon(1e-12));
    CHECK(forward_loss(p, tb) == lib);
}

TEST_CASE("forward rejects out-of-range token ids") {
    ModelConfig cfg;
    cfg.vocab_size = 4;
    cfg.context_k = 2;
    cfg.embed_dim = 4;
    cfg.num_blocks = 0;
    auto p = ParamSet::random_init(cfg, 1);
    auto bad = make_batch(1, 2, {0, 9}, {1});
    CHECK_THROWS_AS(forward(p, bad), InputError);
}

TEST_CASE("forward flags non-finite activations with the layer name") {
    ModelConfig cfg;
    cfg.vocab_size = 4;
    cfg.context_k = 1;
    cfg.embed_dim = 4;
    cfg.num_blocks = 1;
    auto p = ParamSet::random_init(cfg, 2);
    p.input_proj().at(0, 0) = std::numeric_limits<double>::infinity();
    auto tb = make_batch(1, 1, {0}, {1});
    CHECK_THROWS_AS(forward(p, tb), NumericError);
}

TEST_CASE("backward: norm-gain gradients vanish on identically zero pre-norm input") {
    ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.context_k = 2;
    cfg.embed_dim = 8;
    cfg.num_blocks = 2;
    auto p = ParamSet::random_init(cfg, 9);
    for (auto& w : p.input_proj().raw()) w = 0.0; // residual stream is zero everywhere
    auto tb = random_batch(cfg, 3, 4);
    auto r = forward(p, tb);
    auto g = backward(p, r.cache);
    for (int b = 0; b < cfg.num_blocks; ++b)
        for (double gv : g.block_gain(b).raw()) CHECK(gv == 0.0);
    for (double gv : g.final_gain().raw()) CHECK(gv == 0.0);
}

TEST_CASE("backward agrees with central differences on a ~500-parameter config") {
    ModelConfig cfg;
    cfg.vocab_size = 8;
    cfg.context_k = 2;
    cfg.embed_dim = 6;
    cfg.num_blocks = 1;
    cfg.hidden_mult = 4;
    auto p = ParamSet::random_init(cfg, 11);
    for (auto& nt : p.tensors())
        for (auto& w : nt.value.raw()) w *= 10.0;
    auto tb = random_batch(cfg, 5, 12);
    double err = grad_check(p, tb, 1e-5, 1000, 17);
    CHECK(err < 1e-4);
}

TEST_CASE("backward: N=0 head gradient equals the softmax-regression formula") {
    ModelConfig cfg;
    cfg.vocab_size = 7;
    cfg.context_k = 2;
    cfg.embed_dim = 5;
    cfg.num_blocks = 0;
    auto p = ParamSet::random_init(cfg, 13);
    for (auto& nt : p.tensors())
        for (auto& w : nt.value.raw()) w *= 15.0;
    auto tb = random_batch(cfg, 4, 14);
    auto r = forward(p, tb);
    auto g = backward(p, r.cache);

    // Closed form: dW[j,t] = mean_e f_j * (p_t - [t == target]).
    const int d = cfg.embed_dim, v = cfg.vocab_size;
    for (int j = 0; j < d; ++j)
        for (int t = 0; t < v; ++t) {
            double expect = 0.0;
            for (std::size_t e = 0; e < tb.batch; ++e) {
                double indicator = tb.targets[e] == t ? 1.0 : 0.0;
                expect += r.cache.f.at(e, j) * (r.cache.probs.at(e, t) - indicator);
            }
            expect /= static_cast<double>(tb.batch);
            CHECK(g.head().at(j, t) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("backward rejects a stale cache") {
    ModelConfig cfg;
    cfg.vocab_size = 5;
    cfg.context_k = 2;
    cfg.embed_dim = 4;
    cfg.num_blocks = 1;
    auto p = ParamSet::random_init(cfg, 15);
    auto tb = random_batch(cfg, 2, 16);
    auto r = forward(p, tb);
    p.head().at(0, 0) += 0.5;
    CHECK_THROWS_AS(backward(p, r.cache), ContractError);
}

TEST_CASE("grad_check: corrupted gradients are caught by the mutation control") {
    ModelConfig cfg;
    cfg.vocab_size = 8;
    cfg.context_k = 2;
    cfg.embed_dim = 6;
    cfg.num_blocks = 1;
    auto p = ParamSet::random_init(cfg, 19);
    for (auto& nt : p.tensors())
        for (auto& w : nt.value.raw()) w *= 10.0;
    auto tb = random_batch(cfg, 5, 20);
    auto r = forward(p, tb);
    auto g = backward(p, r.cache);
    for (auto& w : g.block_up(0).raw()) w = -w; // sign flip in one layer
    double err = grad_check_against(p, tb, 1e-5, g, 1000, 23);
    CHECK(err > 0.1);
}

TEST_CASE("grad_check rejects out-of-range fd steps") {
    ModelConfig cfg;
    cfg.vocab_size = 4;
    cfg.context_k = 1;
    cfg.embed_dim = 4;
    cfg.num_blocks = 0;
    auto p = ParamSet::random_init(cfg, 25);
    auto tb = random_batch(cfg, 2, 26);
    CHECK_THROWS_AS(grad_check(p, tb, 0.0), ContractError);
    CHECK_THROWS_AS(grad_check(p, tb, 1e-2), ContractError);
}

TEST_CASE("permutation equivariance: relabeling the vocabulary preserves the loss") {
    ModelConfig cfg;
    cfg.vocab_size = 9;
    cfg.context_k = 3;
    cfg.embed_dim = 8;
    cfg.num_blocks = 1;
    auto p = ParamSet::random_init(cfg, 27);
    auto tb = random_batch(cfg, 6, 28);
    double base = forward(p, tb).loss;

    // A fixed permutation of token ids.
    std::vector<int> perm(cfg.vocab_size);
    std::iota(perm.begin(), perm.end(), 0);
    RngStream rng(29);
    for (int i = cfg.vocab_size - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.next_below(i + 1)]);

    auto q = p;
    for (int t = 0; t < cfg.vocab_size; ++t) {
        for (int j = 0; j < cfg.embed_dim; ++j) {
            q.embedding().at(perm[t], j) = p.embedding().at(t, j);
            q.head().at(j, perm[t]) = p.head().at(j, t);
        }
    }
    auto tb2 = tb;
    for (auto& t : tb2.inputs) t = perm[t];
    for (auto& t : tb2.targets) t = perm[t];
    CHECK(forward(q, tb2).loss == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("gelu matches its documented tanh form") {
    for (double x : {-3.0, -0.7, 0.0, 0.3, 2.5}) {
        double t = 0.7978845608028654 * (x + 0.044715 * x * x * x);
        CHECK(gelu(x) == doctest::Approx(0.5 * x * (1.0 + std::tanh(t))).epsilon(1e-15));
        // Derivative against a fine central difference.
        double num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
        CHECK(gelu_derivative(x) == doctest::Approx(num).epsilon(1e-6));
    }
}

TEST_CASE("param counts and layout") {
    ModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.context_k = 4;
    cfg.embed_dim = 48;
    cfg.num_blocks = 2;
    auto p = ParamSet::zeros(cfg);
    // embed 64*48 + proj 192*48 + 2*(48 + 48*192 + 192*48) + 48 + head 48*64
    std::size_t expect = 64 * 48 + 192 * 48 + 2 * (48 + 48 * 192 + 192 * 48) + 48 + 48 * 64;
    CHECK(p.total_parameters() == expect);
    CHECK(p.embedding().rows() == 64);
    CHECK(p.head().cols() == 64);
    // Norm gains are exempt from weight decay under the default mask.
    for (const auto& nt : p.tensors()) {
        bool is_gain = nt.name.find("gain") != std::string::npos;
        CHECK(nt.decay == !is_gain);
    }
}
