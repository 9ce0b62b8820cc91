#include "doctest.h"

#include <cmath>

#include "trajlab/gns.hpp"

using namespace trajlab;

namespace {

ParamSet flat_params(std::size_t n, double fill) {
    ModelConfig cfg;
    cfg.vocab_size = 2;
    cfg.context_k = 1;
    cfg.embed_dim = static_cast<int>(n / 2);
    cfg.num_blocks = 0;
    auto p = ParamSet::zeros(cfg);
    for (auto& nt : p.tensors())
        for (auto& x : nt.value.raw()) x = fill;
    return p;
}

} // namespace

TEST_CASE("precond_sqnorm: worked example and identity preconditioner") {
    ModelConfig cfg;
    cfg.vocab_size = 2;
    cfg.context_k = 1;
    cfg.embed_dim = 1;
    cfg.num_blocks = 0;
    auto g = ParamSet::zeros(cfg);
    auto v = ParamSet::zeros(cfg);
    // Tensors: embedding 2x1, input_proj 1x1, final_gain 1x1, head 1x2.
    // Use the first two coordinates as the 2-vector (2, 0) with v = (4, 1).
    g.tensors()[0].value.raw() = {2.0, 0.0};
    v.tensors()[0].value.raw() = {4.0, 1.0};
    for (std::size_t t = 1; t < v.tensors().size(); ++t)
        for (auto& x : v.tensors()[t].value.raw()) x = 1.0;
    CHECK(precond_sqnorm(g, v, 0.0) == doctest::Approx(1.0).epsilon(1e-15));

    SUBCASE("zero gradient gives zero") {
        for (auto& x : g.tensors()[0].value.raw()) x = 0.0;
        CHECK(precond_sqnorm(g, v, 0.0) == 0.0);
    }
    SUBCASE("identity preconditioner reduces to the plain squared norm") {
        auto ones = v;
        for (auto& nt : ones.tensors())
            for (auto& x : nt.value.raw()) x = 1.0;
        double plain = 0.0;
        for (const auto& nt : g.tensors())
            for (double x : nt.value.raw()) plain += x * x;
        CHECK(precond_sqnorm(g, ones, 0.0) == plain);
    }
}

TEST_CASE("estimate_step: plugging expectations recovers the true quantities") {
    // E sq_small = 1 + 4/1 = 5, E sq_big = 1 + 4/4 = 2 for ||g||^2=1, TrSigma=4.
    GnsSample s{1, 4, 5.0, 2.0};
    auto r = estimate_step(s);
    CHECK(r.gnorm2 == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.tr_noise == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(r.valid);
}

TEST_CASE("estimate_step: noiseless and negative cases") {
    auto noiseless = estimate_step({2, 8, 3.0, 3.0});
    CHECK(noiseless.tr_noise == 0.0);
    CHECK(noiseless.valid);

    auto negative = estimate_step({2, 8, 1.0, 3.0});
    CHECK(negative.tr_noise < 0.0); // kept, not clamped
    CHECK_FALSE(negative.valid);

    CHECK_THROWS_AS(estimate_step({8, 2, 1.0, 1.0}), ContractError);
}

TEST_CASE("smooth: constant stream is a fixed point") {
    std::vector<RawGnsEstimate> raws(50, RawGnsEstimate{3.0, 1.5, true});
    auto out = smooth(raws, 10.0);
    REQUIRE(out.size() == raws.size());
    for (const auto& e : out) {
        CHECK(e.tr_noise == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(e.gnorm2 == doctest::Approx(1.5).epsilon(1e-12));
        CHECK(e.b_precond == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(e.valid);
    }
}

TEST_CASE("smooth: alternating noise contracts to the mean") {
    const double mean = 5.0, amp = 2.0;
    std::vector<RawGnsEstimate> raws;
    for (int i = 0; i < 2000; ++i) {
        double x = mean + (i % 2 == 0 ? amp : -amp);
        raws.push_back({x, 1.0, true});
    }
    auto out = smooth(raws, 100.0);
    CHECK(std::abs(out.back().tr_noise - mean) < 0.01 * amp);
}

TEST_CASE("smooth: ratio invalid while smoothed gnorm2 is non-positive") {
    std::vector<RawGnsEstimate> raws(5, RawGnsEstimate{1.0, -2.0, false});
    auto out = smooth(raws, 10.0);
    for (const auto& e : out) CHECK_FALSE(e.valid);
}

TEST_CASE("smoother state round-trips") {
    GnsSmoother a(50.0);
    for (int i = 0; i < 20; ++i) a.update({1.0 + i, 2.0, true}, 0.1, 8);
    auto st = a.state();
    GnsSmoother b(50.0);
    b.restore(st);
    auto ea = a.update({7.0, 2.0, true}, 0.1, 8);
    auto eb = b.update({7.0, 2.0, true}, 0.1, 8);
    CHECK(ea.tr_noise == eb.tr_noise);
    CHECK(ea.gnorm2 == eb.gnorm2);
}

TEST_CASE("smoother records the scaled bookkeeping quantities") {
    GnsSmoother s(1.0);
    auto e = s.update({4.0, 2.0, true}, 0.25, 8.0);
    CHECK(e.scaled_noise == doctest::Approx((0.25 / 8.0) * 4.0).epsilon(1e-15));
    CHECK(e.scaled_gnorm2 == doctest::Approx(0.25 * 2.0).epsilon(1e-15));
}

TEST_CASE("synthetic gaussian stream: smoothed estimates land within 5%") {
    // True gradient with ||g||^2 = 40, noise sigma^2 per coordinate over
    // n = 1000 dims: TrSigma = 1000 * 0.09 = 90.
    const std::size_t n = 1000;
    const double sigma = 0.3;
    const double tr_sigma = static_cast<double>(n) * sigma * sigma;
    RngStream rng(424242);
    std::vector<double> g(n);
    double g2 = 0.0;
    for (auto& x : g) {
        x = 0.2 * rng.next_gaussian();
        g2 += x * x;
    }
    const std::size_t b_small = 8, b_big = 64;

    GnsSmoother sm(100.0);
    GnsEstimate last;
    double mean_tr = 0.0, mean_g2 = 0.0;
    const int steps = 10000;
    for (int step = 0; step < steps; ++step) {
        // Slice means: small slice and the remainder, combined exactly.
        double sq_s = 0.0, sq_b = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xi_s = sigma / std::sqrt(static_cast<double>(b_small)) * rng.next_gaussian();
            const double xi_r =
                sigma / std::sqrt(static_cast<double>(b_big - b_small)) * rng.next_gaussian();
            const double gs = g[i] + xi_s;
            const double gb = g[i] + (static_cast<double>(b_small) * xi_s +
                                      static_cast<double>(b_big - b_small) * xi_r) /
                                         static_cast<double>(b_big);
            sq_s += gs * gs;
            sq_b += gb * gb;
        }
        auto raw = estimate_step({b_small, b_big, sq_s, sq_b});
        mean_tr += raw.tr_noise;
        mean_g2 += raw.gnorm2;
        last = sm.update(raw, 1.0, static_cast<double>(b_big));
        if (step == 1999) {
            // Acceptance point: within 5% after 2000 samples.
            CHECK(std::abs(last.tr_noise - tr_sigma) < 0.05 * tr_sigma);
            CHECK(std::abs(last.gnorm2 - g2) < 0.05 * g2);
            CHECK(std::abs(last.b_precond - tr_sigma / g2) < 0.05 * tr_sigma / g2);
        }
    }
    // Unbiasedness at desk scale: raw means within 2% over 1e4 samples.
    mean_tr /= steps;
    mean_g2 /= steps;
    CHECK(std::abs(mean_tr - tr_sigma) < 0.02 * tr_sigma);
    CHECK(std::abs(mean_g2 - g2) < 0.02 * g2);
}

TEST_CASE("classify_batch_regime: per-definition verdicts") {
    auto mk = [](std::vector<double> bp, double batch) {
        std::vector<GnsSeriesPoint> s;
        for (double v : bp) s.push_back({v, true, batch});
        return s;
    };
    CHECK(classify_batch_regime(mk({600, 700, 900}, 512)) == BatchRegime::Small);
    CHECK(classify_batch_regime(mk({100, 200, 400}, 512)) == BatchRegime::Large);
    CHECK(classify_batch_regime(mk({100, 700, 900}, 512)) == BatchRegime::Mixed);

    // Invalid points are ignored.
    std::vector<GnsSeriesPoint> s = mk({600, 700}, 512);
    s.push_back({100, false, 512});
    CHECK(classify_batch_regime(s) == BatchRegime::Small);

    std::vector<GnsSeriesPoint> none(3, GnsSeriesPoint{0, false, 512});
    CHECK_THROWS_AS(classify_batch_regime(none), InsufficientDataError);
}
