#include "doctest.h"

#include <cmath>
#include <map>

#include "trajlab/corpus.hpp"

using namespace trajlab;

TEST_CASE("build_source: huge concentration approaches uniform rows") {
    auto src = build_source(11, 8, 1, 1e9);
    for (std::size_t c = 0; c < src.num_contexts(); ++c) {
        double lo = 1.0, hi = 0.0;
        for (int t = 0; t < src.vocab; ++t) {
            lo = std::min(lo, src.table.at(c, t));
            hi = std::max(hi, src.table.at(c, t));
        }
        CHECK(hi - lo < 1e-3);
    }
}

TEST_CASE("build_source: deterministic in seed") {
    auto a = build_source(5, 6, 2, 0.3);
    auto b = build_source(5, 6, 2, 0.3);
    REQUIRE(a.table.size() == b.table.size());
    for (std::size_t i = 0; i < a.table.size(); ++i)
        CHECK(a.table.raw()[i] == b.table.raw()[i]);
    auto c = build_source(6, 6, 2, 0.3);
    bool same = true;
    for (std::size_t i = 0; i < a.table.size() && same; ++i)
        same = a.table.raw()[i] == c.table.raw()[i];
    CHECK_FALSE(same);
}

TEST_CASE("build_source: rows normalized") {
    auto src = build_source(3, 2, 1, 0.3);
    for (std::size_t c = 0; c < src.num_contexts(); ++c) {
        double sum = 0.0;
        for (int t = 0; t < src.vocab; ++t) {
            CHECK(src.table.at(c, t) >= 0.0);
            sum += src.table.at(c, t);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("stream: batches advance through disjoint consecutive windows") {
    auto src = build_source(21, 16, 2, 0.3);
    const int k = 4;

    MarkovStream a(src, 99);
    auto b1 = a.next_batch(1, k);
    auto b2 = a.next_batch(1, k);
    CHECK(b1.token_count == static_cast<std::uint64_t>(k + 1));
    CHECK(b2.token_count == static_cast<std::uint64_t>(2 * (k + 1)));

    // A raw token walk with the same seed must reproduce both windows.
    MarkovStream raw(src, 99);
    std::vector<Token> flat;
    for (int i = 0; i < 2 * (k + 1); ++i) flat.push_back(raw.next_token());
    for (int i = 0; i < k; ++i) {
        CHECK(b1.inputs[i] == flat[i]);
        CHECK(b2.inputs[i] == flat[k + 1 + i]);
    }
    CHECK(b1.targets[0] == flat[k]);
    CHECK(b2.targets[0] == flat[2 * k + 1]);
}

TEST_CASE("stream: deterministic batch sequence for equal seeds") {
    auto src = build_source(3, 8, 1, 0.5);
    MarkovStream a(src, 7), b(src, 7);
    for (int i = 0; i < 5; ++i) {
        auto ba = a.next_batch(4, 3);
        auto bb = b.next_batch(4, 3);
        CHECK(ba.inputs == bb.inputs);
        CHECK(ba.targets == bb.targets);
    }
}

TEST_CASE("stream: empirical transition frequencies match the table") {
    // Monte-Carlo check: per-context total variation below 1% over 1e6 tokens.
    auto src = build_source(13, 4, 1, 0.5);
    MarkovStream s(src, 31);
    const int n = 1'000'000;
    std::vector<std::vector<double>> counts(4, std::vector<double>(4, 0.0));
    Token prev = s.next_token();
    for (int i = 1; i < n; ++i) {
        Token t = s.next_token();
        counts[prev][t] += 1.0;
        prev = t;
    }
    for (int c = 0; c < 4; ++c) {
        double total = 0.0;
        for (int t = 0; t < 4; ++t) total += counts[c][t];
        REQUIRE(total > 0.0);
        double tv = 0.0;
        for (int t = 0; t < 4; ++t)
            tv += std::abs(counts[c][t] / total - src.table.at(c, t));
        CHECK(0.5 * tv < 0.01);
    }
}

TEST_CASE("stream: disjoint seeds look independent under a chi-square test") {
    auto src = build_source(17, 4, 1, 0.5);
    MarkovStream train(src, 1000), val(src, 2000);
    const int n = 10'000;
    std::vector<std::vector<double>> joint(4, std::vector<double>(4, 0.0));
    std::vector<double> ma(4, 0.0), mb(4, 0.0);
    for (int i = 0; i < n; ++i) {
        Token a = train.next_token(), b = val.next_token();
        joint[a][b] += 1.0;
        ma[a] += 1.0;
        mb[b] += 1.0;
    }
    double chi2 = 0.0;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            double expected = ma[a] * mb[b] / n;
            if (expected > 0.0) {
                double d = joint[a][b] - expected;
                chi2 += d * d / expected;
            }
        }
    // dof = (4-1)^2 = 9; 99.9% quantile of chi-square(9) is 27.88.
    CHECK(chi2 < 27.88);
}

TEST_CASE("entropy_floor: uniform chain gives ln V") {
    Matrix t(4, 4, 0.25);
    auto src = MarkovSource::from_table(4, 1, t);
    CHECK(entropy_floor(src) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("entropy_floor: two-state chain with stay probability 0.9") {
    Matrix t(2, 2);
    t.at(0, 0) = 0.9; t.at(0, 1) = 0.1;
    t.at(1, 0) = 0.1; t.at(1, 1) = 0.9;
    auto src = MarkovSource::from_table(2, 1, t);
    const double expected = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
    CHECK(entropy_floor(src) == doctest::Approx(expected).epsilon(1e-10));
    CHECK(entropy_floor(src) == doctest::Approx(0.3251).epsilon(2e-4));
}

TEST_CASE("entropy_floor: deterministic chain gives zero") {
    Matrix t(3, 3, 0.0);
    t.at(0, 1) = 1.0;
    t.at(1, 2) = 1.0;
    t.at(2, 0) = 1.0;
    auto src = MarkovSource::from_table(3, 1, t);
    CHECK(entropy_floor(src) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("entropy_floor: periodic chain fails power iteration") {
    // 0 -> 1, 1 -> 0, 2 -> 0 oscillates from a uniform start.
    Matrix t(3, 3, 0.0);
    t.at(0, 1) = 1.0;
    t.at(1, 0) = 1.0;
    t.at(2, 0) = 1.0;
    auto src = MarkovSource::from_table(3, 1, t);
    CHECK_THROWS_AS(entropy_floor(src), NumericError);
}

TEST_CASE("from_table rejects unnormalized rows") {
    Matrix t(2, 2, 0.6);
    CHECK_THROWS_AS(MarkovSource::from_table(2, 1, t), InputError);
}

TEST_CASE("stream state round-trips through capture/restore") {
    auto src = build_source(3, 8, 2, 0.3);
    MarkovStream s(src, 5);
    s.next_batch(3, 4);
    auto st = s.state();
    auto expect = s.next_batch(2, 4);
    s.restore(st);
    auto got = s.next_batch(2, 4);
    CHECK(got.inputs == expect.inputs);
    CHECK(got.targets == expect.targets);
    CHECK(got.token_count == expect.token_count);
}
