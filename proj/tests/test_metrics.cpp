#include <doctest.h>

#include <cmath>

#include "signflow/metrics.hpp"
#include "signflow/rng.hpp"
#include "signflow/tensor.hpp"

using namespace signflow;

namespace {

SignSequence seq1d(std::vector<double> frames) {
    SignSequence s;
    s.joints = 1;
    s.coords = 1;
    s.data = std::move(frames);
    return s;
}

using Toks = std::vector<std::size_t>;

} // namespace

TEST_CASE("keypoint mse") {
    SignSequence a = seq1d({1, 2, 3, 4});
    CHECK(keypoint_mse(a, a) == 0.0);

    SignSequence shifted = a;
    for (double& v : shifted.data) v += 0.25;
    CHECK(keypoint_mse(shifted, a) == doctest::Approx(0.25 * 0.25).epsilon(1e-12));

    SUBCASE("duplicated frames resample to the original") {
        SignSequence twice = seq1d({1, 1, 2, 2, 3, 3, 4, 4});
        CHECK(keypoint_mse(twice, a) == doctest::Approx(0.0).epsilon(1e-12));
        SignSequence off = twice;
        for (double& v : off.data) v += 0.5;
        CHECK(keypoint_mse(off, a) == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("layout mismatch rejected") {
        SignSequence other;
        other.joints = 2;
        other.coords = 1;
        other.data = {1, 2};
        CHECK_THROWS_AS(keypoint_mse(other, a), ContractError);
    }
}

TEST_CASE("dtw distance") {
    SignSequence a = seq1d({0, 1, 2, 3});
    CHECK(dtw_distance(a, a) == 0.0);

    SUBCASE("duplicated frame absorbed by warping") {
        SignSequence dup = seq1d({0, 1, 1, 2, 3});
        CHECK(dtw_distance(a, dup) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("one-frame sequences reduce to the frame distance") {
        SignSequence x;
        x.joints = 1;
        x.coords = 2;
        x.data = {0.0, 0.0};
        SignSequence y = x;
        y.data = {3.0, 4.0};
        CHECK(dtw_distance(x, y) == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("symmetry and non-negativity") {
        Rng rng(5);
        for (int trial = 0; trial < 10; ++trial) {
            SignSequence x = seq1d({});
            SignSequence y = seq1d({});
            for (std::size_t i = 0; i < 4 + rng.below(4); ++i) x.data.push_back(rng.normal());
            for (std::size_t i = 0; i < 4 + rng.below(4); ++i) y.data.push_back(rng.normal());
            const double xy = dtw_distance(x, y);
            CHECK(xy >= 0.0);
            CHECK(xy == doctest::Approx(dtw_distance(y, x)).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(dtw_distance(seq1d({}), a), ContractError);
}

TEST_CASE("bleu fixtures") {
    // identity scores one for every order
    const Toks same{1, 2, 3, 4};
    for (std::size_t n = 1; n <= 4; ++n) CHECK(bleu_n(same, same, n) == 1.0);

    // one of two unigrams, no brevity penalty
    CHECK(bleu_n({1, 2}, {1, 3}, 1) == doctest::Approx(0.5).epsilon(1e-12));

    // brevity penalty e^-1
    CHECK(bleu_n({1}, {1, 2}, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(bleu_n({1}, {1, 2}, 1) == doctest::Approx(0.36788).epsilon(1e-4));

    // additional hand-computed vectors
    CHECK(bleu_n({1, 2, 3, 4}, {1, 2, 3, 5}, 1) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(bleu_n({1, 2, 3, 4}, {1, 2, 3, 5}, 2) ==
          doctest::Approx(std::sqrt(0.75 * (2.0 / 3.0))).epsilon(1e-12));
    CHECK(bleu_n({1, 1, 1}, {1, 1}, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12)); // clipping
    CHECK(bleu_n({1, 2, 1, 2}, {1, 2}, 2) ==
          doctest::Approx(std::sqrt(0.5 * (1.0 / 3.0))).epsilon(1e-12));
    CHECK(bleu_n({5, 6}, {5, 6, 7, 8}, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

    SUBCASE("empty hypothesis scores zero") {
        CHECK(bleu_n({}, {1, 2}, 1) == 0.0);
        CHECK(bleu_n({}, {1, 2}, 4) == 0.0);
    }
    SUBCASE("missing n-gram order scores zero") {
        CHECK(bleu_n({1}, {1}, 2) == 0.0);            // no bigram in a 1-token hypothesis
        CHECK(bleu_n({2, 3}, {4, 5}, 1) == 0.0);      // disjoint
    }
    CHECK_THROWS_AS(bleu_n({1}, {1}, 0), ContractError);
}

TEST_CASE("rouge-l fixtures") {
    CHECK(rouge_l_f1({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(rouge_l_f1({1, 2, 3}, {1, 3}) == doctest::Approx(0.8).epsilon(1e-12)); // LCS 2
    CHECK(rouge_l_f1({7, 8}, {1, 2}) == 0.0);

    // additional hand-computed vectors
    CHECK(rouge_l_f1({1, 3, 2, 4}, {1, 2, 3, 4}) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(rouge_l_f1({9, 1, 2}, {1, 2, 3, 4}) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));

    CHECK(rouge_l_f1({}, {1}) == 0.0);
    CHECK_THROWS_AS(rouge_l_f1({1}, {}), ContractError);
}

TEST_CASE("metric ranges on random token strings") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        Toks hyp, ref;
        for (std::size_t i = 0; i < 1 + rng.below(6); ++i) hyp.push_back(rng.below(10));
        for (std::size_t i = 0; i < 1 + rng.below(6); ++i) ref.push_back(rng.below(10));
        for (std::size_t n = 1; n <= 4; ++n) {
            const double b = bleu_n(hyp, ref, n);
            CHECK(b >= 0.0);
            CHECK(b <= 1.0);
        }
        const double r = rouge_l_f1(hyp, ref);
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
    }
}
