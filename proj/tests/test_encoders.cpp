#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "signflow/diffusion.hpp"
#include "signflow/encoders.hpp"

using namespace signflow;
using signflow::testing::check_gradients;

namespace {

// standalone re-derivation of the feature recipe (kept independent of the
// library implementation on purpose)
std::uint64_t oracle_mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::vector<double> oracle_text_vector(std::size_t token, std::uint64_t seed, std::size_t dim) {
    const std::uint64_t salt = 0x7465787466656174ull;
    const std::uint64_t key = oracle_mix(oracle_mix(seed ^ salt) ^ (token + 1));
    std::vector<double> v(dim);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const std::uint64_t a = oracle_mix(key + 2 * i);
        const std::uint64_t b = oracle_mix(key + 2 * i + 1);
        const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
        v[i] = std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925286766559 * u2);
        norm2 += v[i] * v[i];
    }
    for (double& x : v) x /= std::sqrt(norm2);
    return v;
}

PredictorModel tiny_model() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.mlp_hidden = 24;
    cfg.text_feat_dim = 12;
    cfg.audio_feat_dim = 6;
    cfg.joints = 3;
    cfg.coords = 2;
    cfg.steps = 4;
    cfg.max_len = 16;
    cfg.producer_blocks = 2;
    cfg.encoder_blocks = 2;
    return PredictorModel::build(cfg, 77);
}

} // namespace

TEST_CASE("text features: determinism and the documented recipe") {
    FeatureConfig fcfg;
    TextTokens t{{5, 2, 5}, 20};
    const auto a = extract_text_features(t, 42, fcfg);
    const auto b = extract_text_features(t, 42, fcfg);
    CHECK(a == b);

    const auto oracle = oracle_text_vector(5, 42, fcfg.text_feat_dim);
    for (std::size_t i = 0; i < fcfg.text_feat_dim; ++i)
        CHECK(a[i] == doctest::Approx(oracle[i]).epsilon(1e-15));
    // token repeated later in the sentence gets the identical vector
    for (std::size_t i = 0; i < fcfg.text_feat_dim; ++i)
        CHECK(a[i] == a[2 * fcfg.text_feat_dim + i]);

    CHECK_THROWS_AS(extract_text_features(TextTokens{{}, 20}, 1, fcfg), ContractError);
    CHECK_THROWS_AS(extract_text_features(TextTokens{{21}, 20}, 1, fcfg), ContractError);
}

TEST_CASE("text features: near-orthogonality over random pairs") {
    FeatureConfig fcfg;
    Rng rng(7);
    double acc = 0.0;
    const std::size_t pairs = 1000;
    const std::size_t vocab = 500;
    for (std::size_t i = 0; i < pairs; ++i) {
        std::size_t t1 = rng.below(vocab);
        std::size_t t2 = rng.below(vocab);
        while (t2 == t1) t2 = rng.below(vocab);
        TextTokens tt{{t1, t2}, vocab};
        const auto f = extract_text_features(tt, 99, fcfg);
        double cos = 0.0;
        for (std::size_t d = 0; d < fcfg.text_feat_dim; ++d)
            cos += f[d] * f[fcfg.text_feat_dim + d];
        acc += std::abs(cos);
    }
    CHECK(acc / static_cast<double>(pairs) < 0.15);
}

TEST_CASE("audio features: block structure") {
    FeatureConfig fcfg;
    fcfg.frames_per_token = 4;
    TextTokens t{{3, 9, 1}, 20};

    SUBCASE("zero jitter makes frames within a block identical") {
        FeatureConfig zero = fcfg;
        zero.audio_jitter = 0.0;
        const auto seq = extract_audio_features(t, 5, zero);
        CHECK(seq.frame_count() == 12);
        for (std::size_t tok = 0; tok < 3; ++tok)
            for (std::size_t p = 1; p < 4; ++p)
                for (std::size_t d = 0; d < zero.audio_feat_dim; ++d)
                    CHECK(seq.frames[((tok * 4) + p) * zero.audio_feat_dim + d] ==
                          seq.frames[(tok * 4) * zero.audio_feat_dim + d]);
    }
    SUBCASE("frame count is tokens x frames_per_token") {
        const auto seq = extract_audio_features(t, 5, fcfg);
        CHECK(seq.frame_count() == t.ids.size() * fcfg.frames_per_token);
    }
    SUBCASE("block mean stays within the jitter amplitude of the base vector") {
        const auto seq = extract_audio_features(t, 5, fcfg);
        std::vector<double> base(fcfg.audio_feat_dim);
        hash_unit_vector(audio_base_key(3, 5), fcfg.audio_feat_dim, base.data());
        for (std::size_t d = 0; d < fcfg.audio_feat_dim; ++d) {
            double mean = 0.0;
            for (std::size_t p = 0; p < 4; ++p)
                mean += seq.frames[p * fcfg.audio_feat_dim + d];
            mean /= 4.0;
            CHECK(std::abs(mean - base[d]) < 4.0 * fcfg.audio_jitter);
        }
    }
}

TEST_CASE("positional encoding") {
    const auto pe = positional_encoding(3, 8);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(pe[2 * i] == doctest::Approx(0.0));     // sin 0
        CHECK(pe[2 * i + 1] == doctest::Approx(1.0)); // cos 0
    }
    CHECK(pe[8] == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
    CHECK(pe[8] == doctest::Approx(0.84147).epsilon(1e-4));
    for (double v : pe) {
        CHECK(v <= 1.0);
        CHECK(v >= -1.0);
    }
    CHECK_THROWS_AS(positional_encoding(4, 7), ContractError);
}

TEST_CASE("encoder stacks") {
    PredictorModel m = tiny_model();
    FeatureConfig fcfg;
    fcfg.text_feat_dim = m.cfg.text_feat_dim;
    fcfg.audio_feat_dim = m.cfg.audio_feat_dim;
    fcfg.frames_per_token = 3;

    SUBCASE("determinism and output width") {
        TextTokens t{{1, 4, 2}, 8};
        auto feats = make_tensor({3, fcfg.text_feat_dim},
                                 extract_text_features(t, 11, fcfg));
        auto e1 = m.encode_text_features(feats);
        auto e2 = m.encode_text_features(feats);
        CHECK(e1->size() == m.cfg.d_model);
        CHECK(e1->data == e2->data);
    }
    SUBCASE("token order changes the text embedding") {
        TextTokens fwd{{1, 4, 2}, 8};
        TextTokens rev{{2, 4, 1}, 8};
        auto ef = m.encode_text_features(
            make_tensor({3, fcfg.text_feat_dim}, extract_text_features(fwd, 11, fcfg)));
        auto er = m.encode_text_features(
            make_tensor({3, fcfg.text_feat_dim}, extract_text_features(rev, 11, fcfg)));
        double diff = 0.0;
        for (std::size_t i = 0; i < ef->size(); ++i) diff += std::abs(ef->data[i] - er->data[i]);
        CHECK(diff > 1e-6);
    }
    SUBCASE("audio encoder pools duplicated zero-jitter blocks to the one-block value") {
        FeatureConfig zero = fcfg;
        zero.audio_jitter = 0.0;
        TextTokens once{{5}, 8};
        TextTokens thrice{{5, 5, 5}, 8};
        const auto a1 = extract_audio_features(once, 3, zero);
        const auto a3 = extract_audio_features(thrice, 3, zero);
        auto e1 = m.encode_audio_features(
            make_tensor({a1.frame_count(), a1.feat_dim}, a1.frames));
        auto e3 = m.encode_audio_features(
            make_tensor({a3.frame_count(), a3.feat_dim}, a3.frames));
        for (std::size_t i = 0; i < e1->size(); ++i)
            CHECK(e3->data[i] == doctest::Approx(e1->data[i]).epsilon(1e-6));
    }
    SUBCASE("feature width mismatch is a contract error") {
        CHECK_THROWS_AS(m.encode_text_features(make_tensor({2, 5}, std::vector<double>(10, 0.1))),
                        ContractError);
    }
    SUBCASE("empty input is a contract error") {
        CHECK_THROWS_AS(
            m.encode_text_features(make_tensor({0, m.cfg.text_feat_dim}, {})),
            ContractError);
    }
    SUBCASE("non-finite coordinates are a contract error") {
        std::vector<double> bad(2 * m.cfg.frame_width(), 0.0);
        bad[3] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(m.encode_sign(make_tensor({2, m.cfg.frame_width()}, bad)),
                        ContractError);
    }
    SUBCASE("single-frame sign sequence encodes cleanly") {
        auto e = m.encode_sign(
            make_tensor({1, m.cfg.frame_width()}, std::vector<double>(m.cfg.frame_width(), 0.3)));
        CHECK(e->size() == m.cfg.d_model);
        for (double v : e->data) CHECK(std::isfinite(v));
    }
}

TEST_CASE("step encoder boundaries and distinctness") {
    PredictorModel m = tiny_model();
    auto e0 = m.encode_step(0);
    auto eH = m.encode_step(m.cfg.steps);
    CHECK(e0->size() == m.cfg.d_model);
    CHECK(eH->size() == m.cfg.d_model);
    CHECK_THROWS_AS(m.encode_step(m.cfg.steps + 1), ContractError);
    double diff = 0.0;
    for (std::size_t i = 0; i < e0->size(); ++i) diff += std::abs(e0->data[i] - eH->data[i]);
    CHECK(diff > 1e-9);
}

TEST_CASE("noise encoder has parameters disjoint from the sign encoder") {
    PredictorModel m = tiny_model();
    auto frames =
        make_tensor({2, m.cfg.frame_width()}, std::vector<double>(2 * m.cfg.frame_width(), 0.25));
    const auto before = m.encode_noise(frames)->data;
    for (const auto& [name, t] : m.params.items())
        if (name.rfind("enc_sign.", 0) == 0)
            for (double& v : t->data) v += 0.37;
    const auto after = m.encode_noise(frames)->data;
    CHECK(before == after);
}

TEST_CASE("sign encoder gradient matches finite differences") {
    PredictorModel m = tiny_model();
    Rng rng(4);
    auto s = signflow::testing::random_tensor({2, m.cfg.frame_width()}, rng, true, 0.5);
    check_gradients(
        [&] {
            auto e = m.encode_sign(s);
            return sum_all(mul(e, e));
        },
        {s});
}

TEST_CASE("joint-space normalization yields unit norm") {
    PredictorModel m = tiny_model();
    Rng rng(9);
    auto s = signflow::testing::random_tensor({3, m.cfg.frame_width()}, rng, false);
    auto e = l2_normalize(m.encode_sign(s));
    double n2 = 0.0;
    for (double v : e->data) n2 += v * v;
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
}
