#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "signflow/diffusion.hpp"
#include "signflow/ecl.hpp"
#include "signflow/rng.hpp"

using namespace signflow;
using signflow::testing::check_gradients;
using signflow::testing::random_tensor;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.mlp_hidden = 24;
    cfg.text_feat_dim = 12;
    cfg.audio_feat_dim = 6;
    cfg.joints = 2;
    cfg.coords = 2;
    cfg.steps = 10;
    cfg.max_len = 32;
    cfg.producer_blocks = 2;
    cfg.encoder_blocks = 1;
    return cfg;
}

SignSequence make_seq(std::vector<double> data, std::size_t joints = 2, std::size_t coords = 2) {
    SignSequence s;
    s.joints = joints;
    s.coords = coords;
    s.data = std::move(data);
    return s;
}

} // namespace

TEST_CASE("schedule values match the independent formula") {
    const DiffusionSchedule s = build_schedule(10);
    REQUIRE(s.delta.size() == 11);
    REQUIRE(s.alpha.size() == 10);
    for (std::size_t h = 1; h <= 11; ++h) {
        const double expect = std::min(1.0, 1.0 / std::log(static_cast<double>(h + 1)));
        CHECK(s.delta[h - 1] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(s.delta[0] == 1.0); // 1/ln2 clamped
    CHECK(s.delta[8] == doctest::Approx(0.43429).epsilon(1e-4));
    CHECK(s.delta[9] == doctest::Approx(0.41707).epsilon(3e-4));
    CHECK(s.alpha[1] == doctest::Approx(0.18889).epsilon(1e-4));

    SUBCASE("monotone and non-negative") {
        for (std::size_t i = 0; i + 1 < s.delta.size(); ++i) CHECK(s.delta[i] >= s.delta[i + 1]);
        for (double a : s.alpha) CHECK(a >= 0.0);
    }
    SUBCASE("telescoping sum") {
        double sum = 0.0;
        for (double a : s.alpha) sum += a;
        CHECK(std::abs(sum - (s.delta.front() - s.delta.back())) < 1e-12);
    }
    CHECK_THROWS_AS(build_schedule(0), ContractError);
}

TEST_CASE("refine step endpoints and convexity") {
    auto p = make_seq({2, 2, 2, 2});
    auto prev = make_seq({0, 0, 0, 0});
    CHECK(refine_step(p, prev, 1.0).data == p.data);
    CHECK(refine_step(p, prev, 0.0).data == prev.data);
    CHECK(refine_step(p, prev, 0.5).data[0] == doctest::Approx(1.0));

    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(8), b(8);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        const double alpha = rng.uniform();
        auto out = refine_step(make_seq(a), make_seq(b), alpha);
        for (std::size_t i = 0; i < 8; ++i) {
            CHECK(out.data[i] >= std::min(a[i], b[i]) - 1e-12);
            CHECK(out.data[i] <= std::max(a[i], b[i]) + 1e-12);
        }
    }
    CHECK_THROWS_AS(refine_step(make_seq({1, 2, 3, 4}), make_seq({1, 2, 3, 4, 5, 6, 7, 8}), 0.5),
                    ContractError);
}

TEST_CASE("training target endpoints") {
    auto s0 = make_seq({1, 1, 1, 1});
    auto s_next = make_seq({3, 3, 3, 3});
    CHECK(training_target(s0, s_next, 1.0).data == s0.data);
    CHECK(training_target(s0, s_next, 0.0).data == s_next.data);
    auto mid = training_target(s0, s_next, 0.25);
    CHECK(mid.data[0] == doctest::Approx(0.25 * 1 + 0.75 * 3));
    CHECK_THROWS_AS(training_target(s0, make_seq({1, 2}), 0.5), ContractError);
}

TEST_CASE("training target of a perfect prediction gives zero loss") {
    auto s0 = make_seq({0.5, -0.5, 0.25, 0.0});
    auto target = training_target(s0, inject_noise(s0, 0.05, 9), 0.7);
    auto a = make_tensor({1, 4}, target.data);
    auto b = make_tensor({1, 4}, target.data);
    CHECK(mse(a, b)->data[0] == 0.0);
}

TEST_CASE("noise injection") {
    auto s = make_seq(std::vector<double>(4, 1.0));
    CHECK(inject_noise(s, 0.0, 5).data == s.data);
    CHECK(inject_noise(s, 0.1, 5).data == inject_noise(s, 0.1, 5).data);
    CHECK(inject_noise(s, 0.1, 5).data != inject_noise(s, 0.1, 6).data);
    CHECK_THROWS_AS(inject_noise(s, -0.1, 5), ContractError);

    // sample std over 1e5 coordinates
    SignSequence big;
    big.joints = 250;
    big.coords = 2;
    big.data.assign(200 * 500, 0.0);
    auto noised = inject_noise(big, 0.1, 77);
    double s2 = 0.0;
    for (double v : noised.data) s2 += v * v;
    const double std_est = std::sqrt(s2 / static_cast<double>(noised.data.size()));
    CHECK(std::abs(std_est - 0.1) < 0.003);
}

TEST_CASE("predict_p shape, bounds and conditioning") {
    PredictorModel m = PredictorModel::build(tiny_cfg(), 3);
    Rng rng(5);
    auto cond = random_tensor({m.cfg.d_model}, rng, false);
    auto cond2 = random_tensor({m.cfg.d_model}, rng, false);
    auto noisy = random_tensor({5, m.cfg.frame_width()}, rng, false);
    auto e_h = m.encode_step(1);
    auto e_n = m.encode_noise(noisy);

    auto p = predict_p(cond, e_h, e_n, noisy, m);
    CHECK(p->shape == std::vector<std::size_t>{5, m.cfg.frame_width()});

    SUBCASE("different condition changes the output") {
        auto p2 = predict_p(cond2, e_h, e_n, noisy, m);
        double diff = 0.0;
        for (std::size_t i = 0; i < p->size(); ++i) diff += std::abs(p->data[i] - p2->data[i]);
        CHECK(diff > 1e-9);
    }
    SUBCASE("length above max_len rejected") {
        auto long_noisy = random_tensor({m.cfg.max_len + 1, m.cfg.frame_width()}, rng, false);
        CHECK_THROWS_AS(predict_p(cond, e_h, m.encode_noise(long_noisy), long_noisy, m),
                        ContractError);
    }
    SUBCASE("causal: editing frame j leaves earlier predictions unchanged") {
        auto base = predict_p(cond, e_h, m.encode_noise(noisy), noisy, m);
        for (std::size_t j : {std::size_t(2), std::size_t(4)}) {
            auto edited = noisy->data;
            edited[j * m.cfg.frame_width() + 1] += 1.5;
            auto frames = make_tensor({5, m.cfg.frame_width()}, edited);
            // the summary noise embedding sees everything, so hold it fixed
            auto out = predict_p(cond, e_h, e_n, frames, m);
            for (std::size_t t = 0; t < j; ++t)
                for (std::size_t c = 0; c < m.cfg.frame_width(); ++c)
                    CHECK(std::abs(out->data[t * m.cfg.frame_width() + c] -
                                   base->data[t * m.cfg.frame_width() + c]) < 1e-12);
        }
    }
}

TEST_CASE("diffusion loss differentiable in the condition embedding") {
    ModelConfig cfg = tiny_cfg();
    cfg.producer_blocks = 1;
    PredictorModel m = PredictorModel::build(cfg, 11);
    Rng rng(6);
    auto cond = random_tensor({cfg.d_model}, rng, true, 0.5);
    auto noisy = random_tensor({2, cfg.frame_width()}, rng, false, 0.5);
    auto target = random_tensor({2, cfg.frame_width()}, rng, false, 0.5);
    check_gradients(
        [&] {
            return mse(predict_p(cond, m.encode_step(1), m.encode_noise(noisy), noisy, m),
                       target);
        },
        {cond});
}

TEST_CASE("predict_length endpoints") {
    PredictorModel m = PredictorModel::build(tiny_cfg(), 3);
    auto zero_mlp = [&](Mlp& mlp, double bias) {
        for (auto* lin : {&mlp.fc1, &mlp.fc2}) {
            std::fill(lin->w->data.begin(), lin->w->data.end(), 0.0);
            std::fill(lin->b->data.begin(), lin->b->data.end(), 0.0);
        }
        mlp.fc2.b->data[0] = bias;
    };
    Rng rng(2);
    auto cond = random_tensor({m.cfg.d_model}, rng, false);

    zero_mlp(m.len_text, 0.0);
    CHECK(predict_length(cond, m.len_text, m.cfg.max_len) == 1);
    zero_mlp(m.len_text, std::log(12.0));
    CHECK(predict_length(cond, m.len_text, m.cfg.max_len) == 12);
    zero_mlp(m.len_text, std::log(10.0 * m.cfg.max_len));
    CHECK(predict_length(cond, m.len_text, m.cfg.max_len) == m.cfg.max_len);
    zero_mlp(m.len_text, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(predict_length(cond, m.len_text, m.cfg.max_len), GenerationError);
}

TEST_CASE("sampling: zero alphas return the start sequence") {
    PredictorModel m = PredictorModel::build(tiny_cfg(), 3);
    DiffusionSchedule s;
    s.steps = 3;
    s.delta = {1.0, 1.0, 1.0, 1.0};
    s.alpha = {0.0, 0.0, 0.0};
    GenerationConfig gen;
    gen.noise_injection_std = 0.0;
    gen.init_noise_std = 0.0;
    std::vector<double> pose(m.cfg.frame_width());
    for (std::size_t i = 0; i < pose.size(); ++i) pose[i] = 0.1 * static_cast<double>(i);
    Rng rng(8);
    auto cond = random_tensor({m.cfg.d_model}, rng, false);
    SignSequence out = sample_sequence(cond, m, s, 4, gen, pose, Modality::text);
    REQUIRE(out.frames() == 4);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t c = 0; c < pose.size(); ++c)
            CHECK(out.frame(t)[c] == doctest::Approx(pose[c]).epsilon(1e-15));
}

TEST_CASE("sampling determinism and averaging") {
    PredictorModel m = PredictorModel::build(tiny_cfg(), 3);
    DiffusionSchedule s = build_schedule(4);
    GenerationConfig gen;
    gen.seed = 31;
    std::vector<double> pose(m.cfg.frame_width(), 0.05);
    Rng rng(8);
    auto cond = random_tensor({m.cfg.d_model}, rng, false);

    SignSequence a = sample_sequence(cond, m, s, 6, gen, pose, Modality::text);
    SignSequence b = sample_sequence(cond, m, s, 6, gen, pose, Modality::text);
    CHECK(a.data == b.data);

    SUBCASE("zero-noise averaging equals a single sample") {
        GenerationConfig quiet = gen;
        quiet.noise_injection_std = 0.0;
        quiet.init_noise_std = 0.0;
        quiet.num_averaged = 5;
        SignSequence single = sample_sequence(cond, m, s, 6, quiet, pose, Modality::text);
        SignSequence avg = generate_averaged(cond, m, s, quiet, pose, Modality::text, 6);
        REQUIRE(avg.data.size() == single.data.size());
        for (std::size_t i = 0; i < avg.data.size(); ++i)
            CHECK(avg.data[i] == doctest::Approx(single.data[i]).epsilon(1e-12));
    }
    SUBCASE("averaging reduces output variance across meta-seeds") {
        const std::size_t len = 6;
        auto run = [&](std::size_t n_avg, std::uint64_t seed) {
            GenerationConfig g = gen;
            g.seed = seed;
            g.num_averaged = n_avg;
            return generate_averaged(cond, m, s, g, pose, Modality::text, len);
        };
        const std::size_t trials = 12;
        std::vector<SignSequence> singles, avgs;
        for (std::size_t t = 0; t < trials; ++t) {
            singles.push_back(run(1, 1000 + t));
            avgs.push_back(run(8, 2000 + t));
        }
        auto coord_var = [&](const std::vector<SignSequence>& seqs) {
            double var = 0.0;
            const std::size_t width = seqs[0].data.size();
            for (std::size_t c = 0; c < width; ++c) {
                double mean = 0.0;
                for (const auto& q : seqs) mean += q.data[c];
                mean /= static_cast<double>(seqs.size());
                for (const auto& q : seqs) var += (q.data[c] - mean) * (q.data[c] - mean);
            }
            return var / static_cast<double>(width * trials);
        };
        CHECK(coord_var(avgs) <= coord_var(singles));
    }
}

TEST_CASE("overfit fixture: more refinement steps reconstruct better") {
    // one-sample corpus, tiny model, enough epochs to overfit
    CorpusConfig ccfg;
    ccfg.motif.vocab_size = 4;
    ccfg.motif.joints = 2;
    ccfg.motif.coords = 2;
    ccfg.sample_count = 1;
    ccfg.min_tokens = 2;
    ccfg.max_tokens = 2;
    ccfg.audio_missing_fraction = 0.0;
    ccfg.dev_fraction = 0.0;
    ccfg.test_fraction = 0.0;
    Corpus corpus = synthesize_corpus(ccfg, 21);
    REQUIRE(corpus.split.train.size() == 1);

    ModelConfig mcfg = tiny_cfg();
    mcfg.text_feat_dim = 64;
    mcfg.max_len = 32;
    PredictorModel model = PredictorModel::build(mcfg, 5);
    TrainConfig tcfg;
    tcfg.epochs = 150;
    tcfg.batch_size = 1;
    tcfg.lr = 3e-3;
    tcfg.seed = 7;
    tcfg.ecl.warmup_epochs = 10000; // consistency loss stays off
    Trainer trainer(model, corpus, tcfg);
    trainer.train();

    const CorpusSample& sample = corpus.samples[0];
    TensorPtr cond;
    {
        auto feats = extract_text_features(
            sample.tokens, derive_seed(corpus.seed, 0x66656174ull), corpus.cfg.features);
        cond = model.encode_text_features(
            make_tensor({sample.tokens.ids.size(), ccfg.features.text_feat_dim}, feats));
    }
    GenerationConfig gen;
    gen.seed = 3;
    gen.noise_injection_std = 0.0;
    auto mse_to_gt = [&](std::size_t steps) {
        const DiffusionSchedule s = build_schedule(steps);
        SignSequence out = sample_sequence(cond, model, s, sample.sign.frames(), gen,
                                           corpus.mean_first_pose, Modality::text);
        double err = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            const double d = out.data[i] - sample.sign.data[i];
            err += d * d;
        }
        return err / static_cast<double>(out.data.size());
    };
    CHECK(mse_to_gt(10) < mse_to_gt(1));
}
