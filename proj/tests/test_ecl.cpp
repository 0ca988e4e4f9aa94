#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
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
    cfg.text_feat_dim = 64;
    cfg.audio_feat_dim = 16;
    cfg.joints = 2;
    cfg.coords = 2;
    cfg.steps = 4;
    cfg.max_len = 32;
    cfg.producer_blocks = 1;
    cfg.encoder_blocks = 1;
    return cfg;
}

CorpusConfig tiny_corpus_cfg(std::size_t samples, double missing) {
    CorpusConfig cfg;
    cfg.motif.vocab_size = 5;
    cfg.motif.joints = 2;
    cfg.motif.coords = 2;
    cfg.motif.motif_frames = 6;
    cfg.sample_count = samples;
    cfg.min_tokens = 2;
    cfg.max_tokens = 3;
    cfg.audio_missing_fraction = missing;
    cfg.dev_fraction = 0.0;
    cfg.test_fraction = 0.0;
    return cfg;
}

} // namespace

TEST_CASE("embedding error") {
    CHECK(embedding_error({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(embedding_error({1, 0}, {0, 1}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(embedding_error({1, 0}, {0, 1}) == doctest::Approx(1.41421).epsilon(1e-4));
    // norm homogeneity
    Rng rng(3);
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const double base = embedding_error(a, b);
    std::vector<double> a3 = a, b3 = b;
    for (auto& v : a3) v *= 3.0;
    for (auto& v : b3) v *= 3.0;
    CHECK(embedding_error(a3, b3) == doctest::Approx(3.0 * base).epsilon(1e-12));
    CHECK_THROWS_AS(embedding_error({1, 2}, {1, 2, 3}), ContractError);
}

TEST_CASE("consistency losses on shared seeds") {
    PredictorModel m = PredictorModel::build(tiny_cfg(), 9);
    DiffusionSchedule s = build_schedule(m.cfg.steps);
    EclConfig cfg;
    cfg.rollout_steps = 2;
    std::vector<double> pose(m.cfg.frame_width(), 0.1);
    Rng rng(5);
    auto e_t = random_tensor({m.cfg.d_model}, rng, false, 0.5);
    auto e_a = random_tensor({m.cfg.d_model}, rng, false, 0.5);

    SUBCASE("identical conditions give exactly zero") {
        auto loss = ecl_triplet_loss(e_t, e_t, m, s, cfg, 4, 77, pose);
        CHECK(loss->data[0] == 0.0);
    }
    SUBCASE("non-negative on distinct conditions") {
        auto loss = ecl_triplet_loss(e_t, e_a, m, s, cfg, 4, 77, pose);
        CHECK(loss->data[0] >= 0.0);
    }
    SUBCASE("unpaired loss is the triplet loss against the mapped embedding") {
        auto unpaired = ecl_unpaired_loss(e_t, m, s, cfg, 4, 77, pose);
        auto pseudo = m.map_to_pseudo_audio(e_t);
        auto direct = ecl_triplet_loss(e_t, pseudo, m, s, cfg, 4, 77, pose);
        CHECK(unpaired->data[0] == doctest::Approx(direct->data[0]).epsilon(1e-15));
        CHECK(unpaired->data[0] >= 0.0);
    }
    SUBCASE("fidelity variant applies the map to the sign embedding") {
        EclConfig printed = cfg;
        printed.map_after_sign_embedding = true;
        auto a = ecl_unpaired_loss(e_t, m, s, cfg, 4, 77, pose);
        auto b = ecl_unpaired_loss(e_t, m, s, printed, 4, 77, pose);
        CHECK(a->data[0] != b->data[0]);
    }
}

TEST_CASE("triplet loss gradient matches finite differences on a one-step toy") {
    ModelConfig mc = tiny_cfg();
    mc.steps = 1;
    PredictorModel m = PredictorModel::build(mc, 13);
    DiffusionSchedule s = build_schedule(1);
    EclConfig cfg;
    cfg.rollout_steps = 1;
    std::vector<double> pose(m.cfg.frame_width(), 0.05);
    Rng rng(21);
    auto e_t = random_tensor({m.cfg.d_model}, rng, true, 0.5);
    auto e_a = random_tensor({m.cfg.d_model}, rng, false, 0.5);
    check_gradients([&] { return ecl_triplet_loss(e_t, e_a, m, s, cfg, 2, 5, pose); }, {e_t});
}

TEST_CASE("ecl_total gating and arithmetic") {
    EclConfig cfg;
    cfg.warmup_epochs = 500;
    std::vector<TensorPtr> d_terms = {scalar(0.3)};
    std::vector<TensorPtr> u_terms = {scalar(0.3)};
    CHECK(ecl_total(d_terms, u_terms, 0, cfg)->data[0] == 0.0);
    CHECK(ecl_total(d_terms, u_terms, 499, cfg)->data[0] == 0.0);
    CHECK(ecl_total(d_terms, u_terms, 500, cfg)->data[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(ecl_total(d_terms, {}, 500, cfg)->data[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(ecl_total({scalar(0.2), scalar(0.4)}, {}, 500, cfg)->data[0] ==
          doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("total loss weighting") {
    EclConfig cfg; // lambdas default to 1
    LossReport r = total_loss(0.5, 0.2, 0.3, cfg);
    CHECK(r.total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(r.total - (cfg.lambda1 * r.l_d + cfg.lambda2 * r.l_ecl +
                              cfg.lambda3 * r.l_nce)) < 1e-9);

    EclConfig no_ecl = cfg;
    no_ecl.lambda2 = 0.0;
    CHECK(total_loss(0.5, 123.0, 0.3, no_ecl).total == doctest::Approx(0.8).epsilon(1e-12));

    // linear in each component
    EclConfig w;
    w.lambda1 = 2.0;
    w.lambda2 = 0.5;
    w.lambda3 = 3.0;
    const double base = total_loss(0.1, 0.2, 0.3, w).total;
    CHECK(total_loss(0.2, 0.2, 0.3, w).total - base == doctest::Approx(2.0 * 0.1).epsilon(1e-12));
    CHECK(total_loss(0.1, 0.4, 0.3, w).total - base == doctest::Approx(0.5 * 0.2).epsilon(1e-12));

    CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0, cfg), TrainingError);
    try {
        total_loss(0, std::numeric_limits<double>::infinity(), 0, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("consistency") != std::string::npos);
    }
}

TEST_CASE("training epoch basics") {
    Corpus corpus = synthesize_corpus(tiny_corpus_cfg(6, 0.5), 3);
    ModelConfig mc = tiny_cfg();
    PredictorModel model = PredictorModel::build(mc, 4);

    SUBCASE("zero learning rate leaves parameters unchanged") {
        TrainConfig tc;
        tc.epochs = 1;
        tc.lr = 0.0;
        tc.batch_size = 3;
        tc.ecl.warmup_epochs = 0; // consistency active from the start
        tc.ecl_samples_per_epoch = 2;
        std::vector<std::vector<double>> before;
        for (const auto& t : model.params.tensors()) before.push_back(t->data);
        Trainer trainer(model, corpus, tc);
        LossReport r = trainer.run_epoch();
        auto after = model.params.tensors();
        for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i]->data == before[i]);
        CHECK(std::abs(r.total - (tc.ecl.lambda1 * r.l_d + tc.ecl.lambda2 * r.l_ecl +
                                  tc.ecl.lambda3 * r.l_nce)) < 1e-9);
    }
    SUBCASE("consistency term is exactly zero during warmup") {
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 3;
        tc.ecl.warmup_epochs = 500;
        Trainer trainer(model, corpus, tc);
        LossReport r = trainer.run_epoch();
        CHECK(r.l_ecl == 0.0);
        CHECK(r.l_nce > 0.0);
    }
    SUBCASE("non-finite parameters abort with a named component") {
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 3;
        model.params.tensors()[0]->data[0] = std::nan("");
        Trainer trainer(model, corpus, tc);
        CHECK_THROWS_AS(trainer.run_epoch(), TrainingError);
    }
}

TEST_CASE("overfit corpus: loss decreases over 50 epochs") {
    CorpusConfig cc = tiny_corpus_cfg(1, 0.0);
    Corpus corpus = synthesize_corpus(cc, 8);
    ModelConfig mc = tiny_cfg();
    PredictorModel model = PredictorModel::build(mc, 4);
    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 1;
    tc.lr = 3e-3;
    tc.ecl.warmup_epochs = 10000;
    Trainer trainer(model, corpus, tc);
    auto reports = trainer.train();
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 10; ++i) early += reports[i].total;
    for (int i = 40; i < 50; ++i) late += reports[i].total;
    CHECK(late < early);
}

TEST_CASE("sign-encoder freeze flag isolates consistency gradients") {
    Corpus corpus = synthesize_corpus(tiny_corpus_cfg(4, 0.5), 19);
    ModelConfig mc = tiny_cfg();

    auto run = [&](bool update_sign_encoder) {
        PredictorModel model = PredictorModel::build(mc, 31);
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 4;
        tc.lr = 1e-3;
        tc.ecl.warmup_epochs = 0;
        tc.ecl.lambda1 = 0.0; // only the consistency term contributes
        tc.ecl.lambda3 = 0.0;
        tc.length_loss_weight = 0.0;
        tc.ecl.update_sign_encoder = update_sign_encoder;
        Trainer trainer(model, corpus, tc);
        trainer.run_epoch();
        std::vector<double> sign_params;
        for (const auto& [name, t] : model.params.items())
            if (name.rfind("enc_sign.", 0) == 0)
                sign_params.insert(sign_params.end(), t->data.begin(), t->data.end());
        return sign_params;
    };
    PredictorModel reference = PredictorModel::build(mc, 31);
    std::vector<double> init;
    for (const auto& [name, t] : reference.params.items())
        if (name.rfind("enc_sign.", 0) == 0)
            init.insert(init.end(), t->data.begin(), t->data.end());

    CHECK(run(false) == init);   // frozen: unchanged by the consistency-only loss
    CHECK(run(true) != init);    // default: it moves
}

TEST_CASE("trained mapping beats a random mapping on unpaired consistency") {
    CorpusConfig cc = tiny_corpus_cfg(24, 0.25);
    Corpus corpus = synthesize_corpus(cc, 51);
    ModelConfig mc = tiny_cfg();
    PredictorModel model = PredictorModel::build(mc, 63);
    TrainConfig tc;
    tc.epochs = 14;
    tc.batch_size = 8;
    tc.lr = 2e-3;
    tc.ecl.warmup_epochs = 4;
    tc.ecl_samples_per_epoch = 8;
    tc.ecl.rollout_steps = 2;
    Trainer trainer(model, corpus, tc);
    trainer.train();

    // held-out unpaired loss with the trained mapping vs a re-randomized one
    EclConfig ecfg = tc.ecl;
    DiffusionSchedule sched = build_schedule(mc.steps);
    auto unpaired_mean = [&] {
        double total = 0.0;
        int n = 0;
        for (std::size_t id : corpus.split.train) {
            if (corpus.audio_present[id]) continue;
            const CorpusSample& sample = corpus.samples[id];
            auto feats = extract_text_features(
                sample.tokens, derive_seed(corpus.seed, 0x66656174ull), corpus.cfg.features);
            auto e_t = model.encode_text_features(
                make_tensor({sample.tokens.ids.size(), cc.features.text_feat_dim}, feats));
            total += ecl_unpaired_loss(e_t, model, sched, ecfg, 4, 500 + id,
                                       corpus.mean_first_pose)
                         ->data[0];
            ++n;
        }
        REQUIRE(n > 0);
        return total / n;
    };
    const double trained = unpaired_mean();
    Rng wreck(999);
    for (const auto& [name, t] : model.params.items())
        if (name.rfind("mapping.", 0) == 0)
            for (double& v : t->data) v = wreck.normal() * 0.5;
    const double random_map = unpaired_mean();
    CHECK(trained < random_map);
}
