#include "signflow/ecl.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "signflow/rng.hpp"

namespace signflow {

namespace {

constexpr std::uint64_t kTagEpoch = 0x65706f6368ull;
constexpr std::uint64_t kTagCorrupt = 0x636f7272ull;
constexpr std::uint64_t kTagInitState = 0x696e7374ull;
constexpr std::uint64_t kTagTargetNoise = 0x746e6f69ull;
constexpr std::uint64_t kTagRollout = 0x726f6c6cull;
constexpr std::uint64_t kTagFeatures = 0x66656174ull;

} // namespace

double embedding_error(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw ContractError("embedding_error: length mismatch: " + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

TensorPtr ecl_triplet_loss(const TensorPtr& e_t, const TensorPtr& e_a,
                           const PredictorModel& model, const DiffusionSchedule& schedule,
                           const EclConfig& cfg, std::size_t len, std::uint64_t seed,
                           const std::vector<double>& mean_first_pose) {
    TensorPtr gen_t = sample_rollout(e_t, model, schedule, cfg.rollout_steps, len, seed,
                                     cfg.rollout_noise_std, cfg.rollout_init_std,
                                     mean_first_pose);
    TensorPtr gen_a = sample_rollout(e_a, model, schedule, cfg.rollout_steps, len, seed,
                                     cfg.rollout_noise_std, cfg.rollout_init_std,
                                     mean_first_pose);
    return euclidean_distance(model.encode_sign(gen_a), model.encode_sign(gen_t));
}

TensorPtr ecl_unpaired_loss(const TensorPtr& e_t, const PredictorModel& model,
                            const DiffusionSchedule& schedule, const EclConfig& cfg,
                            std::size_t len, std::uint64_t seed,
                            const std::vector<double>& mean_first_pose) {
    if (cfg.map_after_sign_embedding) {
        TensorPtr gen = sample_rollout(e_t, model, schedule, cfg.rollout_steps, len, seed,
                                       cfg.rollout_noise_std, cfg.rollout_init_std,
                                       mean_first_pose);
        TensorPtr emb = model.encode_sign(gen);
        return euclidean_distance(model.map_to_pseudo_audio(emb), emb);
    }
    TensorPtr pseudo = model.map_to_pseudo_audio(e_t);
    return ecl_triplet_loss(e_t, pseudo, model, schedule, cfg, len, seed, mean_first_pose);
}

TensorPtr ecl_total(const std::vector<TensorPtr>& triplet_terms,
                    const std::vector<TensorPtr>& unpaired_terms, std::size_t epoch,
                    const EclConfig& cfg) {
    if (epoch < cfg.warmup_epochs) return scalar(0.0);
    auto mean_of = [](const std::vector<TensorPtr>& terms) -> TensorPtr {
        TensorPtr acc;
        for (const auto& t : terms) acc = acc ? add(acc, t) : t;
        return scale(acc, 1.0 / static_cast<double>(terms.size()));
    };
    TensorPtr total;
    if (!triplet_terms.empty()) total = mean_of(triplet_terms);
    if (!unpaired_terms.empty()) {
        TensorPtr u = mean_of(unpaired_terms);
        total = total ? add(total, u) : u;
    }
    return total ? total : scalar(0.0);
}

LossReport total_loss(double l_d, double l_ecl, double l_nce, const EclConfig& cfg) {
    if (!std::isfinite(l_d)) throw TrainingError("total_loss: diffusion component is non-finite");
    if (!std::isfinite(l_ecl))
        throw TrainingError("total_loss: consistency component is non-finite");
    if (!std::isfinite(l_nce)) throw TrainingError("total_loss: binding component is non-finite");
    LossReport r;
    r.l_d = l_d;
    r.l_ecl = l_ecl;
    r.l_nce = l_nce;
    r.total = cfg.lambda1 * l_d + cfg.lambda2 * l_ecl + cfg.lambda3 * l_nce;
    return r;
}

Trainer::Trainer(PredictorModel& model, const Corpus& corpus, const TrainConfig& cfg)
    : model_(model), corpus_(corpus), cfg_(cfg) {
    if (model.cfg.steps > 0) schedule_ = build_schedule(model.cfg.steps);
    opt_.lr = cfg.lr;
    ema_.decay = cfg.ema_decay;
    ema_init(ema_, model_.params.tensors());
    state_weights_.assign(schedule_.steps + 1, 1.0);
    for (std::size_t k = 1; k <= schedule_.steps; ++k)
        state_weights_[k] = state_weights_[k - 1] * (1.0 - schedule_.alpha[k - 1]);
    for (std::size_t id : corpus_.split.train)
        if (corpus_.samples[id].sign.frames() > model_.cfg.max_len)
            throw ContractError("Trainer: training sample " + std::to_string(id) + " has " +
                                std::to_string(corpus_.samples[id].sign.frames()) +
                                " frames > max_len " + std::to_string(model_.cfg.max_len));
}

LossReport Trainer::run_epoch(std::ostream* log) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t width = model_.cfg.frame_width();
    const std::size_t H = schedule_.steps;
    Rng erng(derive_seed(cfg_.seed, kTagEpoch + epoch_));

    std::vector<std::size_t> order = corpus_.split.train;
    erng.shuffle(order);
    if (cfg_.samples_per_epoch > 0 && cfg_.samples_per_epoch < order.size())
        order.resize(cfg_.samples_per_epoch);

    const bool ecl_active = epoch_ >= cfg_.ecl.warmup_epochs && cfg_.ecl.lambda2 != 0.0;
    std::size_t ecl_budget = ecl_active ? cfg_.ecl_samples_per_epoch : 0;
    if (ecl_active && cfg_.ecl_samples_per_epoch == 0) ecl_budget = order.size();

    double sum_d = 0.0, sum_ecl = 0.0, sum_nce = 0.0;
    double sum_ts = 0.0, sum_ta = 0.0, sum_as = 0.0;
    std::size_t n_batches = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
        const std::size_t bsz = end - begin;

        std::vector<TensorPtr> diffusion_terms, ecl_d_terms, ecl_u_terms;
        PairBatch ts_batch, ta_batch, as_batch;

        for (std::size_t bi = begin; bi < end; ++bi) {
            const CorpusSample& sample = corpus_.samples[order[bi]];
            const std::uint64_t sseed =
                derive_seed(cfg_.seed, mix64(kTagEpoch + epoch_) ^ (sample.sample_id + 1));
            Rng srng(sseed);

            TensorPtr text_feats = make_tensor(
                {sample.tokens.ids.size(), corpus_.cfg.features.text_feat_dim},
                extract_text_features(sample.tokens, derive_seed(corpus_.seed, kTagFeatures),
                                      corpus_.cfg.features));
            TensorPtr e_t = model_.encode_text_features(text_feats);
            TensorPtr e_a;
            if (sample.audio) {
                TensorPtr audio_feats =
                    make_tensor({sample.audio->frame_count(), sample.audio->feat_dim},
                                sample.audio->frames);
                e_a = model_.encode_audio_features(audio_feats);
            }
            TensorPtr sign_frames = to_tensor(sample.sign);
            TensorPtr e_s = model_.encode_sign(sign_frames);

            const SignSequence& s0 = sample.sign;
            const std::size_t len = s0.frames();
            const std::size_t h = H == 0 ? 0 : 1 + srng.below(H);

            // teacher state entering step h on the idealized trajectory:
            // w_k of the start pose blend remains after k refinements
            SignSequence input_state = s0;
            {
                Rng r(derive_seed(sseed, kTagInitState));
                const double w = H == 0 ? 1.0 : state_weights_[h - 1];
                for (std::size_t t = 0; t < len; ++t)
                    for (std::size_t c = 0; c < width; ++c) {
                        const double init =
                            corpus_.mean_first_pose[c] + cfg_.init_noise_std * r.normal();
                        input_state.data[t * width + c] =
                            w * init + (1.0 - w) * s0.data[t * width + c];
                    }
                if (H > 0) {
                    const double sigma = cfg_.train_noise_std * (1.0 - schedule_.delta[h - 1]);
                    if (sigma > 0.0)
                        input_state =
                            inject_noise(input_state, sigma, derive_seed(sseed, kTagCorrupt + h));
                }
            }

            SignSequence target = s0;
            if (H > 0) {
                const double sigma_next = cfg_.train_noise_std * (1.0 - schedule_.delta[h]);
                SignSequence s_next =
                    inject_noise(s0, sigma_next, derive_seed(sseed, kTagTargetNoise + h));
                target = training_target(s0, s_next, schedule_.alpha[h - 1]);
            }
            TensorPtr target_t = make_tensor({len, width}, target.data);
            TensorPtr input_t = make_tensor({len, width}, input_state.data);

            auto stream_loss = [&](const TensorPtr& cond) {
                TensorPtr p = predict_p(cond, model_.encode_step(h),
                                        model_.encode_noise(input_t), input_t, model_);
                return mse(p, target_t);
            };
            TensorPtr d_term = stream_loss(e_t);
            if (e_a) d_term = scale(add(d_term, stream_loss(e_a)), 0.5);

            // length prediction, trained on the log frame count
            TensorPtr len_target = make_tensor({1, 1}, {std::log(static_cast<double>(len))});
            TensorPtr len_term = mse(
                model_.len_text.forward(reshape(e_t, {1, model_.cfg.d_model})), len_target);
            if (e_a)
                len_term = add(len_term,
                               mse(model_.len_audio.forward(reshape(e_a, {1, model_.cfg.d_model})),
                                   len_target));
            d_term = add(d_term, scale(len_term, cfg_.length_loss_weight));
            diffusion_terms.push_back(d_term);

            ts_batch.anchors.push_back(l2_normalize(e_t));
            ts_batch.positives.push_back(l2_normalize(e_s));
            if (e_a) {
                ta_batch.anchors.push_back(l2_normalize(e_t));
                ta_batch.positives.push_back(l2_normalize(e_a));
                as_batch.anchors.push_back(l2_normalize(e_a));
                as_batch.positives.push_back(l2_normalize(e_s));
            }

            if (ecl_budget > 0) {
                --ecl_budget;
                const std::size_t rlen = std::min(len, cfg_.ecl.max_rollout_len);
                const std::uint64_t rseed = derive_seed(sseed, kTagRollout);
                if (e_a) {
                    TensorPtr trip =
                        ecl_triplet_loss(e_t, e_a, model_, schedule_, cfg_.ecl, rlen, rseed,
                                         corpus_.mean_first_pose);
                    TensorPtr aux = euclidean_distance(model_.map_to_pseudo_audio(e_t), e_a);
                    ecl_d_terms.push_back(add(trip, scale(aux, cfg_.ecl.map_aux_weight)));
                } else {
                    ecl_u_terms.push_back(ecl_unpaired_loss(e_t, model_, schedule_, cfg_.ecl,
                                                            rlen, rseed,
                                                            corpus_.mean_first_pose));
                }
            }
        }

        auto mean_of = [](std::vector<TensorPtr>& terms) -> TensorPtr {
            TensorPtr acc;
            for (auto& t : terms) acc = acc ? add(acc, t) : t;
            return scale(acc, 1.0 / static_cast<double>(terms.size()));
        };

        TensorPtr l_d = mean_of(diffusion_terms);

        TensorPtr nce_ts, nce_ta, nce_as;
        std::vector<std::pair<ModalPair, PairBatch>> batches;
        batches.emplace_back(ModalPair::text_sign, ts_batch);
        batches.emplace_back(ModalPair::text_audio, ta_batch);
        batches.emplace_back(ModalPair::audio_sign, as_batch);
        TensorPtr l_nce = triadic_loss(batches, cfg_.binding);
        {
            auto active = [&](ModalPair p) {
                return std::find(cfg_.binding.active_pairs.begin(),
                                 cfg_.binding.active_pairs.end(),
                                 p) != cfg_.binding.active_pairs.end();
            };
            if (active(ModalPair::text_sign) && ts_batch.anchors.size() >= 2)
                nce_ts = info_nce_loss(ts_batch, cfg_.binding.temperature,
                                       cfg_.binding.symmetric);
            if (active(ModalPair::text_audio) && ta_batch.anchors.size() >= 2)
                nce_ta = info_nce_loss(ta_batch, cfg_.binding.temperature,
                                       cfg_.binding.symmetric);
            if (active(ModalPair::audio_sign) && as_batch.anchors.size() >= 2)
                nce_as = info_nce_loss(as_batch, cfg_.binding.temperature,
                                       cfg_.binding.symmetric);
        }

        TensorPtr l_ecl = ecl_total(ecl_d_terms, ecl_u_terms, epoch_, cfg_.ecl);

        // NaN abort with the offending component named
        (void)total_loss(l_d->data[0], l_ecl->data[0], l_nce->data[0], cfg_.ecl);

        model_.params.zero_grads();
        if (cfg_.ecl.update_sign_encoder || !l_ecl->requires_grad) {
            TensorPtr total =
                add(add(scale(l_d, cfg_.ecl.lambda1), scale(l_ecl, cfg_.ecl.lambda2)),
                    scale(l_nce, cfg_.ecl.lambda3));
            backward(total);
        } else {
            // consistency gradients are dropped on the sign encoder: run the
            // consistency pass separately and restore those grads afterwards
            backward(add(scale(l_d, cfg_.ecl.lambda1), scale(l_nce, cfg_.ecl.lambda3)));
            std::vector<std::pair<TensorPtr, std::vector<double>>> saved;
            for (const auto& [name, t] : model_.params.items())
                if (name.rfind("enc_sign.", 0) == 0) saved.emplace_back(t, t->grad);
            backward(scale(l_ecl, cfg_.ecl.lambda2));
            for (auto& [t, g] : saved) t->grad = std::move(g);
        }
        adam_step(model_.params.tensors(), opt_);
        ema_.decay = std::min(cfg_.ema_decay,
                              (1.0 + static_cast<double>(opt_.step)) /
                                  (10.0 + static_cast<double>(opt_.step)));
        ema_update(ema_, model_.params.tensors());

        const double w = static_cast<double>(bsz);
        sum_d += l_d->data[0] * w;
        sum_ecl += l_ecl->data[0] * w;
        sum_nce += l_nce->data[0] * w;
        if (nce_ts) sum_ts += nce_ts->data[0] * w;
        if (nce_ta) sum_ta += nce_ta->data[0] * w;
        if (nce_as) sum_as += nce_as->data[0] * w;
        ++n_batches;
        (void)n_batches;
    }

    const double n = static_cast<double>(order.size());
    LossReport report = total_loss(sum_d / n, sum_ecl / n, sum_nce / n, cfg_.ecl);
    report.epoch = epoch_;
    report.nce_text_sign = sum_ts / n;
    report.nce_text_audio = sum_ta / n;
    report.nce_audio_sign = sum_as / n;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) {
        log->precision(10);
        (*log) << "epoch=" << report.epoch << " l_d=" << report.l_d << " l_ecl=" << report.l_ecl
               << " l_nce=" << report.l_nce << " total=" << report.total << " wall_s=" << wall
               << "\n";
        log->flush();
    }
    epoch_ += 1;
    return report;
}

std::vector<LossReport> Trainer::train(std::ostream* log) {
    std::vector<LossReport> out;
    out.reserve(cfg_.epochs);
    for (std::size_t e = 0; e < cfg_.epochs; ++e) out.push_back(run_epoch(log));
    return out;
}

void apply_ema(PredictorModel& model, const EmaState& ema) {
    auto params = model.params.tensors();
    if (ema.shadow.size() != params.size())
        throw ContractError("apply_ema: shadow/parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = ema.shadow[i];
}

} // namespace signflow
