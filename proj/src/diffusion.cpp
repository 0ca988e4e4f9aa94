#include "signflow/diffusion.hpp"

#include <cmath>

#include "signflow/rng.hpp"

namespace signflow {

namespace {

constexpr std::uint64_t kTagInit = 0x696e6974ull;
constexpr std::uint64_t kTagStep = 0x73746570ull;
constexpr std::uint64_t kTagAvg = 0x617667ull;

void check_same_shape(const SignSequence& a, const SignSequence& b, const char* who) {
    if (a.joints != b.joints || a.coords != b.coords || a.frames() != b.frames())
        throw ContractError(std::string(who) + ": sequence shapes differ: " +
                            std::to_string(a.frames()) + "x" + std::to_string(a.joints) + "x" +
                            std::to_string(a.coords) + " vs " + std::to_string(b.frames()) + "x" +
                            std::to_string(b.joints) + "x" + std::to_string(b.coords));
}

std::vector<double> tiled_init(const std::vector<double>& mean_first_pose, std::size_t len,
                               double init_noise_std, std::uint64_t seed) {
    const std::size_t width = mean_first_pose.size();
    std::vector<double> out(len * width);
    Rng rng(derive_seed(seed, kTagInit));
    for (std::size_t t = 0; t < len; ++t)
        for (std::size_t c = 0; c < width; ++c)
            out[t * width + c] = mean_first_pose[c] + init_noise_std * rng.normal();
    return out;
}

} // namespace

DiffusionSchedule build_schedule(std::size_t steps) {
    if (steps == 0) throw ContractError("build_schedule: step count must be >= 1");
    DiffusionSchedule s;
    s.steps = steps;
    s.delta.resize(steps + 1);
    s.alpha.resize(steps);
    for (std::size_t h = 1; h <= steps + 1; ++h)
        s.delta[h - 1] = std::min(1.0, 1.0 / std::log(static_cast<double>(h + 1)));
    for (std::size_t h = 1; h <= steps; ++h) s.alpha[h - 1] = s.delta[h - 1] - s.delta[h];
    return s;
}

PredictorModel PredictorModel::build(const ModelConfig& cfg, std::uint64_t seed) {
    PredictorModel m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, 0x6d6f64656cull));
    m.enc_text = EncoderStack(m.params, "enc_text", cfg.text_feat_dim, cfg.d_model, cfg.heads,
                              cfg.encoder_blocks, cfg.mlp_hidden, cfg.d_model, true, rng);
    // no positional encoding on the audio encoder: block structure carries no
    // positional meaning and pooling must be stable under block repetition
    m.enc_audio = EncoderStack(m.params, "enc_audio", cfg.audio_feat_dim, cfg.d_model, cfg.heads,
                               cfg.encoder_blocks, cfg.mlp_hidden, cfg.d_model, false, rng);
    m.enc_sign = EncoderStack(m.params, "enc_sign", cfg.frame_width(), cfg.d_model, cfg.heads,
                              cfg.encoder_blocks, cfg.mlp_hidden, cfg.d_model, true, rng);
    m.enc_noise = EncoderStack(m.params, "enc_noise", cfg.frame_width(), cfg.d_model, cfg.heads,
                               cfg.encoder_blocks, cfg.mlp_hidden, cfg.d_model, true, rng);
    m.enc_step = StepEncoder(m.params, "enc_step", cfg.steps, cfg.d_model, cfg.mlp_hidden,
                             cfg.d_model, rng);
    m.frame_proj = Linear(m.params, "producer.frame_in", cfg.frame_width(), cfg.d_model, rng);
    m.producer.reserve(cfg.producer_blocks);
    for (std::size_t i = 0; i < cfg.producer_blocks; ++i)
        m.producer.emplace_back(m.params, "producer.blk" + std::to_string(i), cfg.d_model,
                                cfg.heads, cfg.mlp_hidden, rng);
    m.out_proj = Mlp(m.params, "producer.out", cfg.d_model, cfg.mlp_hidden, cfg.frame_width(), rng);
    m.len_text = Mlp(m.params, "len_text", cfg.d_model, cfg.mlp_hidden, 1, rng);
    m.len_audio = Mlp(m.params, "len_audio", cfg.d_model, cfg.mlp_hidden, 1, rng);
    m.mapping = Mlp(m.params, "mapping", cfg.d_model, cfg.mlp_hidden, cfg.d_model, rng);
    return m;
}

TensorPtr PredictorModel::map_to_pseudo_audio(const TensorPtr& text_emb) const {
    if (text_emb->size() != cfg.d_model)
        throw ContractError("map_to_pseudo_audio: embedding length " +
                            std::to_string(text_emb->size()) + " != " +
                            std::to_string(cfg.d_model));
    return reshape(mapping.forward(reshape(text_emb, {1, cfg.d_model})), {cfg.d_model});
}

TensorPtr to_tensor(const SignSequence& s) {
    return make_tensor({s.frames(), s.frame_width()}, s.data);
}

SignSequence to_sequence(const std::vector<double>& data, std::size_t joints, std::size_t coords,
                         double frame_rate) {
    SignSequence s;
    s.joints = joints;
    s.coords = coords;
    s.frame_rate = frame_rate;
    s.data = data;
    return s;
}

TensorPtr predict_p(const TensorPtr& condition, const TensorPtr& e_h, const TensorPtr& e_n,
                    const TensorPtr& noisy_frames, const PredictorModel& model) {
    const std::size_t d = model.cfg.d_model;
    if (condition->size() != d || e_h->size() != d || e_n->size() != d)
        throw ContractError("predict_p: embedding width mismatch with d_model " +
                            std::to_string(d));
    if (noisy_frames->shape.size() != 2 || noisy_frames->shape[1] != model.cfg.frame_width())
        throw ContractError("predict_p: noisy frames must be [len," +
                            std::to_string(model.cfg.frame_width()) + "], got " +
                            shape_str(noisy_frames->shape));
    const std::size_t len = noisy_frames->shape[0];
    if (len == 0) throw ContractError("predict_p: target length must be >= 1");
    if (len > model.cfg.max_len)
        throw ContractError("predict_p: target length " + std::to_string(len) +
                            " exceeds max_len " + std::to_string(model.cfg.max_len));
    // frame slots carry scaled projections plus frame-local positions; the
    // three leading embeddings are content-only
    TensorPtr frames = add(
        scale(model.frame_proj.forward(noisy_frames), std::sqrt(static_cast<double>(d))),
        make_tensor({len, d}, positional_encoding(len, d)));
    TensorPtr seq = concat_rows(
        {reshape(condition, {1, d}), reshape(e_h, {1, d}), reshape(e_n, {1, d}), frames});
    const std::vector<std::uint8_t> mask = causal_mask(len + 3);
    for (const auto& blk : model.producer) seq = blk.forward(seq, &mask);
    return model.out_proj.forward(slice_rows(seq, 3, 3 + len));
}

SignSequence refine_step(const SignSequence& p, const SignSequence& prev, double alpha) {
    check_same_shape(p, prev, "refine_step");
    if (alpha < 0.0 || alpha > 1.0)
        throw ContractError("refine_step: alpha " + std::to_string(alpha) + " outside [0,1]");
    SignSequence out = prev;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = alpha * p.data[i] + (1.0 - alpha) * prev.data[i];
    return out;
}

SignSequence training_target(const SignSequence& s0, const SignSequence& s_next, double alpha) {
    check_same_shape(s0, s_next, "training_target");
    SignSequence out = s0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = alpha * s0.data[i] + (1.0 - alpha) * s_next.data[i];
    return out;
}

SignSequence inject_noise(const SignSequence& s, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ContractError("inject_noise: negative sigma");
    SignSequence out = s;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    for (double& v : out.data) v += sigma * rng.normal();
    return out;
}

std::size_t predict_length(const TensorPtr& condition, const Mlp& length_predictor,
                           std::size_t max_len) {
    TensorPtr out = length_predictor.forward(
        reshape(condition, {1, condition->size()}));
    const double log_len = out->data[0];
    if (!std::isfinite(log_len))
        throw GenerationError("predict_length: non-finite length prediction");
    const double len = std::round(std::exp(log_len));
    if (len < 1.0) return 1;
    if (len > static_cast<double>(max_len)) return max_len;
    return static_cast<std::size_t>(len);
}

SignSequence sample_sequence(const TensorPtr& condition, const PredictorModel& model,
                             const DiffusionSchedule& schedule,
                             std::optional<std::size_t> len_override, const GenerationConfig& gen,
                             const std::vector<double>& mean_first_pose, Modality modality,
                             bool training_mode) {
    const std::size_t width = model.cfg.frame_width();
    if (mean_first_pose.size() != width)
        throw ContractError("sample_sequence: mean first pose width " +
                            std::to_string(mean_first_pose.size()) + " != " +
                            std::to_string(width));
    const std::size_t len = len_override
                                ? *len_override
                                : predict_length(condition, model.length_predictor(modality),
                                                 model.cfg.max_len);
    std::vector<double> cur = tiled_init(mean_first_pose, len, gen.init_noise_std, gen.seed);
    if (schedule.steps == 0) {
        TensorPtr frames = make_tensor({len, width}, cur);
        TensorPtr p = predict_p(condition, model.encode_step(0), model.encode_noise(frames),
                                frames, model);
        return to_sequence(p->data, model.cfg.joints, model.cfg.coords);
    }
    for (std::size_t h = 1; h <= schedule.steps; ++h) {
        TensorPtr frames = make_tensor({len, width}, cur);
        TensorPtr p = predict_p(condition, model.encode_step(h), model.encode_noise(frames),
                                frames, model);
        const double alpha = schedule.alpha[h - 1];
        for (std::size_t i = 0; i < cur.size(); ++i)
            cur[i] = alpha * p->data[i] + (1.0 - alpha) * cur[i];
        const bool inject = training_mode || h < schedule.steps;
        if (inject && gen.noise_injection_std > 0.0) {
            const double sigma = gen.noise_injection_std * (1.0 - schedule.delta[h]);
            Rng rng(derive_seed(gen.seed, kTagStep + h));
            for (double& v : cur) v += sigma * rng.normal();
        }
    }
    return to_sequence(cur, model.cfg.joints, model.cfg.coords);
}

TensorPtr sample_rollout(const TensorPtr& condition, const PredictorModel& model,
                         const DiffusionSchedule& schedule, std::size_t steps_used,
                         std::size_t len, std::uint64_t seed, double noise_std,
                         double init_noise_std, const std::vector<double>& mean_first_pose) {
    const std::size_t width = model.cfg.frame_width();
    TensorPtr cur =
        make_tensor({len, width}, tiled_init(mean_first_pose, len, init_noise_std, seed));
    if (schedule.steps == 0) {
        return predict_p(condition, model.encode_step(0), model.encode_noise(cur), cur, model);
    }
    const std::size_t used = std::min(steps_used, schedule.steps);
    for (std::size_t h = 1; h <= used; ++h) {
        TensorPtr p = predict_p(condition, model.encode_step(h), model.encode_noise(cur), cur,
                                model);
        const double alpha = schedule.alpha[h - 1];
        cur = add(scale(p, alpha), scale(cur, 1.0 - alpha));
        if (h < used && noise_std > 0.0) {
            const double sigma = noise_std * (1.0 - schedule.delta[h]);
            Rng rng(derive_seed(seed, kTagStep + h));
            std::vector<double> noise(len * width);
            for (double& v : noise) v = sigma * rng.normal();
            cur = add(cur, make_tensor({len, width}, std::move(noise)));
        }
    }
    return cur;
}

SignSequence generate_averaged(const TensorPtr& condition, const PredictorModel& model,
                               const DiffusionSchedule& schedule, const GenerationConfig& gen,
                               const std::vector<double>& mean_first_pose, Modality modality,
                               std::optional<std::size_t> len_override) {
    if (gen.num_averaged == 0)
        throw ContractError("generate_averaged: num_averaged must be >= 1");
    const std::size_t len = len_override ? *len_override
                                         : predict_length(condition,
                                                          model.length_predictor(modality),
                                                          model.cfg.max_len);
    SignSequence acc;
    for (std::size_t i = 0; i < gen.num_averaged; ++i) {
        GenerationConfig g = gen;
        g.seed = derive_seed(gen.seed, kTagAvg + i);
        SignSequence s =
            sample_sequence(condition, model, schedule, len, g, mean_first_pose, modality);
        if (i == 0) {
            acc = std::move(s);
        } else {
            for (std::size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += s.data[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(gen.num_averaged);
    for (double& v : acc.data) v *= inv;
    return acc;
}

} // namespace signflow
