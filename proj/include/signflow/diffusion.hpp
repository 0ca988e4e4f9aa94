#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "signflow/encoders.hpp"
#include "signflow/sequence.hpp"

namespace signflow {

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// delta[h-1] holds the schedule value for step h (h = 1..H+1),
// alpha[h-1] the blend weight for step h (h = 1..H).
struct DiffusionSchedule {
    std::size_t steps = 0; // H; 0 means direct regression, no refinement
    std::vector<double> delta;
    std::vector<double> alpha;
};

// delta_h = min(1, 1/ln(h+1)), alpha_h = delta_h - delta_{h+1}.
DiffusionSchedule build_schedule(std::size_t steps);

struct ModelConfig {
    std::size_t d_model = 64; // embedding width and attention width
    std::size_t heads = 4;
    std::size_t mlp_hidden = 128;
    std::size_t text_feat_dim = 64;
    std::size_t audio_feat_dim = 16;
    std::size_t joints = 8;
    std::size_t coords = 2;
    std::size_t steps = 10; // H
    std::size_t max_len = 64;
    std::size_t producer_blocks = 6;
    std::size_t encoder_blocks = 2;

    std::size_t frame_width() const { return joints * coords; }
};

enum class Modality { text, audio };

// The full generation model: five encoders, the causal producer, per-modality
// length predictors and the text-to-pseudo-audio mapping network. All
// trainables live in one ordered store.
struct PredictorModel {
    ModelConfig cfg;
    ParamStore params;
    EncoderStack enc_text, enc_audio, enc_sign, enc_noise;
    StepEncoder enc_step;
    Linear frame_proj;
    std::vector<AttentionBlock> producer;
    Mlp out_proj;  // the two fully connected output layers
    Mlp len_text, len_audio;
    Mlp mapping;

    static PredictorModel build(const ModelConfig& cfg, std::uint64_t seed);

    TensorPtr encode_text_features(const TensorPtr& feats) const { return enc_text.encode(feats); }
    TensorPtr encode_audio_features(const TensorPtr& feats) const { return enc_audio.encode(feats); }
    TensorPtr encode_sign(const TensorPtr& frames) const { return enc_sign.encode(frames); }
    TensorPtr encode_noise(const TensorPtr& frames) const { return enc_noise.encode(frames); }
    TensorPtr encode_step(std::size_t h) const { return enc_step.encode(h); }
    TensorPtr map_to_pseudo_audio(const TensorPtr& text_emb) const;
    const Mlp& length_predictor(Modality m) const {
        return m == Modality::text ? len_text : len_audio;
    }
};

struct GenerationConfig {
    std::size_t num_averaged = 20;
    double noise_injection_std = 0.1;
    double init_noise_std = 0.1;
    std::uint64_t seed = 0;
};

TensorPtr to_tensor(const SignSequence& s);
SignSequence to_sequence(const std::vector<double>& data, std::size_t joints, std::size_t coords,
                         double frame_rate = 25.0);

// One producer pass: the condition, step and noise embeddings occupy the first
// three positions, followed by target_len projected noisy frames; causal
// attention runs over all positions and the frame slots are projected back to
// keypoint rows.
TensorPtr predict_p(const TensorPtr& condition, const TensorPtr& e_h, const TensorPtr& e_n,
                    const TensorPtr& noisy_frames, const PredictorModel& model);

// Elementwise convex blend alpha*p + (1-alpha)*prev.
SignSequence refine_step(const SignSequence& p, const SignSequence& prev, double alpha);

// Regression target alpha*s0 + (1-alpha)*s_next for the step prediction.
SignSequence training_target(const SignSequence& s0, const SignSequence& s_next, double alpha);

SignSequence inject_noise(const SignSequence& s, double sigma, std::uint64_t seed);

std::size_t predict_length(const TensorPtr& condition, const Mlp& length_predictor,
                           std::size_t max_len);

// Iterative refinement from a tiled mean-first-pose start. With steps == 0 the
// single direct prediction is returned. training_mode keeps the final-step
// noise injection that inference drops.
SignSequence sample_sequence(const TensorPtr& condition, const PredictorModel& model,
                             const DiffusionSchedule& schedule,
                             std::optional<std::size_t> len_override, const GenerationConfig& gen,
                             const std::vector<double>& mean_first_pose, Modality modality,
                             bool training_mode = false);

// Differentiable truncated rollout for consistency losses; gradients flow
// through every refinement step. Noise draws depend only on (seed, step), so
// two conditions rolled out with the same seed share the same noise.
TensorPtr sample_rollout(const TensorPtr& condition, const PredictorModel& model,
                         const DiffusionSchedule& schedule, std::size_t steps_used,
                         std::size_t len, std::uint64_t seed, double noise_std,
                         double init_noise_std, const std::vector<double>& mean_first_pose);

// Framewise mean of num_averaged samples drawn at the modal predicted length.
SignSequence generate_averaged(const TensorPtr& condition, const PredictorModel& model,
                               const DiffusionSchedule& schedule, const GenerationConfig& gen,
                               const std::vector<double>& mean_first_pose, Modality modality,
                               std::optional<std::size_t> len_override = std::nullopt);

} // namespace signflow
