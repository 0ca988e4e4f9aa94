#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "signflow/binding.hpp"
#include "signflow/data.hpp"
#include "signflow/diffusion.hpp"

namespace signflow {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EclConfig {
    std::size_t warmup_epochs = 500;
    double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;
    std::size_t rollout_steps = 3;    // truncated differentiable sampler depth
    std::size_t max_rollout_len = 24; // frame cap for consistency generations
    double rollout_noise_std = 0.1;
    double rollout_init_std = 0.1;
    double map_aux_weight = 1.0;      // anchor of the mapping network to real audio embeddings
    bool map_after_sign_embedding = false; // fidelity variant of the unpaired loss
    bool update_sign_encoder = true;  // whether consistency gradients reach the sign encoder
};

struct LossReport {
    std::size_t epoch = 0;
    double l_d = 0.0, l_ecl = 0.0, l_nce = 0.0, total = 0.0;
    double nce_text_sign = 0.0, nce_text_audio = 0.0, nce_audio_sign = 0.0;
};

// Euclidean distance between two embeddings of equal length.
double embedding_error(const std::vector<double>& a, const std::vector<double>& b);

// Consistency between the audio- and text-conditioned generation streams:
// both are rolled out with shared step noise and compared under the sign
// encoder. Gradients flow into both streams.
TensorPtr ecl_triplet_loss(const TensorPtr& e_t, const TensorPtr& e_a,
                           const PredictorModel& model, const DiffusionSchedule& schedule,
                           const EclConfig& cfg, std::size_t len, std::uint64_t seed,
                           const std::vector<double>& mean_first_pose);

// Text-only samples: the pseudo-audio embedding produced by the mapping
// network replaces the real one.
TensorPtr ecl_unpaired_loss(const TensorPtr& e_t, const PredictorModel& model,
                            const DiffusionSchedule& schedule, const EclConfig& cfg,
                            std::size_t len, std::uint64_t seed,
                            const std::vector<double>& mean_first_pose);

// Mean triplet term over audio-present samples plus mean unpaired term over
// audio-missing ones; exactly zero while the epoch is inside the warmup.
TensorPtr ecl_total(const std::vector<TensorPtr>& triplet_terms,
                    const std::vector<TensorPtr>& unpaired_terms, std::size_t epoch,
                    const EclConfig& cfg);

// Weighted sum of the three components with finite-value validation.
LossReport total_loss(double l_d, double l_ecl, double l_nce, const EclConfig& cfg);

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double ema_decay = 0.999;
    double train_noise_std = 0.1;
    double init_noise_std = 0.1;
    double length_loss_weight = 0.1;
    std::size_t samples_per_epoch = 0;     // 0 = full training split each epoch
    std::size_t ecl_samples_per_epoch = 32;
    std::uint64_t seed = 0;
    BindingConfig binding;
    EclConfig ecl;
};

class Trainer {
public:
    Trainer(PredictorModel& model, const Corpus& corpus, const TrainConfig& cfg);

    // One pass over the (subsampled) training split; one optimizer step per
    // minibatch; EMA update after each step. Appends one line per epoch to
    // log when given.
    LossReport run_epoch(std::ostream* log = nullptr);
    std::vector<LossReport> train(std::ostream* log = nullptr);

    std::size_t epoch() const { return epoch_; }
    const EmaState& ema() const { return ema_; }
    OptimizerState& optimizer() { return opt_; }
    const DiffusionSchedule& schedule() const { return schedule_; }

private:
    PredictorModel& model_;
    const Corpus& corpus_;
    TrainConfig cfg_;
    DiffusionSchedule schedule_;
    OptimizerState opt_;
    EmaState ema_;
    std::size_t epoch_ = 0;
    std::vector<double> state_weights_; // prod_{j<=k}(1 - alpha_j), k = 0..H
};

// Copies the EMA shadow into the live parameters (the inference weights).
void apply_ema(PredictorModel& model, const EmaState& ema);

} // namespace signflow
