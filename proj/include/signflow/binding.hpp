#pragma once

#include <vector>

#include "signflow/tensor.hpp"

namespace signflow {

enum class ModalPair { text_sign, text_audio, audio_sign };

struct BindingConfig {
    double temperature = 0.07;
    // Eq.-literal InfoNCE scores anchors against positives only; the symmetric
    // form averages both directions and is the training default.
    bool symmetric = true;
    std::vector<ModalPair> active_pairs{ModalPair::text_sign, ModalPair::text_audio};
};

// Index-aligned unit-norm embedding pairs within one minibatch.
struct PairBatch {
    std::vector<TensorPtr> anchors;
    std::vector<TensorPtr> positives;
};

// Dot product of unit-norm embeddings.
TensorPtr cosine_sim(const TensorPtr& a, const TensorPtr& b);

TensorPtr info_nce_loss(const PairBatch& batch, double temperature, bool symmetric = true);

// Sum of the InfoNCE terms of the pair batches that are present; batches whose
// modality pair is inactive or that lack data contribute nothing.
TensorPtr triadic_loss(const std::vector<std::pair<ModalPair, PairBatch>>& batches,
                       const BindingConfig& cfg);

// Mean matched cosine minus mean mismatched cosine over index-aligned
// text/audio embeddings. Inputs are raw vectors (no gradient flow).
double emergent_alignment_score(const std::vector<std::vector<double>>& text_embs,
                                const std::vector<std::vector<double>>& audio_embs);

} // namespace signflow
