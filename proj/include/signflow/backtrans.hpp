#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "signflow/data.hpp"
#include "signflow/nn.hpp"
#include "signflow/sequence.hpp"

namespace signflow {

struct BackTranslatorConfig {
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t mlp_hidden = 128;
    std::size_t blocks = 2;
    std::size_t vocab_size = 20;
    std::size_t frame_width = 16;
    std::size_t max_tokens = 8; // greedy decode bound
};

// Decoder-only sign-to-token model: projected sign frames followed by
// BOS + tokens under one causal mask; logits are read at the token positions.
// The output classes are the vocabulary plus an end marker.
struct BackTranslator {
    BackTranslatorConfig cfg;
    ParamStore params;
    Linear frame_proj;
    TensorPtr token_table; // vocab + 1 rows, BOS last
    std::vector<AttentionBlock> blocks;
    Linear head; // d_model -> vocab + 1, end marker last

    static BackTranslator build(const BackTranslatorConfig& cfg, std::uint64_t seed);

    std::size_t bos_id() const { return cfg.vocab_size; }
    std::size_t end_id() const { return cfg.vocab_size; }

    // Teacher-forcing logits for the given frames and token prefix:
    // [tokens+1, vocab+1].
    TensorPtr logits(const TensorPtr& frames, const std::vector<std::size_t>& tokens) const;

    // Greedy decode until the end marker or max_tokens.
    std::vector<std::size_t> decode(const SignSequence& s) const;
};

struct BackTransTrainConfig {
    std::size_t epochs = 12;
    std::size_t batch_size = 8;
    std::size_t samples_per_epoch = 0; // 0 = full split
    double lr = 1e-3;
    // light augmentation so the decoder tolerates imperfect generations
    double noise_std = 0.05;
    double scale_lo = 0.5;
    double scale_hi = 1.1;
    std::uint64_t seed = 0;
};

void train_backtranslator(BackTranslator& bt, const Corpus& corpus,
                          const BackTransTrainConfig& cfg, std::ostream* log = nullptr);

// Fraction of the given samples whose clean sign decodes to the exact token
// sequence.
double backtranslator_exact_accuracy(const BackTranslator& bt, const Corpus& corpus,
                                     const std::vector<std::size_t>& sample_ids);

} // namespace signflow
