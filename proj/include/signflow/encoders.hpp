#pragma once

#include <cstdint>
#include <vector>

#include "signflow/nn.hpp"
#include "signflow/tensor.hpp"

namespace signflow {

struct TextTokens {
    std::vector<std::size_t> ids;
    std::size_t vocab_size = 0;

    void validate() const;
};

struct AudioFeatureSeq {
    std::size_t feat_dim = 0;
    double frame_rate = 25.0;
    std::vector<double> frames; // row-major, frames x feat_dim

    std::size_t frame_count() const { return feat_dim ? frames.size() / feat_dim : 0; }
};

struct FeatureConfig {
    std::size_t text_feat_dim = 64;
    std::size_t audio_feat_dim = 16;
    std::size_t frames_per_token = 4;
    double audio_jitter = 0.05;
};

// Deterministic unit vector for a 64-bit key. Component i is a Box-Muller
// normal drawn from mix64(key + 2i) and mix64(key + 2i + 1), the vector is
// then L2-normalized. Tests re-derive this recipe independently.
void hash_unit_vector(std::uint64_t key, std::size_t dim, double* out);

std::uint64_t text_feature_key(std::size_t token_id, std::uint64_t seed);
std::uint64_t audio_base_key(std::size_t token_id, std::uint64_t seed);

// Per-token pseudo-random unit feature vectors, bit-reproducible in (tokens, seed).
// Rows are tokens, row width is text_feat_dim.
std::vector<double> extract_text_features(const TextTokens& t, std::uint64_t seed,
                                          const FeatureConfig& cfg);

// Block-structured synthetic speech: frames_per_token frames per token, each a
// token base vector plus seeded jitter.
AudioFeatureSeq extract_audio_features(const TextTokens& t, std::uint64_t seed,
                                       const FeatureConfig& cfg);

// Sinusoidal table, rows are positions.
std::vector<double> positional_encoding(std::size_t length, std::size_t dim);

// Shared shape of the content encoders: input projection, attention blocks,
// mean pooling, output MLP. The raw (unnormalized) embedding is returned;
// callers take l2_normalize() for the joint-space view.
struct EncoderStack {
    Linear input_proj;
    std::vector<AttentionBlock> blocks;
    Mlp out_mlp;
    bool use_pe = true;
    std::size_t d_model = 0;

    EncoderStack() = default;
    EncoderStack(ParamStore& ps, const std::string& name, std::size_t in_dim, std::size_t d_model,
                 std::size_t heads, std::size_t blocks, std::size_t mlp_hidden,
                 std::size_t embed_dim, bool use_pe, Rng& rng);

    TensorPtr encode(const TensorPtr& feats) const; // [L, in_dim] -> [embed_dim]
};

// Diffusion-step encoder: learned row per step, projected by an MLP.
struct StepEncoder {
    TensorPtr table; // [max_step + 1, d_model]
    Mlp out_mlp;

    StepEncoder() = default;
    StepEncoder(ParamStore& ps, const std::string& name, std::size_t max_step,
                std::size_t d_model, std::size_t mlp_hidden, std::size_t embed_dim, Rng& rng);

    TensorPtr encode(std::size_t h) const;
};

} // namespace signflow
