#include "signflow/encoders.hpp"

#include <cmath>

namespace signflow {

namespace {

constexpr std::uint64_t kTextSalt = 0x7465787466656174ull;  // "textfeat"
constexpr std::uint64_t kAudioSalt = 0x6175646962617365ull; // "audibase"
constexpr std::uint64_t kJitterSalt = 0x6175646a69747472ull;

double unit_from_u64(std::uint64_t u) {
    return (static_cast<double>(u >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
}

double normal_from(std::uint64_t a, std::uint64_t b) {
    const double u1 = unit_from_u64(a);
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
}

} // namespace

void TextTokens::validate() const {
    if (ids.empty()) throw ContractError("TextTokens: empty token list");
    for (std::size_t id : ids)
        if (id >= vocab_size)
            throw ContractError("TextTokens: id " + std::to_string(id) + " >= vocab_size " +
                                std::to_string(vocab_size));
}

void hash_unit_vector(std::uint64_t key, std::size_t dim, double* out) {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        out[i] = normal_from(mix64(key + 2 * i), mix64(key + 2 * i + 1));
        norm2 += out[i] * out[i];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < dim; ++i) out[i] *= inv;
}

std::uint64_t text_feature_key(std::size_t token_id, std::uint64_t seed) {
    return mix64(mix64(seed ^ kTextSalt) ^ (token_id + 1));
}

std::uint64_t audio_base_key(std::size_t token_id, std::uint64_t seed) {
    return mix64(mix64(seed ^ kAudioSalt) ^ (token_id + 1));
}

std::vector<double> extract_text_features(const TextTokens& t, std::uint64_t seed,
                                          const FeatureConfig& cfg) {
    t.validate();
    std::vector<double> out(t.ids.size() * cfg.text_feat_dim);
    for (std::size_t i = 0; i < t.ids.size(); ++i)
        hash_unit_vector(text_feature_key(t.ids[i], seed), cfg.text_feat_dim,
                         out.data() + i * cfg.text_feat_dim);
    return out;
}

AudioFeatureSeq extract_audio_features(const TextTokens& t, std::uint64_t seed,
                                       const FeatureConfig& cfg) {
    t.validate();
    AudioFeatureSeq seq;
    seq.feat_dim = cfg.audio_feat_dim;
    seq.frames.resize(t.ids.size() * cfg.frames_per_token * cfg.audio_feat_dim);
    std::vector<double> base(cfg.audio_feat_dim);
    std::size_t frame = 0;
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
        hash_unit_vector(audio_base_key(t.ids[i], seed), cfg.audio_feat_dim, base.data());
        for (std::size_t p = 0; p < cfg.frames_per_token; ++p, ++frame) {
            double* row = seq.frames.data() + frame * cfg.audio_feat_dim;
            const std::uint64_t jk = mix64(mix64(seed ^ kJitterSalt) ^ (frame + 1));
            for (std::size_t d = 0; d < cfg.audio_feat_dim; ++d) {
                const double jitter =
                    cfg.audio_jitter == 0.0
                        ? 0.0
                        : cfg.audio_jitter * normal_from(mix64(jk + 2 * d), mix64(jk + 2 * d + 1));
                row[d] = base[d] + jitter;
            }
        }
    }
    return seq;
}

std::vector<double> positional_encoding(std::size_t length, std::size_t dim) {
    if (dim % 2 != 0)
        throw ContractError("positional_encoding: dim must be even, got " + std::to_string(dim));
    std::vector<double> pe(length * dim);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double rate = std::pow(10000.0, (2.0 * static_cast<double>(i)) /
                                                      static_cast<double>(dim));
            const double angle = static_cast<double>(pos) / rate;
            pe[pos * dim + 2 * i] = std::sin(angle);
            pe[pos * dim + 2 * i + 1] = std::cos(angle);
        }
    }
    return pe;
}

EncoderStack::EncoderStack(ParamStore& ps, const std::string& name, std::size_t in_dim,
                           std::size_t dm, std::size_t heads, std::size_t nblocks,
                           std::size_t mlp_hidden, std::size_t embed_dim, bool pe, Rng& rng)
    : input_proj(ps, name + ".in", in_dim, dm, rng),
      out_mlp(ps, name + ".out", dm, mlp_hidden, embed_dim, rng),
      use_pe(pe),
      d_model(dm) {
    blocks.reserve(nblocks);
    for (std::size_t i = 0; i < nblocks; ++i)
        blocks.emplace_back(ps, name + ".blk" + std::to_string(i), dm, heads, mlp_hidden, rng);
}

TensorPtr EncoderStack::encode(const TensorPtr& feats) const {
    if (feats->shape.size() != 2 || feats->shape[0] == 0)
        throw ContractError("EncoderStack::encode: non-empty rank-2 features required, got " +
                            shape_str(feats->shape));
    if (feats->shape[1] != input_proj.in_dim())
        throw ContractError("EncoderStack::encode: feature width " +
                            std::to_string(feats->shape[1]) + " does not match configured " +
                            std::to_string(input_proj.in_dim()));
    for (double v : feats->data)
        if (!std::isfinite(v))
            throw ContractError("EncoderStack::encode: non-finite input coordinate");
    const std::size_t len = feats->shape[0];
    // content is scaled up against the unit-amplitude positional table
    TensorPtr x = scale(input_proj.forward(feats), std::sqrt(static_cast<double>(d_model)));
    if (use_pe) x = add(x, make_tensor({len, d_model}, positional_encoding(len, d_model)));
    for (const auto& blk : blocks) x = blk.forward(x, nullptr);
    TensorPtr pooled = reshape(mean_rows(x), {1, d_model});
    return reshape(out_mlp.forward(pooled), {out_mlp.fc2.w->shape[1]});
}

StepEncoder::StepEncoder(ParamStore& ps, const std::string& name, std::size_t max_step,
                         std::size_t d_model, std::size_t mlp_hidden, std::size_t embed_dim,
                         Rng& rng) {
    table = ps.create(name + ".table", {max_step + 1, d_model}, rng, 0.5);
    out_mlp = Mlp(ps, name + ".out", d_model, mlp_hidden, embed_dim, rng);
}

TensorPtr StepEncoder::encode(std::size_t h) const {
    if (h >= table->shape[0])
        throw ContractError("StepEncoder::encode: step " + std::to_string(h) +
                            " out of range [0," + std::to_string(table->shape[0] - 1) + "]");
    TensorPtr row = slice_rows(table, h, h + 1);
    return reshape(out_mlp.forward(row), {out_mlp.fc2.w->shape[1]});
}

} // namespace signflow
